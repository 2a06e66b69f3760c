#include "dcl4kt/difficulty.hpp"

#include "dcl4kt/csv.hpp"

#include <cmath>

namespace dcl4kt {

std::string_view to_string(ItemKind k) { return k == ItemKind::Question ? "question" : "concept"; }

std::string_view to_string(DifficultySource s) {
  switch (s) {
    case DifficultySource::CTT:
      return "ctt";
    case DifficultySource::TextModel:
      return "text_model";
    case DifficultySource::Constant:
      return "constant";
  }
  return "unknown";
}

int quantize(double d) {
  if (!(d >= 0.0 && d <= 1.0)) throw InputError("difficulty out of [0,1]: " + std::to_string(d));
  // Nudge by a few ulps so that decimal halves such as 0.005 (stored as
  // 0.00499999...) still round up.
  return static_cast<int>(std::floor(d * 100.0 + 0.5 + 1e-9));
}

std::optional<double> DifficultyTable::stored(ItemKind kind, int index) const {
  const auto& m = values(kind);
  auto it = m.find(index);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

void DifficultyTable::validate() const {
  auto check = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError(std::string(what) + " out of [0,1]");
  };
  check(fallback_positive, "fallback_positive");
  check(fallback_negative, "fallback_negative");
  for (const auto& [k, v] : question_diff) check(v, "question difficulty");
  for (const auto& [k, v] : concept_diff) check(v, "concept difficulty");
}

DifficultyTable compute_ctt(const Dataset& train, const CttOptions& opts) {
  struct Count {
    double correct = 0;
    double total = 0;
  };
  std::map<int, Count> qc, cc;
  for (const auto& s : train.students)
    for (const auto& st : s.steps) {
      auto& q = qc[st.question];
      q.correct += st.response;
      q.total += 1;
      auto& c = cc[st.kc];
      c.correct += st.response;
      c.total += 1;
    }
  DifficultyTable t;
  const double a = opts.laplace;
  for (const auto& [k, n] : qc) t.question_diff[k] = (n.correct + a) / (n.total + 2 * a);
  for (const auto& [k, n] : cc) t.concept_diff[k] = (n.correct + a) / (n.total + 2 * a);
  t.source = DifficultySource::CTT;
  return t;
}

namespace {

std::optional<double> known(const DifficultyTable& table, int item, ItemKind kind) {
  if (auto v = table.stored(kind, item)) return v;
  if (table.predictor) return table.predictor->predict(kind, item);
  return std::nullopt;
}

}  // namespace

double lookup(const DifficultyTable& table, int item, ItemKind kind, View view) {
  if (auto v = known(table, item, kind)) return view == View::Positive ? *v : hard_negative(*v);
  return view == View::Positive ? table.fallback_positive : table.fallback_negative;
}

int lookup_bin(const DifficultyTable& table, int item, ItemKind kind, View view) {
  if (auto v = known(table, item, kind)) {
    int bin = quantize(*v);
    return view == View::Positive ? bin : negative_bin(bin);
  }
  return quantize(view == View::Positive ? table.fallback_positive : table.fallback_negative);
}

void write_table(const std::filesystem::path& path, const DifficultyTable& table, const Vocab& questions,
                 const Vocab& concepts) {
  csv::Writer w(path);
  w.row({"item_id", "kind", "value"});
  for (const auto& [k, v] : table.question_diff) w.row({questions.id(k), "question", csv::format_double(v)});
  for (const auto& [k, v] : table.concept_diff) w.row({concepts.id(k), "concept", csv::format_double(v)});
}

DifficultyTable read_table(const std::filesystem::path& path, const Vocab& questions, const Vocab& concepts) {
  auto t = csv::read(path);
  auto ci = t.column("item_id"), ck = t.column("kind"), cv = t.column("value");
  if (!ci || !ck || !cv) throw InputError(path.string() + ": expected columns item_id,kind,value");
  DifficultyTable out;
  for (const auto& r : t.rows) {
    const auto& kind = r.at(*ck);
    double v = std::stod(r.at(*cv));
    if (kind == "question") {
      if (questions.contains(r.at(*ci))) out.question_diff[questions.find(r.at(*ci))] = v;
    } else if (kind == "concept") {
      if (concepts.contains(r.at(*ci))) out.concept_diff[concepts.find(r.at(*ci))] = v;
    } else {
      throw InputError(path.string() + ": unknown kind '" + kind + "'");
    }
  }
  out.validate();
  return out;
}

}  // namespace dcl4kt
