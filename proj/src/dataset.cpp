#include "dcl4kt/dataset.hpp"

#include "dcl4kt/csv.hpp"
#include "dcl4kt/difficulty.hpp"
#include "dcl4kt/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dcl4kt {

Vocab::Vocab() : ids_{"<pad>"} {}

int Vocab::add(const std::string& id) {
  auto [it, inserted] = index_.try_emplace(id, static_cast<int>(ids_.size()));
  if (inserted) ids_.push_back(id);
  return it->second;
}

int Vocab::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? unk() : it->second;
}

const std::string& Vocab::id(int index) const {
  static const std::string unk_name = "<unk>";
  static const std::string mask_name = "<mask>";
  if (index == unk()) return unk_name;
  if (index == mask()) return mask_name;
  return ids_.at(static_cast<std::size_t>(index));
}

std::size_t Dataset::interaction_count() const {
  std::size_t n = 0;
  for (const auto& s : students) n += s.steps.size();
  return n;
}

Dataset Dataset::with_students(std::vector<StudentSequence> s) const {
  Dataset d = *this;
  d.students = std::move(s);
  d.dropped_rows = 0;
  return d;
}

Dataset build_dataset(std::span<const Interaction> rows, const FixedVocab* fixed) {
  std::shared_ptr<Vocab> qv, cv;
  std::shared_ptr<std::vector<int>> qc;
  if (!fixed) {
    qv = std::make_shared<Vocab>();
    cv = std::make_shared<Vocab>();
    qc = std::make_shared<std::vector<int>>(1, 0);
  }

  struct Row {
    std::size_t order;
    std::int64_t ts;
    Step step;
  };
  std::vector<std::string> student_order;
  std::unordered_map<std::string, std::vector<Row>> groups;
  bool any_ts = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    Step s;
    if (fixed) {
      s.question = fixed->questions->find(r.question_id);
      s.kc = fixed->concepts->find(r.concept_id);
    } else {
      s.question = qv->add(r.question_id);
      s.kc = cv->add(r.concept_id);
      if (static_cast<std::size_t>(s.question) >= qc->size()) qc->push_back(s.kc);
    }
    s.response = r.response;
    any_ts = any_ts || r.timestamp.has_value();
    auto [it, inserted] = groups.try_emplace(r.student_id);
    if (inserted) student_order.push_back(r.student_id);
    it->second.push_back({i, r.timestamp.value_or(0), s});
  }

  Dataset d;
  std::sort(student_order.begin(), student_order.end());
  for (const auto& sid : student_order) {
    auto& g = groups[sid];
    std::stable_sort(g.begin(), g.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    StudentSequence seq;
    seq.student_id = sid;
    for (const auto& r : g) {
      seq.steps.push_back(r.step);
      seq.timestamps.push_back(any_ts ? r.ts : static_cast<std::int64_t>(r.order));
    }
    d.students.push_back(std::move(seq));
  }
  if (fixed) {
    d.questions = fixed->questions;
    d.concepts = fixed->concepts;
    d.question_concept = fixed->question_concept;
  } else {
    d.questions = qv;
    d.concepts = cv;
    d.question_concept = qc;
  }
  return d;
}

namespace {

std::string first_concept(const std::string& cell, const std::string& sep) {
  if (sep.empty()) return cell;
  auto pos = cell.find(sep);
  return pos == std::string::npos ? cell : cell.substr(0, pos);
}

std::optional<int> parse_response(const std::string& v) {
  if (v == "1" || v == "1.0") return 1;
  if (v == "0" || v == "0.0") return 0;
  return std::nullopt;
}

}  // namespace

Dataset load_interactions(const std::filesystem::path& path, const ColumnMapping& columns, const FixedVocab* fixed) {
  char delim = columns.delimiter ? columns.delimiter : csv::delimiter_for(path);
  auto table = csv::read(path, delim);

  std::vector<std::string> missing;
  auto need = [&](const std::string& name) {
    auto c = table.column(name);
    if (!c) missing.push_back(name);
    return c.value_or(0);
  };
  auto c_student = need(columns.student);
  auto c_question = need(columns.question);
  auto c_concept = need(columns.kc);
  auto c_response = need(columns.response);
  if (!missing.empty()) {
    std::string msg = path.string() + ": missing column(s):";
    for (const auto& m : missing) msg += " " + m;
    msg += "; found:";
    for (const auto& h : table.header) msg += " " + h;
    throw InputError(msg);
  }
  auto c_ts = table.column(columns.timestamp);

  std::vector<Interaction> rows;
  std::size_t dropped = 0;
  for (const auto& rec : table.rows) {
    auto field = [&](std::size_t c) -> const std::string& {
      static const std::string empty;
      return c < rec.size() ? rec[c] : empty;
    };
    Interaction it;
    it.student_id = field(c_student);
    it.question_id = field(c_question);
    it.concept_id = first_concept(field(c_concept), columns.concept_separator);
    auto resp = parse_response(field(c_response));
    if (it.student_id.empty() || it.question_id.empty() || it.concept_id.empty() || !resp) {
      ++dropped;
      continue;
    }
    it.response = *resp;
    if (c_ts && !field(*c_ts).empty()) {
      try {
        it.timestamp = std::stoll(field(*c_ts));
      } catch (const std::exception&) {
        ++dropped;
        continue;
      }
    }
    rows.push_back(std::move(it));
  }
  if (rows.empty()) throw EmptyDatasetError(path.string() + ": no valid interaction rows");
  auto d = build_dataset(rows, fixed);
  d.dropped_rows = dropped;
  return d;
}

TextMap load_texts(const std::filesystem::path& path) {
  auto table = csv::read(path, csv::delimiter_for(path));
  auto c_id = table.column("id");
  auto c_text = table.column("text");
  if (!c_id || !c_text) throw InputError(path.string() + ": expected columns id,text");
  TextMap out;
  for (const auto& rec : table.rows) {
    if (*c_id >= rec.size() || rec[*c_id].empty()) continue;
    out[rec[*c_id]] = *c_text < rec.size() ? rec[*c_text] : std::string{};
  }
  return out;
}

DataSplit split_dataset(const Dataset& d, const SplitRatio& ratio, std::uint64_t seed) {
  auto bad = [](double f) { return !(f >= 0.0 && f <= 1.0); };
  if (bad(ratio.train) || bad(ratio.valid_of_train) || bad(ratio.test) ||
      std::abs(ratio.train + ratio.test - 1.0) > 1e-9)
    throw InputError("split ratio must satisfy train + test = 1 with fractions in [0,1]");

  const std::size_t n = d.students.size();
  std::size_t splits = 1 + (ratio.test > 0) + (ratio.valid_of_train > 0 && ratio.train > 0);
  if (n < splits) throw InputError("need at least " + std::to_string(splits) + " students to split, got " + std::to_string(n));

  // Students are already sorted by id.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derive_rng(seed, {0x5911});
  std::shuffle(order.begin(), order.end(), rng);

  auto count = [](double frac, std::size_t total) {
    if (frac <= 0) return std::size_t{0};
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(total))));
  };
  std::size_t n_test = std::min(count(ratio.test, n), n - 1);
  std::size_t pool = n - n_test;
  std::size_t n_valid = std::min(count(ratio.valid_of_train, pool), pool - 1);

  std::vector<StudentSequence> tr, va, te;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = d.students[order[i]];
    if (i < n_test)
      te.push_back(s);
    else if (i < n_test + n_valid)
      va.push_back(s);
    else
      tr.push_back(s);
  }
  auto by_id = [](const StudentSequence& a, const StudentSequence& b) { return a.student_id < b.student_id; };
  std::sort(tr.begin(), tr.end(), by_id);
  std::sort(va.begin(), va.end(), by_id);
  std::sort(te.begin(), te.end(), by_id);
  return {d.with_students(std::move(tr)), d.with_students(std::move(va)), d.with_students(std::move(te)), ratio};
}

std::vector<Sequence> make_windows(const Dataset& d, int max_len) {
  if (max_len < 1) throw InputError("max_len must be >= 1");
  std::vector<Sequence> out;
  for (const auto& s : d.students) {
    for (std::size_t start = 0; start < s.steps.size(); start += static_cast<std::size_t>(max_len)) {
      auto end = std::min(s.steps.size(), start + static_cast<std::size_t>(max_len));
      out.emplace_back(s.steps.begin() + static_cast<std::ptrdiff_t>(start),
                       s.steps.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return out;
}

SequenceBatch assemble_batch(std::span<const Sequence> sequences, const DifficultyTable& diff, int max_len) {
  const auto rows = static_cast<Eigen::Index>(sequences.size());
  SequenceBatch b;
  for (auto* m : {&b.questions, &b.concepts, &b.responses, &b.q_difficulty_bins, &b.c_difficulty_bins,
                  &b.q_negative_bins, &b.c_negative_bins, &b.valid_mask})
    m->setZero(rows, max_len);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& seq = sequences[static_cast<std::size_t>(i)];
    if (seq.size() > static_cast<std::size_t>(max_len))
      throw InputError("sequence longer than max_len (" + std::to_string(seq.size()) + ")");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto& s = seq[t];
      auto j = static_cast<Eigen::Index>(t);
      b.questions(i, j) = s.question;
      b.concepts(i, j) = s.kc;
      b.responses(i, j) = s.response;
      b.q_difficulty_bins(i, j) = lookup_bin(diff, s.question, ItemKind::Question, View::Positive);
      b.c_difficulty_bins(i, j) = lookup_bin(diff, s.kc, ItemKind::Concept, View::Positive);
      b.q_negative_bins(i, j) = lookup_bin(diff, s.question, ItemKind::Question, View::Negative);
      b.c_negative_bins(i, j) = lookup_bin(diff, s.kc, ItemKind::Concept, View::Negative);
      b.valid_mask(i, j) = 1;
    }
  }
  return b;
}

std::vector<SequenceBatch> make_batches(const Dataset& d, const DifficultyTable& diff, int max_len, int batch_size) {
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  auto windows = make_windows(d, max_len);
  std::vector<SequenceBatch> out;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    auto n = std::min(windows.size() - start, static_cast<std::size_t>(batch_size));
    out.push_back(assemble_batch(std::span<const Sequence>(windows).subspan(start, n), diff, max_len));
  }
  return out;
}

Sequence batch_row(const SequenceBatch& b, Eigen::Index row) {
  Sequence out;
  for (Eigen::Index t = 0; t < b.max_len(); ++t)
    if (b.valid_mask(row, t)) out.push_back({b.questions(row, t), b.concepts(row, t), b.responses(row, t)});
  return out;
}

void write_interactions(const std::filesystem::path& path, const Dataset& d) {
  csv::Writer w(path);
  w.row({"user_id", "question_id", "concept_id", "response", "timestamp"});
  for (const auto& s : d.students)
    for (std::size_t t = 0; t < s.steps.size(); ++t) {
      const auto& st = s.steps[t];
      w.row({s.student_id, d.questions->id(st.question), d.concepts->id(st.kc), std::to_string(st.response),
             std::to_string(s.timestamps[t])});
    }
}

void write_vocabs(const std::filesystem::path& dir, const Dataset& d) {
  {
    csv::Writer w(dir / "vocab_questions.csv");
    w.row({"index", "question_id", "concept_id"});
    for (int i = 1; i <= d.questions->live_size(); ++i) {
      int c = static_cast<std::size_t>(i) < d.question_concept->size() ? (*d.question_concept)[i] : 0;
      w.row({std::to_string(i), d.questions->id(i), c > 0 ? d.concepts->id(c) : std::string{}});
    }
  }
  csv::Writer w(dir / "vocab_concepts.csv");
  w.row({"index", "concept_id"});
  for (int i = 1; i <= d.concepts->live_size(); ++i) w.row({std::to_string(i), d.concepts->id(i)});
}

FixedVocab read_vocabs(const std::filesystem::path& dir) {
  auto qt = csv::read(dir / "vocab_questions.csv");
  auto ct = csv::read(dir / "vocab_concepts.csv");
  auto cv = std::make_shared<Vocab>();
  for (const auto& r : ct.rows) cv->add(r.at(1));
  auto qv = std::make_shared<Vocab>();
  auto qc = std::make_shared<std::vector<int>>(1, 0);
  for (const auto& r : qt.rows) {
    qv->add(r.at(1));
    qc->push_back(r.size() > 2 && !r[2].empty() ? cv->find(r[2]) : 0);
  }
  return {qv, cv, qc};
}

}  // namespace dcl4kt
