#include "dcl4kt/text_difficulty.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace dcl4kt {

using ad::Var;
using Eigen::MatrixXd;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Train: return "train";
    case Provenance::Valid: return "valid";
    case Provenance::Test: return "test";
  }
  return "?";
}

void ByteTokenizer::fit(std::span<const std::string> texts) {
  if (frozen_) throw Error("tokenizer is frozen");
  std::array<bool, 256> seen{};
  for (const auto& t : texts)
    for (unsigned char c : t) seen[c] = true;
  int next = 2;
  for (int b = 0; b < 256; ++b) ids_[static_cast<std::size_t>(b)] = seen[static_cast<std::size_t>(b)] ? next++ : 0;
  size_ = next;
  frozen_ = true;
}

void ByteTokenizer::restore(const std::array<int, 256>& ids) {
  ids_ = ids;
  size_ = 2 + static_cast<int>(std::count_if(ids.begin(), ids.end(), [](int v) { return v != 0; }));
  frozen_ = true;
}

std::vector<int> ByteTokenizer::encode(std::string_view text, std::size_t max_tokens) const {
  std::vector<int> out;
  for (unsigned char c : text) {
    if (out.size() >= max_tokens) break;
    int id = ids_[c];
    out.push_back(id ? id : kUnk);
  }
  if (out.empty()) out.push_back(kUnk);
  return out;
}

void TextModelConfig::validate() const {
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) throw InputError("text model: embed_dim must be a multiple of heads");
  if (layers < 0 || max_tokens < 1 || epochs < 1 || batch_size < 1) throw InputError("text model: sizes must be positive");
  if (!(learning_rate > 0)) throw InputError("text model: learning_rate must be > 0");
}

TextModelConfig TextModelConfig::from_config(const Config& cfg, TextModelConfig t) {
  t.embed_dim = static_cast<int>(cfg.get_int("text_embed_dim", t.embed_dim));
  t.heads = static_cast<int>(cfg.get_int("text_heads", t.heads));
  t.layers = static_cast<int>(cfg.get_int("text_layers", t.layers));
  t.max_tokens = static_cast<int>(cfg.get_int("text_max_tokens", t.max_tokens));
  t.epochs = static_cast<int>(cfg.get_int("text_epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.get_int("text_batch_size", t.batch_size));
  t.learning_rate = cfg.get_double("text_learning_rate", t.learning_rate);
  auto input = cfg.get_string("text_input", t.input == TextInput::Joint ? "joint" : "own");
  if (input == "joint") t.input = TextInput::Joint;
  else if (input == "own") t.input = TextInput::Own;
  else throw InputError("text_input must be 'joint' or 'own'");
  t.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(t.seed)));
  t.validate();
  return t;
}

TextDiffModel::TextDiffModel(TextModelConfig cfg, ByteTokenizer tokenizer)
    : cfg_(cfg), tokenizer_(std::move(tokenizer)) {
  cfg_.validate();
  auto rng = derive_rng(cfg_.seed, {0x7e47});
  const int d = cfg_.embed_dim;
  token_ = params_.add("text.token", ad::truncated_normal(tokenizer_.vocab_size(), d, 0.1, rng), {ByteTokenizer::kPad});
  position_ = params_.add("text.position", ad::truncated_normal(cfg_.max_tokens, d, 0.1, rng));
  for (int l = 0; l < cfg_.layers; ++l)
    layers_.emplace_back(params_, "text.layer" + std::to_string(l), d, cfg_.heads, 0, 1, 2 * d, cfg_.decay_init, rng);
  head_w_ = params_.add("text.head_w", ad::truncated_normal(d, 1, 0.02, rng));
  head_b_ = params_.add("text.head_b", MatrixXd::Zero(1, 1));
}

Var TextDiffModel::forward(std::span<const std::string> texts) const {
  const auto n = static_cast<Eigen::Index>(texts.size());
  std::vector<std::vector<int>> ids;
  std::size_t len = 1;
  for (const auto& t : texts) {
    ids.push_back(tokenizer_.encode(t, static_cast<std::size_t>(cfg_.max_tokens)));
    len = std::max(len, ids.back().size());
  }
  const auto L = static_cast<Eigen::Index>(len);
  MatrixXi valid = MatrixXi::Zero(n, L);
  std::vector<int> tok(static_cast<std::size_t>(n * L), ByteTokenizer::kPad), pos(tok.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < L; ++t) {
      auto k = static_cast<std::size_t>(i * L + t);
      pos[k] = static_cast<int>(t);
      if (static_cast<std::size_t>(t) < ids[static_cast<std::size_t>(i)].size()) {
        tok[k] = ids[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
        valid(i, t) = 1;
      }
    }
  Var x = ad::add(ad::gather_rows(token_, tok), ad::gather_rows(position_, pos));
  for (const auto& layer : layers_) x = layer.forward(x, valid, false, 0.0, nullptr);
  return ad::sigmoid(ad::linear(ad::masked_mean(x, valid), head_w_, head_b_));
}

std::vector<double> TextDiffModel::predict(std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  ad::NoGradGuard guard;
  const MatrixXd v = forward(texts).value();
  return {v.data(), v.data() + v.size()};
}

double TextDiffModel::predict(std::string_view text) const {
  std::string s(text);
  return predict(std::span<const std::string>(&s, 1)).front();
}

namespace {

double rmse100(const std::vector<double>& pred, std::span<const TextPair> pairs) {
  if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) s += (pred[i] - pairs[i].difficulty) * (pred[i] - pairs[i].difficulty);
  return 100.0 * std::sqrt(s / static_cast<double>(pairs.size()));
}

std::vector<std::string> texts_of(std::span<const TextPair> pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.text);
  return out;
}

}  // namespace

TextDiffModel fit_text_model(std::span<const TextPair> pairs, const TextModelConfig& cfg,
                             std::span<const TextPair> holdout) {
  if (pairs.empty()) throw InputError("no text/difficulty pairs to fit");
  for (const auto& p : pairs) {
    if (p.provenance != Provenance::Train)
      throw InputError("text model may only be fitted on training-split pairs (got " + std::string(to_string(p.provenance)) +
                       " for '" + p.id + "')");
    if (!(p.difficulty >= 0 && p.difficulty <= 1)) throw InputError("difficulty labels must lie in [0,1]");
  }
  auto texts = texts_of(pairs);
  ByteTokenizer tok;
  tok.fit(texts);
  TextDiffModel model(cfg, std::move(tok));

  // Start the head at the label mean.
  double mean = 0;
  for (const auto& p : pairs) mean += p.difficulty;
  mean = std::clamp(mean / static_cast<double>(pairs.size()), 1e-3, 1 - 1e-3);
  model.parameters().find("text.head_b")->var.node()->value(0, 0) = std::log(mean / (1 - mean));

  ad::Adam adam(ad::AdamOptions{cfg.learning_rate});
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto rng = derive_rng(cfg.seed, {0x7e48, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::string> batch;
      const std::size_t end = std::min(order.size(), start + bs);
      MatrixXd target(static_cast<Eigen::Index>(end - start), 1);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(pairs[order[i]].text);
        target(static_cast<Eigen::Index>(i - start), 0) = pairs[order[i]].difficulty;
      }
      Var loss = ad::mse_loss(model.forward(batch), target);
      if (!std::isfinite(loss.scalar())) throw DivergenceError("non-finite text model loss");
      total += loss.scalar() * static_cast<double>(end - start);
      ad::backward(loss);
      adam.step(model.parameters());
      model.parameters().zero_grad();
    }
    model.report().loss_history.push_back(total / static_cast<double>(pairs.size()));
  }
  model.report().train_rmse = rmse100(model.predict(texts), pairs);
  if (!holdout.empty()) model.report().holdout_rmse = rmse100(model.predict(texts_of(holdout)), holdout);
  return model;
}

double predict_difficulty(const TextRegressor& model, std::string_view text) { return model.predict(text); }

std::string item_text(const Dataset& d, int index, ItemKind kind, TextInput input) {
  auto find = [](const std::shared_ptr<const TextMap>& texts, const std::string& id) -> const std::string* {
    if (!texts) return nullptr;
    auto it = texts->find(id);
    return it == texts->end() ? nullptr : &it->second;
  };
  if (kind == ItemKind::Concept) {
    auto* t = find(d.concept_texts, d.concepts->id(index));
    return t ? *t : std::string();
  }
  auto* q = find(d.question_texts, d.questions->id(index));
  if (!q) return {};
  if (input == TextInput::Own) return *q;
  const auto& qc = *d.question_concept;
  int c = static_cast<std::size_t>(index) < qc.size() ? qc[static_cast<std::size_t>(index)] : 0;
  auto* ct = c > 0 ? find(d.concept_texts, d.concepts->id(c)) : nullptr;
  return ct ? *q + " | " + *ct : *q;
}

std::vector<TextPair> difficulty_pairs(const Dataset& d, const DifficultyTable& table, ItemKind kind,
                                       Provenance provenance, TextInput input) {
  std::vector<TextPair> out;
  const auto& values = kind == ItemKind::Question ? table.question_diff : table.concept_diff;
  const Vocab& vocab = kind == ItemKind::Question ? *d.questions : *d.concepts;
  for (const auto& [index, value] : values) {
    auto text = item_text(d, index, kind, input);
    if (text.empty()) continue;
    out.push_back({std::move(text), value, provenance, vocab.id(index)});
  }
  return out;
}

DifficultyTable fill_unseen(const DifficultyTable& table, const TextRegressor* question_model,
                            const TextRegressor* concept_model, TextInput question_input, const DataSplit& split,
                            FillStats* stats) {
  std::set<int> train_q, train_c, other_q, other_c;
  for (const auto& s : split.train.students)
    for (const auto& st : s.steps) {
      train_q.insert(st.question);
      train_c.insert(st.kc);
    }
  for (const Dataset* d : {&split.valid, &split.test})
    for (const auto& s : d->students)
      for (const auto& st : s.steps) {
        other_q.insert(st.question);
        other_c.insert(st.kc);
      }
  DifficultyTable out = table;
  out.source = DifficultySource::TextModel;
  FillStats local;
  auto fill = [&](const std::set<int>& seen, const std::set<int>& candidates, ItemKind kind, const TextRegressor* m,
                  std::size_t& counter) {
    auto& values = kind == ItemKind::Question ? out.question_diff : out.concept_diff;
    for (int item : candidates) {
      if (seen.count(item) || item <= 0) continue;
      auto text = item_text(split.train, item, kind, kind == ItemKind::Question ? question_input : TextInput::Own);
      if (!m || text.empty()) {
        ++local.without_text;
        continue;
      }
      values[item] = std::clamp(m->predict(text), 0.0, 1.0);
      ++counter;
    }
  };
  fill(train_q, other_q, ItemKind::Question, question_model, local.predicted_questions);
  fill(train_c, other_c, ItemKind::Concept, concept_model, local.predicted_concepts);
  if (stats) *stats = local;
  return out;
}

std::vector<RmseRow> evaluate_difficulty_prediction(const TextRegressor* model, std::span<const TextPair> heldout,
                                                    std::span<const double> constants) {
  if (heldout.empty()) throw InputError("no held-out pairs to evaluate");
  std::vector<RmseRow> rows;
  if (model) {
    std::vector<double> pred;
    for (const auto& p : heldout) pred.push_back(model->predict(p.text));
    rows.push_back({"text_model", rmse100(pred, heldout)});
  }
  for (double c : constants) {
    std::vector<double> pred(heldout.size(), c);
    rows.push_back({"constant_" + csv::format_double(c), rmse100(pred, heldout)});
  }
  return rows;
}

std::size_t utf8_length(std::string_view text) {
  return static_cast<std::size_t>(
      std::count_if(text.begin(), text.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

LengthReport char_length_analysis(const Dataset& d, std::size_t cap, std::size_t bucket_width) {
  if (bucket_width == 0) throw InputError("bucket width must be positive");
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // question -> (correct, total)
  for (const auto& s : d.students)
    for (const auto& st : s.steps) {
      auto& c = counts[st.question];
      c.first += static_cast<std::size_t>(st.response);
      ++c.second;
    }
  LengthReport report;
  report.cap = cap;
  std::map<std::size_t, std::vector<double>> rates;
  std::map<std::size_t, std::size_t> responses;
  for (const auto& [q, c] : counts) {
    auto text = item_text(d, q, ItemKind::Question, TextInput::Own);
    if (text.empty()) continue;
    auto len = utf8_length(text);
    if (len >= cap) {
      ++report.excluded_items;
      continue;
    }
    auto b = len / bucket_width;
    rates[b].push_back(static_cast<double>(c.first) / static_cast<double>(c.second));
    responses[b] += c.second;
  }
  for (auto& [b, r] : rates) {
    LengthBucket bucket;
    bucket.lo = b * bucket_width;
    bucket.hi = std::min(cap, (b + 1) * bucket_width);
    bucket.items = r.size();
    bucket.responses = responses[b];
    bucket.mean_correct = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
    std::sort(r.begin(), r.end());
    const auto m = r.size() / 2;
    bucket.median_correct = r.size() % 2 ? r[m] : 0.5 * (r[m - 1] + r[m]);
    report.buckets.push_back(bucket);
  }
  return report;
}

void write_length_report(const std::filesystem::path& path, const LengthReport& report) {
  csv::Writer w(path);
  w.row({"length_lo", "length_hi", "items", "responses", "mean_correct", "median_correct"});
  for (const auto& b : report.buckets)
    w.row({std::to_string(b.lo), std::to_string(b.hi), std::to_string(b.items), std::to_string(b.responses),
           csv::format_double(b.mean_correct), csv::format_double(b.median_correct)});
}

}  // namespace dcl4kt
