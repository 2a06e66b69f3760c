#include "dcl4kt/encoder.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/difficulty.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace dcl4kt {

using ad::Var;
using Eigen::MatrixXd;

void ModelConfig::validate() const {
  if (embed_dim < 1 || num_heads < 1) throw InputError("embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) throw InputError("embed_dim must be divisible by num_heads");
  if (layers_per_encoder < 1 || num_encoders < 1) throw InputError("encoder counts must be positive");
  if (max_len < 1) throw InputError("max_len must be >= 1");
  if (conv_kernel_size < 1 || conv_kernel_size % 2 == 0) throw InputError("conv_kernel_size must be odd");
  if (ffn_multiplier < 1) throw InputError("ffn_multiplier must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must be in [0,1)");
  if (!(monotonic_decay > 0.0)) throw InputError("monotonic_decay must be > 0");
  if (question_rows < 3 || concept_rows < 3) throw InputError("vocabulary sizes missing");
}

ModelConfig ModelConfig::from_config(const Config& cfg, ModelConfig m) {
  m.embed_dim = static_cast<int>(cfg.get_int("embed_dim", m.embed_dim));
  m.num_heads = static_cast<int>(cfg.get_int("num_heads", m.num_heads));
  m.layers_per_encoder = static_cast<int>(cfg.get_int("layers_per_encoder", m.layers_per_encoder));
  m.num_encoders = static_cast<int>(cfg.get_int("num_encoders", m.num_encoders));
  m.max_len = static_cast<int>(cfg.get_int("max_len", m.max_len));
  m.conv_kernel_size = static_cast<int>(cfg.get_int("conv_kernel_size", m.conv_kernel_size));
  m.ffn_multiplier = static_cast<int>(cfg.get_int("ffn_multiplier", m.ffn_multiplier));
  m.dropout = cfg.get_double("dropout", m.dropout);
  m.monotonic_decay = cfg.get_double("monotonic_decay", m.monotonic_decay);
  m.untied_encoders = cfg.get_bool("untied_encoders", m.untied_encoders);
  m.separate_negative_tables = cfg.get_bool("separate_negative_tables", m.separate_negative_tables);
  return m;
}

int response_row(const SequenceBatch& b, Eigen::Index row, Eigen::Index t, bool negative) {
  if (!b.valid_mask(row, t)) return kResponsePad;
  if (t == 0) return kResponseStart;
  int r = b.responses(row, t - 1);
  if (negative) r = 1 - r;
  return r + 1;
}

namespace {

struct Indices {
  std::vector<int> q, c, qd, cd, r, p;
};

Indices gather_indices(const SequenceBatch& b, bool negative) {
  Indices ix;
  const auto n = static_cast<std::size_t>(b.batch_size() * b.max_len());
  for (auto* v : {&ix.q, &ix.c, &ix.qd, &ix.cd, &ix.r, &ix.p}) v->reserve(n);
  const auto& qbins = negative ? b.q_negative_bins : b.q_difficulty_bins;
  const auto& cbins = negative ? b.c_negative_bins : b.c_difficulty_bins;
  for (Eigen::Index i = 0; i < b.batch_size(); ++i)
    for (Eigen::Index t = 0; t < b.max_len(); ++t) {
      bool valid = b.valid_mask(i, t) != 0;
      ix.q.push_back(b.questions(i, t));
      ix.c.push_back(b.concepts(i, t));
      ix.qd.push_back(difficulty_row(qbins(i, t), valid));
      ix.cd.push_back(difficulty_row(cbins(i, t), valid));
      ix.r.push_back(response_row(b, i, t, negative));
      ix.p.push_back(static_cast<int>(t));
    }
  return ix;
}

Var embed(const SequenceBatch& batch, const EmbeddingTables& t, bool negative) {
  auto ix = gather_indices(batch, negative);
  const bool separate = negative && static_cast<bool>(t.neg_question_difficulty);
  Var out = ad::gather_rows(t.question, ix.q);
  out = ad::add(out, ad::gather_rows(t.kc, ix.c));
  out = ad::add(out, ad::gather_rows(separate ? t.neg_question_difficulty : t.question_difficulty, ix.qd));
  out = ad::add(out, ad::gather_rows(separate ? t.neg_concept_difficulty : t.concept_difficulty, ix.cd));
  out = ad::add(out, ad::gather_rows(separate ? t.neg_response : t.response, ix.r));
  if (batch.max_len() > t.position.rows()) throw InputError("sequence length exceeds the position table");
  out = ad::add(out, ad::gather_rows(t.position, ix.p));
  return out;
}

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace

Var embed_positive(const SequenceBatch& batch, const EmbeddingTables& tables) { return embed(batch, tables, false); }
Var embed_negative(const SequenceBatch& batch, const EmbeddingTables& tables) { return embed(batch, tables, true); }

EncoderLayer::EncoderLayer(ad::ParameterSet& params, const std::string& prefix, int dim, int attention_heads,
                           int conv_heads, int kernel_size, int ffn_dim, double decay_init, Rng& rng)
    : dim_(dim), attention_heads_(attention_heads), conv_heads_(conv_heads) {
  constexpr double sigma = 0.02;
  auto w = [&](const std::string& name, int r, int c) {
    return params.add(prefix + "." + name, ad::truncated_normal(r, c, sigma, rng));
  };
  auto zeros = [&](const std::string& name, int r, int c) { return params.add(prefix + "." + name, MatrixXd::Zero(r, c)); };
  auto ones = [&](const std::string& name, int r, int c) { return params.add(prefix + "." + name, MatrixXd::Ones(r, c)); };
  const int hd = dim / (attention_heads + conv_heads);
  wq_ = w("wq", dim, dim);
  bq_ = zeros("bq", 1, dim);
  wk_ = w("wk", dim, dim);
  bk_ = zeros("bk", 1, dim);
  wv_ = w("wv", dim, dim);
  bv_ = zeros("bv", 1, dim);
  wo_ = w("wo", dim, dim);
  bo_ = zeros("bo", 1, dim);
  if (attention_heads > 0) {
    // softplus^-1 so the effective decay starts at decay_init.
    double raw = decay_init > 30 ? decay_init : std::log(std::expm1(decay_init));
    decay_raw_ = params.add(prefix + ".decay", MatrixXd::Constant(1, attention_heads, raw));
  }
  if (conv_heads > 0) {
    depthwise_ = w("depthwise", kernel_size, conv_heads * hd);
    generator_ = w("generator", conv_heads * hd, kernel_size);
    generator_bias_ = zeros("generator_bias", conv_heads, kernel_size);
  }
  ln1_gamma_ = ones("ln1_gamma", 1, dim);
  ln1_beta_ = zeros("ln1_beta", 1, dim);
  w1_ = w("w1", dim, ffn_dim);
  b1_ = zeros("b1", 1, ffn_dim);
  w2_ = w("w2", ffn_dim, dim);
  b2_ = zeros("b2", 1, dim);
  ln2_gamma_ = ones("ln2_gamma", 1, dim);
  ln2_beta_ = zeros("ln2_beta", 1, dim);
}

Var EncoderLayer::decay() const { return ad::softplus(decay_raw_); }

Var EncoderLayer::forward(const Var& x, const MatrixXi& valid, bool causal, double dropout, Rng* rng) const {
  const int hd = dim_ / (attention_heads_ + conv_heads_);
  const int attn_width = attention_heads_ * hd;
  const int conv_width = conv_heads_ * hd;
  Var q = ad::linear(x, wq_, bq_);
  Var k = ad::linear(x, wk_, bk_);
  Var v = ad::linear(x, wv_, bv_);
  Var mixed;
  if (attention_heads_ > 0)
    mixed = ad::monotonic_attention(q, k, v, decay(), valid, attention_heads_, 0, attn_width, causal);
  if (conv_heads_ > 0) {
    Var conv = ad::span_dynamic_conv(q, k, v, depthwise_, generator_, generator_bias_, valid.rows(), conv_heads_,
                                     attn_width, conv_width);
    mixed = mixed ? ad::concat_cols(mixed, conv) : conv;
  }
  auto drop = [&](const Var& t) { return rng && dropout > 0 ? ad::dropout(t, dropout, *rng) : t; };
  Var h = ad::layer_norm(ad::add(x, drop(ad::linear(mixed, wo_, bo_))), ln1_gamma_, ln1_beta_);
  Var f = ad::linear(ad::gelu(ad::linear(h, w1_, b1_)), w2_, b2_);
  return ad::layer_norm(ad::add(h, drop(f)), ln2_gamma_, ln2_beta_);
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto rng = derive_rng(seed, {0x30de1});
  const int d = cfg_.embed_dim;
  auto table = [&](const std::string& name, int rows, bool pad_row) {
    return params_.add("embed." + name, ad::truncated_normal(rows, d, 0.02, rng),
                       pad_row ? std::vector<int>{0} : std::vector<int>{});
  };
  tables_.question = table("question", cfg_.question_rows, true);
  tables_.kc = table("concept", cfg_.concept_rows, true);
  tables_.question_difficulty = table("question_difficulty", kDifficultyRows, true);
  tables_.concept_difficulty = table("concept_difficulty", kDifficultyRows, true);
  tables_.response = table("response", kResponseRows, true);
  tables_.position = table("position", cfg_.max_len, false);
  if (cfg_.separate_negative_tables) {
    tables_.neg_question_difficulty = table("neg_question_difficulty", kDifficultyRows, true);
    tables_.neg_concept_difficulty = table("neg_concept_difficulty", kDifficultyRows, true);
    tables_.neg_response = table("neg_response", kResponseRows, true);
  }
  const int stacks = cfg_.untied_encoders ? cfg_.num_encoders : 1;
  for (int e = 0; e < stacks; ++e) {
    EncoderStack st;
    for (int l = 0; l < cfg_.layers_per_encoder; ++l)
      st.layers.emplace_back(params_, "encoder" + std::to_string(e) + ".layer" + std::to_string(l), d,
                             cfg_.attention_heads(), cfg_.conv_heads(), cfg_.conv_kernel_size,
                             cfg_.ffn_multiplier * d, cfg_.monotonic_decay, rng);
    st.head_w = params_.add("encoder" + std::to_string(e) + ".head_w", ad::truncated_normal(d, 1, 0.02, rng));
    st.head_b = params_.add("encoder" + std::to_string(e) + ".head_b", MatrixXd::Zero(1, 1));
    encoders_.push_back(std::move(st));
  }
  concept_proj_ = params_.add("proj.concept", ad::truncated_normal(d, d, 0.02, rng) + MatrixXd::Identity(d, d));
  question_proj_ = params_.add("proj.question", ad::truncated_normal(d, d, 0.02, rng) + MatrixXd::Identity(d, d));
}

const EncoderStack& Model::encoder_for(Role role) const {
  return encoders_[static_cast<std::size_t>(static_cast<int>(role)) % encoders_.size()];
}

EncodedVars Model::encode(const Var& embedded, const MatrixXi& valid, Role role, Rng* dropout_rng) const {
  const auto& st = encoder_for(role);
  Var h = embedded;
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    h = st.layers[l].forward(h, valid, true, cfg_.dropout, dropout_rng);
    if (!all_finite(h.value())) throw DivergenceError("non-finite activation in encoder layer " + std::to_string(l));
  }
  Var probs = ad::sigmoid(ad::linear(h, st.head_w, st.head_b));
  return {h, probs};
}

EncoderOutput encoder_forward(const Model& model, const Var& embedded, const MatrixXi& valid, Role role) {
  ad::NoGradGuard guard;
  auto enc = model.encode(embedded, valid, role, nullptr);
  EncoderOutput out;
  out.hidden = enc.hidden.value();
  out.probs.resize(valid.rows(), valid.cols());
  for (Eigen::Index b = 0; b < valid.rows(); ++b)
    for (Eigen::Index t = 0; t < valid.cols(); ++t) out.probs(b, t) = enc.probs.value()(b * valid.cols() + t, 0);
  return out;
}

EncoderOutput Model::predict(const SequenceBatch& batch) const {
  ad::NoGradGuard guard;
  return encoder_forward(*this, embed_positive(batch, tables_), batch.valid_mask, Role::Bce);
}

std::vector<MatrixXd> Model::snapshot() const {
  std::vector<MatrixXd> out;
  for (const auto& p : params_.params()) out.push_back(p.var.value());
  return out;
}

void Model::restore(const std::vector<MatrixXd>& values) {
  auto& ps = params_.params();
  if (values.size() != ps.size()) throw InputError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].var.mutable_value() = values[i];
}

namespace {

nlohmann::json config_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},
          {"layers_per_encoder", c.layers_per_encoder},
          {"num_encoders", c.num_encoders},
          {"max_len", c.max_len},
          {"conv_kernel_size", c.conv_kernel_size},
          {"ffn_multiplier", c.ffn_multiplier},
          {"dropout", c.dropout},
          {"monotonic_decay", c.monotonic_decay},
          {"untied_encoders", c.untied_encoders},
          {"separate_negative_tables", c.separate_negative_tables}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["model_config"] = config_json(model.config());
  j["vocab"] = {{"question_rows", model.config().question_rows}, {"concept_rows", model.config().concept_rows}};
  auto& arr = j["parameters"] = nlohmann::json::array();
  for (const auto& p : model.parameters().params()) {
    const auto& v = p.var.value();
    std::vector<double> data(static_cast<std::size_t>(v.size()));
    // Row-major so the file reads naturally.
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) data[static_cast<std::size_t>(r * v.cols() + c)] = v(r, c);
    arr.push_back({{"name", p.name}, {"rows", v.rows()}, {"cols", v.cols()}, {"data", std::move(data)}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw InputError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat)
    throw InputError("unsupported checkpoint format in " + path.string());
  const auto& c = j.at("model_config");
  ModelConfig cfg;
  cfg.embed_dim = c.at("embed_dim");
  cfg.num_heads = c.at("num_heads");
  cfg.layers_per_encoder = c.at("layers_per_encoder");
  cfg.num_encoders = c.at("num_encoders");
  cfg.max_len = c.at("max_len");
  cfg.conv_kernel_size = c.at("conv_kernel_size");
  cfg.ffn_multiplier = c.at("ffn_multiplier");
  cfg.dropout = c.at("dropout");
  cfg.monotonic_decay = c.at("monotonic_decay");
  cfg.untied_encoders = c.at("untied_encoders");
  cfg.separate_negative_tables = c.at("separate_negative_tables");
  cfg.question_rows = j.at("vocab").at("question_rows");
  cfg.concept_rows = j.at("vocab").at("concept_rows");
  Model model(cfg, 0);
  std::vector<MatrixXd> values;
  const auto& arr = j.at("parameters");
  if (arr.size() != model.parameters().params().size()) throw InputError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& p = arr[i];
    const auto& expect = model.parameters().params()[i];
    if (p.at("name") != expect.name) throw InputError("checkpoint parameter order mismatch at " + expect.name);
    Eigen::Index rows = p.at("rows"), cols = p.at("cols");
    if (rows != expect.var.rows() || cols != expect.var.cols()) throw InputError("shape mismatch for " + expect.name);
    auto data = p.at("data").get<std::vector<double>>();
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index cc = 0; cc < cols; ++cc) m(r, cc) = data[static_cast<std::size_t>(r * cols + cc)];
    values.push_back(std::move(m));
  }
  model.restore(values);
  return model;
}

}  // namespace dcl4kt
