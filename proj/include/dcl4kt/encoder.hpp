#pragma once

#include "dcl4kt/autodiff.hpp"
#include "dcl4kt/dataset.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dcl4kt {

class Config;

struct ModelConfig {
  int embed_dim = 512;
  int num_heads = 8;
  int layers_per_encoder = 4;
  /// Encoder instances when untied (one per role, reused modulo the count).
  int num_encoders = 4;
  int max_len = 100;
  int conv_kernel_size = 9;
  int ffn_multiplier = 4;
  double dropout = 0.1;
  double monotonic_decay = 0.1;
  /// One encoder instance per role instead of a single shared stack.
  bool untied_encoders = false;
  /// Separate tables for the hard-negative difficulty/response embeddings
  /// instead of index-reflected lookups into the positive tables.
  bool separate_negative_tables = false;
  /// Embedding rows (vocab table_rows()).
  int question_rows = 3;
  int concept_rows = 3;

  int head_dim() const { return embed_dim / num_heads; }
  int attention_heads() const { return num_heads - num_heads / 2; }
  int conv_heads() const { return num_heads / 2; }

  /// Throws InputError on inconsistent values.
  void validate() const;
  static ModelConfig from_config(const Config& cfg, ModelConfig base);
  static ModelConfig from_config(const Config& cfg) { return from_config(cfg, ModelConfig()); }
};

// Embedding row layout shared by the positive and negative views.
inline constexpr int kDifficultyRows = 102;  // padding + bins 0..100
inline constexpr int kResponsePad = 0;
inline constexpr int kResponseStart = 3;     // no previous response
inline constexpr int kResponseRows = 4;      // padding, incorrect, correct, start

/// Row of a difficulty table for `bin` (0 is the padding row).
inline int difficulty_row(int bin, bool valid) { return valid ? bin + 1 : 0; }

/// Response row seen at position t. The response channel is shifted by one
/// step so the prediction at t never sees r_t: position 0 gets the start
/// token and position t > 0 gets r_{t-1} (flipped in the negative view).
int response_row(const SequenceBatch& b, Eigen::Index row, Eigen::Index t, bool negative);

struct EmbeddingTables {
  ad::Var question;             // [question_rows, d]
  ad::Var kc;                   // [concept_rows, d]
  ad::Var question_difficulty;  // [102, d]
  ad::Var concept_difficulty;   // [102, d]
  ad::Var response;             // [4, d]
  ad::Var position;             // [max_len, d]
  // Only with separate_negative_tables.
  ad::Var neg_question_difficulty;
  ad::Var neg_concept_difficulty;
  ad::Var neg_response;
};

/// E_q + E_c + E_qd + E_cd + E_r + E_p, one row per (sequence, position).
/// Result is [batch * max_len, d]. Throws InputError on out-of-range indices.
ad::Var embed_positive(const SequenceBatch& batch, const EmbeddingTables& tables);
/// Same as embed_positive with the hard-negative difficulty bins and flipped
/// responses.
ad::Var embed_negative(const SequenceBatch& batch, const EmbeddingTables& tables);

/// Post-norm transformer layer whose token mixer splits heads between
/// monotonic attention and span dynamic convolution.
class EncoderLayer {
 public:
  EncoderLayer(ad::ParameterSet& params, const std::string& prefix, int dim, int attention_heads, int conv_heads,
               int kernel_size, int ffn_dim, double decay_init, Rng& rng);

  /// x is [batch * len, dim]; valid is [batch, len]. `dropout_rng` null or
  /// p == 0 disables dropout.
  ad::Var forward(const ad::Var& x, const MatrixXi& valid, bool causal, double dropout, Rng* dropout_rng) const;

  /// Current decay per attention head (softplus of the raw parameter).
  ad::Var decay() const;

 private:
  int dim_, attention_heads_, conv_heads_;
  ad::Var wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  ad::Var decay_raw_;
  ad::Var depthwise_, generator_, generator_bias_;
  ad::Var ln1_gamma_, ln1_beta_, w1_, b1_, w2_, b2_, ln2_gamma_, ln2_beta_;
};

struct EncoderStack {
  std::vector<EncoderLayer> layers;
  ad::Var head_w, head_b;
};

/// Graph-level encoder result: hidden [batch * len, d], probs [batch * len, 1].
struct EncodedVars {
  ad::Var hidden;
  ad::Var probs;
};

/// Plain-matrix encoder result.
struct EncoderOutput {
  Eigen::MatrixXd hidden;  // [batch * max_len, d]
  Eigen::MatrixXd probs;   // [batch, max_len]
};

/// Which of the four encoder invocations a forward pass serves.
enum class Role { Bce = 0, View1 = 1, View2 = 2, Negative = 3 };

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  // Parameters are shared handles; copying would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Parameter values, for snapshot/restore of the best checkpoint.
  std::vector<Eigen::MatrixXd> snapshot() const;
  void restore(const std::vector<Eigen::MatrixXd>& values);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }
  const EmbeddingTables& tables() const { return tables_; }

  const EncoderStack& encoder_for(Role role) const;

  /// Runs the encoder stack for `role`. Throws DivergenceError naming the
  /// layer if an activation becomes non-finite.
  EncodedVars encode(const ad::Var& embedded, const MatrixXi& valid, Role role, Rng* dropout_rng) const;

  /// Projection heads producing the concept- and question-level latents.
  ad::Var concept_latent(const ad::Var& pooled) const { return ad::matmul(pooled, concept_proj_); }
  ad::Var question_latent(const ad::Var& pooled) const { return ad::matmul(pooled, question_proj_); }

  /// Inference on the prediction encoder (no graph, no dropout).
  EncoderOutput predict(const SequenceBatch& batch) const;

 private:
  ModelConfig cfg_;
  ad::ParameterSet params_;
  EmbeddingTables tables_;
  std::vector<EncoderStack> encoders_;
  ad::Var concept_proj_, question_proj_;
};

/// Free-function form of Model::encode returning plain matrices.
EncoderOutput encoder_forward(const Model& model, const ad::Var& embedded, const MatrixXi& valid,
                              Role role = Role::Bce);

inline constexpr const char* kCheckpointFormat = "dcl4kt-checkpoint/1";

/// Self-describing JSON checkpoint: format tag, model config, named arrays.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dcl4kt
