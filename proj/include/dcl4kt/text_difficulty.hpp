#pragma once

#include "dcl4kt/encoder.hpp"
#include "dcl4kt/difficulty.hpp"

#include <array>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dcl4kt {

class Config;

/// Which split a label was computed from. Only Train pairs may be fitted.
enum class Provenance { Train, Valid, Test };
std::string_view to_string(Provenance p);

struct TextPair {
  std::string text;
  double difficulty = 0;
  Provenance provenance = Provenance::Train;
  std::string id;
};

/// Byte-level vocabulary. Bytes never seen while fitting map to UNK.
class ByteTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  /// Builds the vocabulary and freezes it. Throws Error if already frozen.
  void fit(std::span<const std::string> texts);
  /// Token ids, truncated to `max_tokens`; empty input yields a single UNK.
  std::vector<int> encode(std::string_view text, std::size_t max_tokens) const;

  bool frozen() const { return frozen_; }
  int vocab_size() const { return size_; }
  const std::array<int, 256>& byte_ids() const { return ids_; }
  void restore(const std::array<int, 256>& ids);

 private:
  std::array<int, 256> ids_{};  // 0: unseen
  int size_ = 2;
  bool frozen_ = false;
};

/// How a question item is turned into model input.
enum class TextInput { Own, Joint };

struct TextModelConfig {
  int embed_dim = 32;
  int heads = 2;
  int layers = 1;
  int max_tokens = 128;
  int epochs = 60;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double decay_init = 0.01;
  TextInput input = TextInput::Joint;
  std::uint64_t seed = 0;

  void validate() const;
  static TextModelConfig from_config(const Config& cfg, TextModelConfig base);
  static TextModelConfig from_config(const Config& cfg) { return from_config(cfg, TextModelConfig()); }
};

/// Anything mapping text to a difficulty in [0,1]. A pretrained encoder can
/// be plugged in behind this.
class TextRegressor {
 public:
  virtual ~TextRegressor() = default;
  virtual double predict(std::string_view text) const = 0;
};

struct FitReport {
  /// RMSE on the 0-100 scale.
  double train_rmse = std::numeric_limits<double>::quiet_NaN();
  double holdout_rmse = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> loss_history;
};

/// Token and position embeddings, bidirectional encoder layers, mean pooling
/// and a sigmoid regression head.
class TextDiffModel final : public TextRegressor {
 public:
  TextDiffModel(TextModelConfig cfg, ByteTokenizer tokenizer);
  TextDiffModel(TextDiffModel&&) = default;

  double predict(std::string_view text) const override;
  std::vector<double> predict(std::span<const std::string> texts) const;

  /// Graph-building forward pass; returns [n, 1] predictions.
  ad::Var forward(std::span<const std::string> texts) const;

  const TextModelConfig& config() const { return cfg_; }
  const ByteTokenizer& tokenizer() const { return tokenizer_; }
  ad::ParameterSet& parameters() { return params_; }
  const FitReport& report() const { return report_; }
  FitReport& report() { return report_; }

 private:
  TextModelConfig cfg_;
  ByteTokenizer tokenizer_;
  ad::ParameterSet params_;
  ad::Var token_, position_, head_w_, head_b_;
  std::vector<EncoderLayer> layers_;
  FitReport report_;
};

/// MSE regression on Train-provenance pairs. The tokenizer is built from the
/// fitted texts only. Throws InputError on empty input or non-train pairs.
TextDiffModel fit_text_model(std::span<const TextPair> pairs, const TextModelConfig& cfg,
                             std::span<const TextPair> holdout = {});

double predict_difficulty(const TextRegressor& model, std::string_view text);

/// Model input text for an item; questions use "question | concept" in Joint
/// mode.
std::string item_text(const Dataset& d, int index, ItemKind kind, TextInput input);

/// (text, difficulty) pairs for every item of `kind` with stored difficulty
/// and text, tagged with `provenance`.
std::vector<TextPair> difficulty_pairs(const Dataset& d, const DifficultyTable& table, ItemKind kind,
                                       Provenance provenance, TextInput input);

struct FillStats {
  std::size_t predicted_questions = 0;
  std::size_t predicted_concepts = 0;
  std::size_t without_text = 0;
};

/// Items present in valid/test but absent from train get predicted
/// difficulties; train items keep their values; items without text keep the
/// fallback. Either model may be null.
DifficultyTable fill_unseen(const DifficultyTable& table, const TextRegressor* question_model,
                            const TextRegressor* concept_model, TextInput question_input, const DataSplit& split,
                            FillStats* stats = nullptr);

inline constexpr std::array<double, 2> kDefaultBaselines{0.75, 0.25};

struct RmseRow {
  std::string predictor;
  double rmse = 0;  // 0-100 scale
};

/// RMSE of the model (if given) and of each constant baseline.
std::vector<RmseRow> evaluate_difficulty_prediction(const TextRegressor* model, std::span<const TextPair> heldout,
                                                    std::span<const double> constants = kDefaultBaselines);
/// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view text);

struct LengthBucket {
  std::size_t lo = 0, hi = 0;  // [lo, hi)
  std::size_t items = 0;
  std::size_t responses = 0;
  double mean_correct = 0;
  double median_correct = 0;
};

struct LengthReport {
  std::vector<LengthBucket> buckets;
  std::size_t excluded_items = 0;
  std::size_t cap = 120;
};

/// Per-question correct rate bucketed by question text length. Questions at
/// or beyond `cap` characters are excluded from the buckets.
LengthReport char_length_analysis(const Dataset& d, std::size_t cap = 120, std::size_t bucket_width = 10);

void write_length_report(const std::filesystem::path& path, const LengthReport& report);

}  // namespace dcl4kt
