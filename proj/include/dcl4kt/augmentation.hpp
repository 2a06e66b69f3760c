#pragma once

#include "dcl4kt/dataset.hpp"
#include "dcl4kt/difficulty.hpp"
#include "dcl4kt/random.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace dcl4kt {

class Config;

/// Strategies in the fixed order the pipeline applies them.
enum class Strategy : int {
  Cutoff = 0,
  SpanCutoff,
  Mask,
  Crop,
  Summarize,
  Reverse,
  Permute,
  SegmentPermute,
  ReplaceHigher,
  ReplaceLower,
  Concat,
};
inline constexpr std::size_t kStrategyCount = 11;
std::string_view to_string(Strategy s);
/// Config-key stem, e.g. "segment_permute".
std::string_view key_of(Strategy s);

enum class CutoffMode { Token, Span };
enum class MaskTarget { Question, Concept };
enum class PermuteMode { Element, Segment };
enum class Direction { Higher, Lower };

struct AugmentationConfig {
  /// Per-sequence application probability, indexed by Strategy.
  std::array<double, kStrategyCount> prob{};

  // Strength of each strategy once it fires.
  double mask_rate = 0.15;
  double crop_keep = 0.7;
  double summarize_keep = 0.7;
  double cutoff_rate = 0.1;
  double span_cutoff_rate = 0.1;
  int segment_len = 10;
  double replace_rate = 0.3;
  int max_len = 100;
  std::uint64_t rng_seed = 0;

  double& operator[](Strategy s) { return prob[static_cast<std::size_t>(s)]; }
  double operator[](Strategy s) const { return prob[static_cast<std::size_t>(s)]; }
  bool any() const;

  /// Throws InputError on out-of-range values or when both cutoff variants
  /// are enabled.
  void validate() const;

  /// Probabilities used with augmentation enabled in the main experiments.
  static AugmentationConfig training_defaults();
  /// The tuned mixture used for the best augmented result.
  static AugmentationConfig mixed();
  /// Reads `<key>_prob` and strength keys, starting from `base`.
  static AugmentationConfig from_config(const Config& cfg, AugmentationConfig base);
  static AugmentationConfig from_config(const Config& cfg) { return from_config(cfg, AugmentationConfig()); }
};

/// Preconditions for difficulty-based replacement: candidate questions sorted
/// by difficulty and the concept each question belongs to.
class ReplacementIndex {
 public:
  ReplacementIndex() = default;
  ReplacementIndex(const DifficultyTable& table, std::vector<int> question_concept);

  /// Uniform candidate with strictly higher / lower difficulty, if any.
  std::optional<int> pick(int question, Direction dir, Rng& rng) const;
  int concept_of(int question) const;
  double difficulty(int question) const;

 private:
  const DifficultyTable* table_ = nullptr;
  std::vector<std::pair<double, int>> sorted_;
  std::vector<int> question_concept_;
};

// Individual strategies. All of them return at least one element for a
// non-empty input; a strategy that would empty the sequence keeps one
// uniformly chosen element instead.
Sequence cutoff(const Sequence& seq, CutoffMode mode, double rate, Rng& rng);
Sequence mask_items(const Sequence& seq, MaskTarget target, double mask_rate, int mask_index, Rng& rng);
Sequence crop(const Sequence& seq, double keep_rate, Rng& rng);
Sequence summarize(const Sequence& seq, double keep_rate, Rng& rng);
Sequence reverse(const Sequence& seq);
Sequence permute(const Sequence& seq, PermuteMode mode, int segment_len, Rng& rng);
Sequence replace_by_difficulty(const Sequence& seq, Direction dir, double rate, const ReplacementIndex& index,
                               Rng& rng);
/// `a` then `b`, keeping the most recent `max_len` steps.
Sequence concat_sequences(const Sequence& a, const Sequence& b, int max_len);

/// Number of elements kept for a keep-rate: ceil(rate * len), at least 1.
std::size_t kept_length(double keep_rate, std::size_t len);

enum class Mode { Train, Eval };

struct AugmentedBatch {
  std::vector<Sequence> sequences;
  /// fired[i][s]: strategy s was applied to sequence i.
  std::vector<std::array<bool, kStrategyCount>> fired;
};

struct AugmentContext {
  const ReplacementIndex* replacement = nullptr;
  int question_mask = 0;
  int concept_mask = 0;
};

/// Applies every strategy independently with its configured probability, in
/// Strategy order. Randomness comes from per-sequence streams derived from
/// (cfg.rng_seed, stream, sequence index), so results do not depend on batch
/// processing order. In Eval mode the input is returned untouched.
AugmentedBatch apply_pipeline(std::span<const Sequence> batch, const AugmentationConfig& cfg,
                              const AugmentContext& ctx, std::uint64_t stream, Mode mode);

/// Counts pipeline invocations per mode; lets callers prove evaluation never
/// routes through augmentation.
class AugmentationPipeline {
 public:
  AugmentationPipeline(AugmentationConfig cfg, AugmentContext ctx) : cfg_(cfg), ctx_(ctx) {}

  AugmentedBatch operator()(std::span<const Sequence> batch, std::uint64_t stream, Mode mode) const;

  const AugmentationConfig& config() const { return cfg_; }
  std::uint64_t train_calls() const { return train_calls_.load(); }
  std::uint64_t eval_calls() const { return eval_calls_.load(); }

 private:
  AugmentationConfig cfg_;
  AugmentContext ctx_;
  mutable std::atomic<std::uint64_t> train_calls_{0};
  mutable std::atomic<std::uint64_t> eval_calls_{0};
};

}  // namespace dcl4kt
