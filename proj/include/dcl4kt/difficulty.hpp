#pragma once

#include "dcl4kt/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string_view>

namespace dcl4kt {

enum class ItemKind { Question, Concept };
enum class View { Positive, Negative };
enum class DifficultySource { CTT, TextModel, Constant };

std::string_view to_string(ItemKind k);
std::string_view to_string(DifficultySource s);

inline constexpr int kMaxBin = 100;

/// round(d * 100) with halves rounded up. Throws InputError outside [0,1].
int quantize(double d);
inline double dequantize(int bin) { return bin / 100.0; }

/// Hard negative of a difficulty or response value: 1 - d.
inline double hard_negative(double d) { return 1.0 - d; }
inline int negative_bin(int bin) { return kMaxBin - bin; }

/// Source of difficulties for items without a stored value.
class UnseenPredictor {
 public:
  virtual ~UnseenPredictor() = default;
  virtual std::optional<double> predict(ItemKind kind, int index) const = 0;
};

/// Per-item difficulty in [0,1]. Following classical test theory the value is
/// the fraction of correct responses, so a larger value means an easier item.
struct DifficultyTable {
  std::map<int, double> question_diff;
  std::map<int, double> concept_diff;
  double fallback_positive = 0.75;
  double fallback_negative = 0.25;
  DifficultySource source = DifficultySource::CTT;
  /// Consulted before the constant fallback when set.
  std::shared_ptr<const UnseenPredictor> predictor;

  const std::map<int, double>& values(ItemKind kind) const {
    return kind == ItemKind::Question ? question_diff : concept_diff;
  }
  std::map<int, double>& values(ItemKind kind) {
    return kind == ItemKind::Question ? question_diff : concept_diff;
  }
  std::optional<double> stored(ItemKind kind, int index) const;

  /// Fallbacks mirror each other under the hard-negative map.
  bool symmetric() const { return std::abs(fallback_positive + fallback_negative - 1.0) < 1e-12; }

  /// Throws InputError if any value or fallback leaves [0,1].
  void validate() const;
};

struct CttOptions {
  /// Additive smoothing: (correct + a) / (attempts + 2a). Zero disables.
  double laplace = 0.0;
};

/// Correct-rate per question and per concept, counted over `train` only.
/// Items never attempted are left out of the table.
DifficultyTable compute_ctt(const Dataset& train, const CttOptions& opts = {});

/// Stored value (or its hard negative), else predictor output, else the
/// fallback for the requested view.
double lookup(const DifficultyTable& table, int item, ItemKind kind, View view);

/// Embedding bin for an item. Known items reflect in the quantized domain
/// (bin -> 100 - bin) so the negative view is an exact involution.
int lookup_bin(const DifficultyTable& table, int item, ItemKind kind, View view);

/// CSV with columns item_id, kind, value.
void write_table(const std::filesystem::path& path, const DifficultyTable& table, const Vocab& questions,
                 const Vocab& concepts);
DifficultyTable read_table(const std::filesystem::path& path, const Vocab& questions, const Vocab& concepts);

}  // namespace dcl4kt
