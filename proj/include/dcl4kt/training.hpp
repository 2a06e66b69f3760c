#pragma once

#include "dcl4kt/augmentation.hpp"
#include "dcl4kt/encoder.hpp"
#include "dcl4kt/metrics.hpp"

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcl4kt {

class Config;

struct TrainingConfig {
  double lambda_c = 0.1;
  double learning_rate = 0.001;
  int batch_size = 512;
  int early_stop_patience = 10;
  int max_epochs = 100;
  int grad_accum_steps = 1;
  double temperature = 0.1;
  std::uint64_t seed = 0;
  /// Run the augmentation pipeline for the two positive views.
  bool augment = false;
  /// Only the hard-negative view serves as negative (no in-batch negatives).
  bool hard_negative_only = false;
  /// Skip the contrastive forward passes entirely.
  bool bce_only = false;

  void validate() const;
  static TrainingConfig from_config(const Config& cfg, TrainingConfig base);
  static TrainingConfig from_config(const Config& cfg) { return from_config(cfg, TrainingConfig()); }
};

// --- losses on plain values -------------------------------------------------

/// Masked mean binary cross entropy; probabilities clamped by 1e-7.
double bce_loss(const Eigen::MatrixXd& probs, const MatrixXi& responses, const MatrixXi& mask);

/// Concept- and question-level latents of the three contrastive views.
struct ContrastiveViews {
  Eigen::MatrixXd cz_view1, cz_view2, cz_negative;
  Eigen::MatrixXd qz_view1, qz_view2, qz_negative;
};

/// Mean over the concatenated per-sequence concept and question InfoNCE
/// losses. Negatives: the hard-negative view plus, when `in_batch`, the
/// other sequences' second views.
double contrastive_loss(const ContrastiveViews& views, double temperature, bool in_batch = true);

/// (1 - lambda) * bce + lambda * cl.
inline double total_loss(double bce, double cl, double lambda_c) { return (1.0 - lambda_c) * bce + lambda_c * cl; }
ad::Var total_loss(const ad::Var& bce, const ad::Var& cl, double lambda_c);

// --- training -----------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double bce = 0;
  double cl = 0;
  double valid_auc = 0;
  double valid_rmse = 0;
};

struct StepLosses {
  double total = 0;
  double bce = 0;
  double cl = 0;
};

/// Counter behind early stopping: stop once `patience` consecutive epochs
/// fail to beat the best score.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Records an epoch score; returns true when training should stop.
  bool update(double score);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  bool improved_ = false;
  double best_ = -1;
};

struct TrainingObserver {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called once with the first training batch and both augmented views.
  std::function<void(std::span<const Sequence>, const AugmentedBatch&, const AugmentedBatch&)> on_first_augmented;
};

struct TrainingResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_valid_auc = 0;
  bool stopped_early = false;
  bool diverged = false;
  std::string divergence_message;
  std::uint64_t train_augment_calls = 0;
  /// Pipeline invocations while computing validation metrics (always 0).
  std::uint64_t eval_augment_calls = 0;
};

/// Everything a training step needs besides the model.
class Trainer {
 public:
  Trainer(Model& model, const DifficultyTable& table, const Dataset& vocab_source, TrainingConfig tcfg,
          AugmentationConfig acfg);

  /// Forward + backward for one batch of windows; gradients accumulate into
  /// the model parameters. `step` keys the dropout and augmentation streams.
  StepLosses accumulate(std::span<const Sequence> windows, std::uint64_t step);
  /// Adam update from accumulated gradients averaged over `micro_batches`.
  void apply(int micro_batches);

  const AugmentationPipeline& pipeline() const { return pipeline_; }
  const TrainingConfig& config() const { return tcfg_; }
  TrainingObserver* observer = nullptr;

 private:
  Model& model_;
  const DifficultyTable& table_;
  TrainingConfig tcfg_;
  ReplacementIndex replacement_;
  AugmentationPipeline pipeline_;
  ad::Adam adam_;
  bool reported_augmented_ = false;
};

/// Trains with early stopping on validation AUC and leaves the model at the
/// best-validation parameters. Divergence stops training and is reported in
/// the result rather than thrown.
TrainingResult train(Model& model, const DataSplit& split, const DifficultyTable& table, const TrainingConfig& tcfg,
                     const AugmentationConfig& acfg, TrainingObserver* observer = nullptr);

/// Pooled predictions over every valid position; never augments.
std::vector<PredictionRecord<double>> predict_records(const Model& model, const Dataset& data,
                                                      const DifficultyTable& table, int batch_size);
/// AUC and RMSE of pooled predictions. AUC is NaN when undefined.
MetricSummary evaluate(const Model& model, const Dataset& data, const DifficultyTable& table, int batch_size);

// --- cross-validation ----------------------------------------------------------

/// Student indices per fold: shuffle with `seed`, then deal round-robin.
std::vector<std::vector<std::size_t>> kfold_assignments(std::size_t students, int k, std::uint64_t seed);

struct FoldResult {
  int fold = 0;
  std::map<std::string, double> metrics;
};

struct CvResult {
  std::vector<FoldResult> folds;
  std::map<std::string, double> mean;
  /// Sample standard deviation (0 for a single fold).
  std::map<std::string, double> stddev;
};

using FoldRunner = std::function<std::map<std::string, double>(const DataSplit& split, int fold)>;

/// Each fold serves once as the test set; validation is carved from the
/// remaining students with `valid_of_train`.
CvResult k_fold_cv(const Dataset& data, int k, std::uint64_t seed, const FoldRunner& runner,
                   double valid_of_train = 0.1);

/// mean and sample std of a list.
std::pair<double, double> mean_std(std::span<const double> values);

}  // namespace dcl4kt
