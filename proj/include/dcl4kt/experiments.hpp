#pragma once

#include "dcl4kt/text_difficulty.hpp"
#include "dcl4kt/training.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace dcl4kt {

class Config;

/// Model, optimisation and augmentation settings resolved from one config.
struct ExperimentSettings {
  ModelConfig model;
  TrainingConfig training;
  AugmentationConfig augmentation = AugmentationConfig::training_defaults();
  double fallback_positive = 0.75;
  double fallback_negative = 0.25;

  /// Reads model, training and augmentation keys. `augmentation_preset` is
  /// one of training (default), mixed or none.
  static ExperimentSettings from_config(const Config& cfg);
  /// Sizes the embedding tables for `d`'s vocabularies.
  ExperimentSettings& fit_vocab(const Dataset& d);
};

struct RunOutcome {
  TrainingResult result;
  MetricSummary test;
  std::unique_ptr<Model> model;
};

/// Builds a model seeded with `seed`, trains it and scores the test split.
/// `settings.training.seed` is overridden by `seed`.
RunOutcome run_experiment(const DataSplit& split, const DifficultyTable& table, ExperimentSettings settings,
                          std::uint64_t seed, TrainingObserver* observer = nullptr);

/// Removes every interaction with a random `fraction` of the training
/// questions from the train split, so those questions are unseen at test
/// time. Students left without interactions are dropped.
struct UnseenSplit {
  DataSplit split;
  std::vector<int> removed_questions;
  /// Share of distinct test questions that never occur in train.
  double unseen_test_item_share = 0;
};
UnseenSplit hide_questions_from_train(const DataSplit& split, double fraction, std::uint64_t seed);

// --- ablations -------------------------------------------------------------------

struct ArmResult {
  std::string arm;
  double setting = 0;  // lambda, probability, ...
  std::uint64_t seed = 0;
  double auc = 0;
  double rmse = 0;
  int best_epoch = 0;
  bool diverged = false;
};

struct ArmSummary {
  std::string arm;
  double setting = 0;
  double mean_auc = 0, std_auc = 0;
  double mean_rmse = 0, std_rmse = 0;
  std::size_t runs = 0;
};

std::vector<ArmSummary> summarize(const std::vector<ArmResult>& rows);

void write_results(const std::filesystem::path& path, const std::vector<ArmResult>& rows);
void write_summary(const std::filesystem::path& path, const std::vector<ArmSummary>& rows);

/// Non-Diff-CL uses the positive fallback in both views; Diff-CL reflects it
/// for the hard negative. Both arms share splits, seeds and augmentation.
std::vector<ArmResult> diff_cl_ablation(const DataSplit& split, const ExperimentSettings& settings,
                                        const std::vector<std::uint64_t>& seeds);

std::vector<ArmResult> lambda_sweep(const DataSplit& split, const DifficultyTable& table,
                                    const ExperimentSettings& settings, const std::vector<double>& grid,
                                    const std::vector<std::uint64_t>& seeds);

/// Baseline without augmentation, every strategy alone at each probability,
/// and the mixed preset.
std::vector<ArmResult> augment_sweep(const DataSplit& split, const DifficultyTable& table,
                                     const ExperimentSettings& settings, const std::vector<double>& probabilities,
                                     const std::vector<std::uint64_t>& seeds);

struct DifficultyPredictionResult {
  std::vector<RmseRow> question;
  std::vector<RmseRow> concept_rows;
  FitReport question_fit;
  FitReport concept_fit;
  std::size_t question_holdout = 0;
  std::size_t concept_holdout = 0;
};

/// Items are split into fitted and held-out sets. Fitted labels are training
/// CTT values; held-out items are removed from the train split and labelled
/// with CTT over valid and test, so the model never sees them.
DifficultyPredictionResult difficulty_prediction(const DataSplit& split, const TextModelConfig& cfg,
                                                 double holdout_fraction, std::uint64_t seed);

}  // namespace dcl4kt
