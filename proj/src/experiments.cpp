#include "dcl4kt/experiments.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace dcl4kt {

ExperimentSettings ExperimentSettings::from_config(const Config& cfg) {
  ExperimentSettings s;
  s.model = ModelConfig::from_config(cfg);
  s.training = TrainingConfig::from_config(cfg);
  auto preset = cfg.get_string("augmentation_preset", "training");
  AugmentationConfig base;
  if (preset == "training") base = AugmentationConfig::training_defaults();
  else if (preset == "mixed") base = AugmentationConfig::mixed();
  else if (preset != "none") throw InputError("augmentation_preset must be training, mixed or none");
  s.augmentation = AugmentationConfig::from_config(cfg, base);
  s.fallback_positive = cfg.get_double("fallback_positive", s.fallback_positive);
  s.fallback_negative = cfg.get_double("fallback_negative", s.fallback_negative);
  return s;
}

ExperimentSettings& ExperimentSettings::fit_vocab(const Dataset& d) {
  model.question_rows = d.questions->table_rows();
  model.concept_rows = d.concepts->table_rows();
  return *this;
}

RunOutcome run_experiment(const DataSplit& split, const DifficultyTable& table, ExperimentSettings settings,
                          std::uint64_t seed, TrainingObserver* observer) {
  settings.fit_vocab(split.train);
  settings.training.seed = seed;
  RunOutcome out;
  out.model = std::make_unique<Model>(settings.model, seed);
  out.result = train(*out.model, split, table, settings.training, settings.augmentation, observer);
  out.test = evaluate(*out.model, split.test, table, settings.training.batch_size);
  return out;
}

namespace {

Dataset without(const Dataset& d, const std::set<int>& questions, const std::set<int>& concepts) {
  std::vector<StudentSequence> kept;
  for (const auto& s : d.students) {
    StudentSequence n{s.student_id, {}, {}};
    for (std::size_t t = 0; t < s.steps.size(); ++t) {
      if (questions.count(s.steps[t].question) || concepts.count(s.steps[t].kc)) continue;
      n.steps.push_back(s.steps[t]);
      n.timestamps.push_back(s.timestamps[t]);
    }
    if (!n.steps.empty()) kept.push_back(std::move(n));
  }
  return d.with_students(std::move(kept));
}

template <typename Pick>
std::set<int> items_of(const Dataset& d, Pick pick) {
  std::set<int> out;
  for (const auto& s : d.students)
    for (const auto& st : s.steps) out.insert(pick(st));
  return out;
}

std::set<int> random_subset(const std::set<int>& items, double fraction, std::uint64_t seed, std::uint64_t key) {
  std::vector<int> v(items.begin(), items.end());
  auto rng = derive_rng(seed, {key});
  std::shuffle(v.begin(), v.end(), rng);
  auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(v.size())));
  if (fraction > 0) n = std::clamp<std::size_t>(n, 1, v.size() > 1 ? v.size() - 1 : v.size());
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

UnseenSplit hide_questions_from_train(const DataSplit& split, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction < 1)) throw InputError("unseen fraction must be in [0,1)");
  auto train_q = items_of(split.train, [](const Step& s) { return s.question; });
  auto removed = random_subset(train_q, fraction, seed, 0x0b5e);
  UnseenSplit out{split, {removed.begin(), removed.end()}, 0.0};
  out.split.train = without(split.train, removed, {});
  if (out.split.train.students.empty()) throw EmptyDatasetError("hiding questions emptied the training split");
  auto kept = items_of(out.split.train, [](const Step& s) { return s.question; });
  auto test_q = items_of(split.test, [](const Step& s) { return s.question; });
  std::size_t unseen = 0;
  for (int q : test_q) unseen += kept.count(q) ? 0 : 1;
  out.unseen_test_item_share = test_q.empty() ? 0.0 : static_cast<double>(unseen) / static_cast<double>(test_q.size());
  return out;
}

std::vector<ArmSummary> summarize(const std::vector<ArmResult>& rows) {
  std::vector<ArmSummary> out;
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& r : rows)
    if (std::find(keys.begin(), keys.end(), std::make_pair(r.arm, r.setting)) == keys.end())
      keys.emplace_back(r.arm, r.setting);
  for (const auto& [arm, setting] : keys) {
    std::vector<double> aucs, rmses;
    for (const auto& r : rows)
      if (r.arm == arm && r.setting == setting) {
        aucs.push_back(r.auc);
        rmses.push_back(r.rmse);
      }
    ArmSummary s{arm, setting};
    std::tie(s.mean_auc, s.std_auc) = mean_std(aucs);
    std::tie(s.mean_rmse, s.std_rmse) = mean_std(rmses);
    s.runs = aucs.size();
    out.push_back(s);
  }
  return out;
}

void write_results(const std::filesystem::path& path, const std::vector<ArmResult>& rows) {
  csv::Writer w(path);
  w.row({"arm", "setting", "seed", "test_auc", "test_rmse", "best_epoch", "diverged"});
  for (const auto& r : rows)
    w.row({r.arm, csv::format_double(r.setting), std::to_string(r.seed), csv::format_double(r.auc),
           csv::format_double(r.rmse), std::to_string(r.best_epoch), r.diverged ? "1" : "0"});
}

void write_summary(const std::filesystem::path& path, const std::vector<ArmSummary>& rows) {
  csv::Writer w(path);
  w.row({"arm", "setting", "mean_auc", "std_auc", "mean_rmse", "std_rmse", "runs"});
  for (const auto& s : rows)
    w.row({s.arm, csv::format_double(s.setting), csv::format_double(s.mean_auc), csv::format_double(s.std_auc),
           csv::format_double(s.mean_rmse), csv::format_double(s.std_rmse), std::to_string(s.runs)});
}

namespace {

ArmResult run_arm(const std::string& arm, double setting, const DataSplit& split, const DifficultyTable& table,
                  const ExperimentSettings& settings, std::uint64_t seed) {
  auto o = run_experiment(split, table, settings, seed);
  return {arm, setting, seed, o.test.auc, o.test.rmse, o.result.best_epoch, o.result.diverged};
}

}  // namespace

std::vector<ArmResult> diff_cl_ablation(const DataSplit& split, const ExperimentSettings& settings,
                                        const std::vector<std::uint64_t>& seeds) {
  DifficultyTable diff = compute_ctt(split.train);
  diff.fallback_positive = settings.fallback_positive;
  diff.fallback_negative = settings.fallback_negative;
  DifficultyTable non_diff = diff;
  non_diff.fallback_negative = settings.fallback_positive;
  std::vector<ArmResult> out;
  for (auto seed : seeds) {
    out.push_back(run_arm("non_diff_cl", 0, split, non_diff, settings, seed));
    out.push_back(run_arm("diff_cl", 0, split, diff, settings, seed));
  }
  return out;
}

std::vector<ArmResult> lambda_sweep(const DataSplit& split, const DifficultyTable& table,
                                    const ExperimentSettings& settings, const std::vector<double>& grid,
                                    const std::vector<std::uint64_t>& seeds) {
  std::vector<ArmResult> out;
  for (double lambda : grid) {
    auto s = settings;
    s.training.lambda_c = lambda;
    for (auto seed : seeds) out.push_back(run_arm("lambda", lambda, split, table, s, seed));
  }
  return out;
}

std::vector<ArmResult> augment_sweep(const DataSplit& split, const DifficultyTable& table,
                                     const ExperimentSettings& settings, const std::vector<double>& probabilities,
                                     const std::vector<std::uint64_t>& seeds) {
  std::vector<ArmResult> out;
  auto base = settings;
  base.training.augment = false;
  for (auto seed : seeds) out.push_back(run_arm("baseline", 0, split, table, base, seed));
  for (std::size_t k = 0; k < kStrategyCount; ++k) {
    const auto strategy = static_cast<Strategy>(k);
    for (double p : probabilities) {
      auto s = settings;
      s.training.augment = true;
      s.augmentation.prob.fill(0.0);
      s.augmentation[strategy] = p;
      for (auto seed : seeds) out.push_back(run_arm(std::string(key_of(strategy)), p, split, table, s, seed));
    }
  }
  auto mixed = settings;
  mixed.training.augment = true;
  auto strengths = settings.augmentation;
  mixed.augmentation = AugmentationConfig::mixed();
  mixed.augmentation.mask_rate = strengths.mask_rate;
  mixed.augmentation.crop_keep = strengths.crop_keep;
  mixed.augmentation.summarize_keep = strengths.summarize_keep;
  mixed.augmentation.cutoff_rate = strengths.cutoff_rate;
  mixed.augmentation.span_cutoff_rate = strengths.span_cutoff_rate;
  mixed.augmentation.segment_len = strengths.segment_len;
  mixed.augmentation.replace_rate = strengths.replace_rate;
  for (auto seed : seeds) out.push_back(run_arm("mixed", 0, split, table, mixed, seed));
  return out;
}

DifficultyPredictionResult difficulty_prediction(const DataSplit& split, const TextModelConfig& cfg,
                                                 double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) throw InputError("holdout fraction must be in (0,1)");
  std::vector<StudentSequence> others = split.valid.students;
  others.insert(others.end(), split.test.students.begin(), split.test.students.end());
  const Dataset heldout_data = split.valid.with_students(std::move(others));

  DifficultyPredictionResult out;
  auto run = [&](ItemKind kind, std::uint64_t key, std::vector<RmseRow>& rows, FitReport& fit, std::size_t& n) {
    auto items = kind == ItemKind::Question ? items_of(split.train, [](const Step& s) { return s.question; })
                                            : items_of(split.train, [](const Step& s) { return s.kc; });
    auto hidden = random_subset(items, holdout_fraction, seed, key);
    Dataset train = kind == ItemKind::Question ? without(split.train, hidden, {}) : without(split.train, {}, hidden);
    auto train_table = compute_ctt(train);
    auto heldout_table = compute_ctt(heldout_data);
    const TextInput input = kind == ItemKind::Question ? cfg.input : TextInput::Own;
    auto pairs = difficulty_pairs(train, train_table, kind, Provenance::Train, input);
    std::vector<TextPair> holdout;
    for (auto& p : difficulty_pairs(heldout_data, heldout_table, kind, Provenance::Test, input)) {
      int index = kind == ItemKind::Question ? heldout_data.questions->find(p.id) : heldout_data.concepts->find(p.id);
      if (hidden.count(index)) holdout.push_back(std::move(p));
    }
    if (pairs.empty() || holdout.empty())
      throw InputError(std::string("difficulty prediction needs texts for fitted and held-out ") +
                       std::string(to_string(kind)) + " items");
    auto model = fit_text_model(pairs, cfg, holdout);
    rows = evaluate_difficulty_prediction(&model, holdout);
    fit = model.report();
    n = holdout.size();
  };
  run(ItemKind::Question, 0xd1f1, out.question, out.question_fit, out.question_holdout);
  run(ItemKind::Concept, 0xd1f2, out.concept_rows, out.concept_fit, out.concept_holdout);
  return out;
}

}  // namespace dcl4kt
