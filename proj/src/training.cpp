#include "dcl4kt/training.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/kernels.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace dcl4kt {

using ad::Var;
using Eigen::MatrixXd;

void TrainingConfig::validate() const {
  if (!(lambda_c >= 0.0 && lambda_c <= 1.0)) throw InputError("lambda_c must be in [0,1]");
  if (early_stop_patience < 1) throw InputError("early_stop_patience must be >= 1");
  if (batch_size < 1 || grad_accum_steps < 1 || max_epochs < 1) throw InputError("batch/epoch settings must be >= 1");
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
}

TrainingConfig TrainingConfig::from_config(const Config& cfg, TrainingConfig t) {
  t.lambda_c = cfg.get_double("lambda_c", t.lambda_c);
  t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
  t.batch_size = static_cast<int>(cfg.get_int("batch_size", t.batch_size));
  t.early_stop_patience = static_cast<int>(cfg.get_int("early_stop_patience", t.early_stop_patience));
  t.max_epochs = static_cast<int>(cfg.get_int("max_epochs", t.max_epochs));
  t.grad_accum_steps = static_cast<int>(cfg.get_int("grad_accum_steps", t.grad_accum_steps));
  t.temperature = cfg.get_double("temperature", t.temperature);
  t.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(t.seed)));
  t.augment = cfg.get_bool("augment", t.augment);
  t.hard_negative_only = cfg.get_bool("hard_negative_only", t.hard_negative_only);
  t.bce_only = cfg.get_bool("bce_only", t.bce_only);
  t.validate();
  return t;
}

double bce_loss(const MatrixXd& probs, const MatrixXi& responses, const MatrixXi& mask) {
  return kernels::bce<double>(probs, responses, mask);
}

double contrastive_loss(const ContrastiveViews& v, double temperature, bool in_batch) {
  auto c = kernels::info_nce_rows<double>(v.cz_view1, v.cz_view2, v.cz_negative, temperature, in_batch);
  auto q = kernels::info_nce_rows<double>(v.qz_view1, v.qz_view2, v.qz_negative, temperature, in_batch);
  Eigen::VectorXd all(c.losses.size() + q.losses.size());
  all << c.losses, q.losses;
  return all.mean();
}

Var total_loss(const Var& bce, const Var& cl, double lambda_c) {
  return ad::add(ad::scale(bce, 1.0 - lambda_c), ad::scale(cl, lambda_c));
}

bool EarlyStopping::update(double score) {
  ++epoch_;
  improved_ = std::isfinite(score) && (best_epoch_ == 0 || !std::isfinite(best_) || score > best_);
  if (best_epoch_ == 0 && !improved_) {
    // First epoch is the reference even when its score is undefined.
    best_epoch_ = epoch_;
    improved_ = true;
  }
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return false;
  }
  return ++since_best_ >= patience_;
}

namespace {

MatrixXd column_of(const MatrixXi& m) {
  // [batch, len] -> [batch * len, 1] in row-major position order.
  MatrixXd out(m.size(), 1);
  for (Eigen::Index b = 0; b < m.rows(); ++b)
    for (Eigen::Index t = 0; t < m.cols(); ++t) out(b * m.cols() + t, 0) = m(b, t);
  return out;
}

AugmentContext make_context(const ReplacementIndex& idx, const Dataset& d) {
  AugmentContext ctx;
  ctx.replacement = &idx;
  ctx.question_mask = d.questions->mask();
  ctx.concept_mask = d.concepts->mask();
  return ctx;
}

AugmentationConfig effective(const TrainingConfig& t, AugmentationConfig a, int max_len) {
  if (!t.augment) a.prob.fill(0.0);
  a.max_len = max_len;
  a.rng_seed = t.seed;
  a.validate();
  return a;
}

}  // namespace

Trainer::Trainer(Model& model, const DifficultyTable& table, const Dataset& vocab_source, TrainingConfig tcfg,
                 AugmentationConfig acfg)
    : model_(model),
      table_(table),
      tcfg_(tcfg),
      replacement_(table, *vocab_source.question_concept),
      pipeline_(effective(tcfg, acfg, model.config().max_len), make_context(replacement_, vocab_source)),
      adam_(ad::AdamOptions{tcfg.learning_rate}) {
  tcfg_.validate();
}

StepLosses Trainer::accumulate(std::span<const Sequence> windows, std::uint64_t step) {
  const int max_len = model_.config().max_len;
  const auto seed = tcfg_.seed;
  auto base = assemble_batch(windows, table_, max_len);
  auto rng_bce = derive_rng(seed, {step, static_cast<std::uint64_t>(Role::Bce)});
  auto enc = model_.encode(embed_positive(base, model_.tables()), base.valid_mask, Role::Bce, &rng_bce);
  Var bce = ad::bce_loss(enc.probs, column_of(base.responses), column_of(base.valid_mask));

  StepLosses out;
  out.bce = bce.scalar();
  Var total;
  if (tcfg_.bce_only) {
    total = ad::scale(bce, 1.0);
  } else {
    auto view1 = pipeline_(windows, 2 * step + 1, Mode::Train);
    auto view2 = pipeline_(windows, 2 * step + 2, Mode::Train);
    if (observer && observer->on_first_augmented && !reported_augmented_) {
      observer->on_first_augmented(windows, view1, view2);
      reported_augmented_ = true;
    }
    auto b1 = assemble_batch(view1.sequences, table_, max_len);
    auto b2 = assemble_batch(view2.sequences, table_, max_len);
    auto rng1 = derive_rng(seed, {step, static_cast<std::uint64_t>(Role::View1)});
    auto rng2 = derive_rng(seed, {step, static_cast<std::uint64_t>(Role::View2)});
    auto rngn = derive_rng(seed, {step, static_cast<std::uint64_t>(Role::Negative)});
    auto h1 = model_.encode(embed_positive(b1, model_.tables()), b1.valid_mask, Role::View1, &rng1).hidden;
    auto h2 = model_.encode(embed_positive(b2, model_.tables()), b2.valid_mask, Role::View2, &rng2).hidden;
    auto hn = model_.encode(embed_negative(b2, model_.tables()), b2.valid_mask, Role::Negative, &rngn).hidden;
    Var z1 = ad::masked_mean(h1, b1.valid_mask);
    Var z2 = ad::masked_mean(h2, b2.valid_mask);
    Var zn = ad::masked_mean(hn, b2.valid_mask);
    const bool in_batch = !tcfg_.hard_negative_only;
    Var sim_c = ad::info_nce_loss(model_.concept_latent(z1), model_.concept_latent(z2), model_.concept_latent(zn),
                                  tcfg_.temperature, in_batch);
    Var sim_q = ad::info_nce_loss(model_.question_latent(z1), model_.question_latent(z2),
                                  model_.question_latent(zn), tcfg_.temperature, in_batch);
    // Equal batch sizes: the mean of the concatenation is the mean of means.
    Var cl = ad::scale(ad::add(sim_c, sim_q), 0.5);
    out.cl = cl.scalar();
    total = total_loss(bce, cl, tcfg_.lambda_c);
  }
  out.total = total.scalar();
  if (!std::isfinite(out.total)) throw DivergenceError("non-finite loss at step " + std::to_string(step));
  ad::backward(total);
  return out;
}

void Trainer::apply(int micro_batches) {
  adam_.step(model_.parameters(), 1.0 / static_cast<double>(micro_batches));
  model_.parameters().zero_grad();
}

std::vector<PredictionRecord<double>> predict_records(const Model& model, const Dataset& data,
                                                      const DifficultyTable& table, int batch_size) {
  std::vector<PredictionRecord<double>> out;
  for (const auto& b : make_batches(data, table, model.config().max_len, batch_size)) {
    auto pred = model.predict(b);
    append_records<double>(out, pred.probs, b.responses, b.valid_mask);
  }
  return out;
}

MetricSummary evaluate(const Model& model, const Dataset& data, const DifficultyTable& table, int batch_size) {
  auto records = predict_records(model, data, table, batch_size);
  MetricSummary m;
  m.count = records.size();
  m.rmse = rmse(records);
  try {
    m.auc = auc(records);
  } catch (const UndefinedMetricError&) {
    m.auc = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

TrainingResult train(Model& model, const DataSplit& split, const DifficultyTable& table, const TrainingConfig& tcfg,
                     const AugmentationConfig& acfg, TrainingObserver* observer) {
  tcfg.validate();
  Trainer trainer(model, table, split.train, tcfg, acfg);
  trainer.observer = observer;
  auto windows = make_windows(split.train, model.config().max_len);
  if (windows.empty()) throw EmptyDatasetError("training split has no interactions");

  TrainingResult result;
  EarlyStopping stopper(tcfg.early_stop_patience);
  std::vector<MatrixXd> best = model.snapshot();
  std::uint64_t step = 0;
  const auto bs = static_cast<std::size_t>(tcfg.batch_size);

  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    auto rng = derive_rng(tcfg.seed, {0xe90c, static_cast<std::uint64_t>(epoch)});
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double weight = 0;
    int pending = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<Sequence> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(windows[order[i]]);
        auto losses = trainer.accumulate(batch, step++);
        const double w = static_cast<double>(batch.size());
        rec.train_loss += losses.total * w;
        rec.bce += losses.bce * w;
        rec.cl += losses.cl * w;
        weight += w;
        if (++pending == tcfg.grad_accum_steps) {
          trainer.apply(pending);
          pending = 0;
        }
      }
      if (pending > 0) trainer.apply(pending);
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.divergence_message = e.what();
      break;
    }
    rec.train_loss /= weight;
    rec.bce /= weight;
    rec.cl /= weight;

    const auto eval_before = trainer.pipeline().eval_calls() + trainer.pipeline().train_calls();
    MetricSummary m;
    try {
      m = evaluate(model, split.valid.students.empty() ? split.train : split.valid, table, tcfg.batch_size);
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.divergence_message = e.what();
      break;
    }
    result.eval_augment_calls += trainer.pipeline().eval_calls() + trainer.pipeline().train_calls() - eval_before;
    rec.valid_auc = m.auc;
    rec.valid_rmse = m.rmse;
    result.history.push_back(rec);
    if (observer && observer->on_epoch) observer->on_epoch(rec);

    bool stop = stopper.update(rec.valid_auc);
    if (stopper.improved()) best = model.snapshot();
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  model.restore(best);
  result.best_epoch = stopper.best_epoch();
  result.best_valid_auc = stopper.best_score();
  result.train_augment_calls = trainer.pipeline().train_calls();
  return result;
}

std::vector<std::vector<std::size_t>> kfold_assignments(std::size_t students, int k, std::uint64_t seed) {
  if (k < 2) throw InputError("k must be >= 2");
  if (students < static_cast<std::size_t>(k)) throw InputError("fewer students than folds");
  std::vector<std::size_t> order(students);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derive_rng(seed, {0xf01d});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < order.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  double m = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() < 2) return {m, 0.0};
  double s = 0;
  for (double v : values) s += (v - m) * (v - m);
  return {m, std::sqrt(s / static_cast<double>(values.size() - 1))};
}

CvResult k_fold_cv(const Dataset& data, int k, std::uint64_t seed, const FoldRunner& runner, double valid_of_train) {
  auto folds = kfold_assignments(data.students.size(), k, seed);
  CvResult out;
  for (int f = 0; f < k; ++f) {
    std::vector<bool> in_test(data.students.size(), false);
    for (auto i : folds[static_cast<std::size_t>(f)]) in_test[i] = true;
    std::vector<StudentSequence> pool, test;
    for (std::size_t i = 0; i < data.students.size(); ++i) (in_test[i] ? test : pool).push_back(data.students[i]);
    // Validation students come from the pool, chosen with a fold-specific shuffle.
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = derive_rng(seed, {0xa11d, static_cast<std::uint64_t>(f)});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_valid = valid_of_train > 0
                              ? std::min(pool.size() - 1, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                                                       valid_of_train * pool.size()))))
                              : 0;
    std::vector<bool> is_valid(pool.size(), false);
    for (std::size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = true;
    std::vector<StudentSequence> tr, va;
    for (std::size_t i = 0; i < pool.size(); ++i) (is_valid[i] ? va : tr).push_back(pool[i]);
    DataSplit split{data.with_students(std::move(tr)), data.with_students(std::move(va)),
                    data.with_students(std::move(test)),
                    SplitRatio{1.0 - 1.0 / k, valid_of_train, 1.0 / k}};
    out.folds.push_back({f, runner(split, f)});
  }
  std::map<std::string, std::vector<double>> cols;
  for (const auto& fr : out.folds)
    for (const auto& [name, v] : fr.metrics) cols[name].push_back(v);
  for (const auto& [name, vals] : cols) {
    auto [m, s] = mean_std(vals);
    out.mean[name] = m;
    out.stddev[name] = s;
  }
  return out;
}

}  // namespace dcl4kt
