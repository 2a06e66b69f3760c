#include "support.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/kernels.hpp"
#include "dcl4kt/training.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace dcl4kt;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Tiny {
  DataSplit split;
  DifficultyTable table;

  explicit Tiny(std::uint64_t seed = 1, int students = 30) {
    Rng rng(seed);
    auto d = testing::dataset(testing::random_log(rng, students, 12, 4, 3, 16));
    split = split_dataset(d, {}, seed);
    table = compute_ctt(split.train);
  }
};

TrainingConfig quick(int epochs = 1) {
  TrainingConfig t;
  t.batch_size = 8;
  t.max_epochs = epochs;
  t.learning_rate = 0.01;
  return t;
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("bce examples") {
  MatrixXi r(2, 2), mask = MatrixXi::Ones(2, 2);
  r << 1, 0, 0, 1;
  CHECK(bce_loss(r.cast<double>(), r, mask) <= 1e-6);
  CHECK(std::abs(bce_loss(MatrixXd::Constant(2, 2, 0.5), r, mask) - std::log(2.0)) <= 1e-9);

  MatrixXd p(2, 2);
  p << 0.9, 0.2, 0.6, 0.3;
  const double hand = -(std::log(0.9) + std::log(0.8) + std::log(0.4) + std::log(0.3)) / 4;
  CHECK(bce_loss(p, r, mask) == doctest::Approx(hand).epsilon(1e-12));
  mask(1, 1) = 0;
  const double masked = -(std::log(0.9) + std::log(0.8) + std::log(0.4)) / 3;
  CHECK(bce_loss(p, r, mask) == doctest::Approx(masked).epsilon(1e-12));
  CHECK(bce_loss(p, r, MatrixXi::Zero(2, 2)) == 0.0);
}

TEST_CASE("info_nce examples") {
  auto e1 = vec({1, 0, 0}), e2 = vec({0, 1, 0}), e3 = vec({0, 0, 1});
  MatrixXd orth(2, 3);
  orth << e2.transpose(), e3.transpose();
  CHECK(kernels::info_nce_similarity<double>(e1, e1, orth, 0.1) < 1e-3);

  MatrixXd same(4, 3);
  for (int i = 0; i < 4; ++i) same.row(i) = vec({0.3, -0.2, 0.9}).transpose();
  CHECK(kernels::info_nce_similarity<double>(vec({0.3, -0.2, 0.9}), vec({0.3, -0.2, 0.9}), same, 0.1) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Rng rng(1);
  std::normal_distribution<double> n;
  VectorXd a(5), p(5);
  MatrixXd negs(3, 5);
  for (int i = 0; i < 5; ++i) {
    a(i) = n(rng);
    p(i) = n(rng);
    for (int k = 0; k < 3; ++k) negs(k, i) = n(rng);
  }
  const double base = kernels::info_nce_similarity<double>(a, p, negs, 0.1);
  VectorXd a5 = a * 5, p5 = p * 5;
  MatrixXd n5 = negs * 5;
  CHECK(kernels::info_nce_similarity<double>(a5, p5, n5, 0.1) == doctest::Approx(base).epsilon(1e-12));
  CHECK_THROWS_AS(kernels::info_nce_similarity<double>(VectorXd::Zero(5), p, negs, 0.1), InputError);
}

TEST_CASE("batched info_nce agrees with the per-anchor form") {
  Rng rng(2);
  std::normal_distribution<double> n;
  MatrixXd a(4, 6), p(4, 6), hn(4, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = n(rng);
    p.data()[i] = n(rng);
    hn.data()[i] = n(rng);
  }
  for (bool in_batch : {true, false}) {
    auto r = kernels::info_nce_rows<double>(a, p, hn, 0.1, in_batch);
    for (Eigen::Index i = 0; i < 4; ++i) {
      MatrixXd negs(in_batch ? 4 : 1, 6);
      negs.row(0) = hn.row(i);
      Eigen::Index k = 1;
      if (in_batch)
        for (Eigen::Index j = 0; j < 4; ++j)
          if (j != i) negs.row(k++) = p.row(j);
      const double ref = kernels::info_nce_similarity<double>(a.row(i).transpose(), p.row(i).transpose(), negs, 0.1);
      CHECK(r.losses(i) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("contrastive_loss examples") {
  Rng rng(3);
  std::normal_distribution<double> n;
  MatrixXd v1(3, 4), v2(3, 4), ng(3, 4);
  for (Eigen::Index i = 0; i < v1.size(); ++i) {
    v1.data()[i] = n(rng);
    v2.data()[i] = n(rng);
    ng.data()[i] = n(rng);
  }
  ContrastiveViews same{v1, v2, ng, v1, v2, ng};
  const double one = kernels::info_nce_rows<double>(v1, v2, ng, 0.1).losses.mean();
  CHECK(contrastive_loss(same, 0.1) == doctest::Approx(one).epsilon(1e-12));
  CHECK(contrastive_loss(same, 0.1) >= 0);

  // Batch of one: only the hard negative competes.
  MatrixXd a(1, 2), p(1, 2), hn(1, 2);
  a << 1, 0;
  p << 1, 1;
  hn << 0, 1;
  ContrastiveViews single{a, p, hn, a, p, hn};
  const double pos = (1 / std::sqrt(2.0)) / 0.1, neg = 0.0;
  const double hand = -std::log(std::exp(pos) / (std::exp(pos) + std::exp(neg)));
  CHECK(contrastive_loss(single, 0.1) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("total_loss is affine in lambda with exact endpoints") {
  CHECK(total_loss(0.5, 2.0, 0.0) == 0.5);
  CHECK(total_loss(0.5, 2.0, 1.0) == 2.0);
  CHECK(total_loss(0.5, 2.0, 0.1) == doctest::Approx(0.65).epsilon(1e-15));
  auto b = ad::constant(MatrixXd::Constant(1, 1, 0.7)), c = ad::constant(MatrixXd::Constant(1, 1, 3.1));
  CHECK(total_loss(b, c, 0.0).scalar() == 0.7);
  CHECK(total_loss(b, c, 1.0).scalar() == 3.1);
  for (double l : {0.1, 0.25, 0.5, 0.8})
    CHECK(total_loss(b, c, l).scalar() == doctest::Approx(0.7 + l * (3.1 - 0.7)).epsilon(1e-14));
}

TEST_CASE("early stopping counter") {
  EarlyStopping s(10);
  int stopped_at = 0;
  for (int epoch = 1; epoch <= 30; ++epoch)
    if (s.update(1.0 - 0.01 * epoch)) {
      stopped_at = epoch;
      break;
    }
  CHECK(stopped_at == 11);
  CHECK(s.best_epoch() == 1);

  EarlyStopping t(2);
  CHECK_FALSE(t.update(0.5));
  CHECK_FALSE(t.update(0.6));
  CHECK(t.improved());
  CHECK_FALSE(t.update(0.6));
  CHECK(t.update(0.55));
  CHECK(t.best_epoch() == 2);
  CHECK(t.best_score() == 0.6);

  EarlyStopping u(3);
  CHECK_FALSE(u.update(std::nan("")));
  CHECK(u.best_epoch() == 1);
  CHECK_FALSE(u.update(0.5));
  CHECK(u.best_epoch() == 2);
}

TEST_CASE("training config keys and validation") {
  auto t = TrainingConfig::from_config(Config::parse("lambda_c = 0.3\nbatch_size = 4\naugment = on\nbce_only = 1"));
  CHECK(t.lambda_c == 0.3);
  CHECK(t.batch_size == 4);
  CHECK(t.augment);
  CHECK(t.bce_only);
  CHECK_THROWS_AS(TrainingConfig::from_config(Config::parse("lambda_c = 1.5")), InputError);
  CHECK_THROWS_AS(TrainingConfig::from_config(Config::parse("early_stop_patience = 0")), InputError);
  CHECK_THROWS_AS(TrainingConfig::from_config(Config::parse("temperature = 0")), InputError);
}

TEST_CASE("one epoch yields one history row and evaluation never augments") {
  Tiny f;
  auto cfg = testing::tiny_model(f.split.train, 8, 2, 1, 16);
  Model m(cfg, 1);
  auto t = quick(1);
  t.augment = true;
  auto r = train(m, f.split, f.table, t, AugmentationConfig::mixed());
  REQUIRE(r.history.size() == 1);
  CHECK(std::isfinite(r.history[0].train_loss));
  CHECK(std::isfinite(r.history[0].valid_auc));
  CHECK(r.best_epoch == 1);
  CHECK(r.train_augment_calls > 0);
  CHECK(r.eval_augment_calls == 0);
  CHECK_FALSE(r.diverged);
}

TEST_CASE("a step with lambda 0 equals a BCE-only step bitwise") {
  Tiny f(2);
  auto cfg = testing::tiny_model(f.split.train, 8, 2, 1, 16);
  cfg.dropout = 0.1;
  auto windows = make_windows(f.split.train, 16);
  windows.resize(8);
  auto t = quick();
  t.augment = true;
  t.lambda_c = 0.0;
  auto t_bce = t;
  t_bce.bce_only = true;

  Model a(cfg, 5), b(cfg, 5);
  Trainer ta(a, f.table, f.split.train, t, AugmentationConfig::mixed());
  Trainer tb(b, f.table, f.split.train, t_bce, AugmentationConfig::mixed());
  for (std::uint64_t step = 0; step < 3; ++step) {
    auto la = ta.accumulate(windows, step);
    auto lb = tb.accumulate(windows, step);
    CHECK(la.total == lb.total);
    CHECK(la.cl > 0);
    ta.apply(1);
    tb.apply(1);
  }
  auto pa = a.snapshot(), pb = b.snapshot();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i].array() == pb[i].array()).all());
}

TEST_CASE("contrastive-only parameters receive gradient") {
  Tiny f(3);
  auto cfg = testing::tiny_model(f.split.train, 8, 2, 1, 16);
  cfg.separate_negative_tables = true;
  auto windows = make_windows(f.split.train, 16);
  windows.resize(8);
  auto t = quick();
  t.lambda_c = 0.5;
  Model m(cfg, 2);
  Trainer tr(m, f.table, f.split.train, t, AugmentationConfig::training_defaults());
  tr.accumulate(windows, 0);
  for (const char* name : {"proj.concept", "proj.question", "embed.neg_response", "embed.neg_question_difficulty"}) {
    CAPTURE(name);
    REQUIRE(m.parameters().find(name));
    CHECK(m.parameters().find(name)->var.grad().norm() > 0);
  }
  m.parameters().zero_grad();
  t.bce_only = true;
  Trainer only(m, f.table, f.split.train, t, AugmentationConfig::training_defaults());
  only.accumulate(windows, 0);
  CHECK(m.parameters().find("proj.concept")->var.grad().norm() == 0);
}

TEST_CASE("training is deterministic and lowers the loss") {
  Tiny f(4, 40);
  auto cfg = testing::tiny_model(f.split.train, 8, 2, 1, 16);
  auto t = quick(4);
  t.early_stop_patience = 10;
  Model a(cfg, 9), b(cfg, 9);
  auto ra = train(a, f.split, f.table, t, AugmentationConfig());
  auto rb = train(b, f.split, f.table, t, AugmentationConfig());
  REQUIRE(ra.history.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].valid_auc == rb.history[i].valid_auc);
  }
  CHECK(ra.history.back().bce < ra.history.front().bce);

  auto acc = t;
  acc.grad_accum_steps = 2;
  Model c(cfg, 9);
  auto rc = train(c, f.split, f.table, acc, AugmentationConfig());
  CHECK(rc.history.size() == 4);
  CHECK(std::isfinite(rc.history.back().train_loss));
}

TEST_CASE("best-validation parameters are restored") {
  Tiny f(5);
  auto cfg = testing::tiny_model(f.split.train, 8, 2, 1, 16);
  auto t = quick(3);
  Model m(cfg, 3);
  auto r = train(m, f.split, f.table, t, AugmentationConfig());
  auto score = evaluate(m, f.split.valid, f.table, t.batch_size);
  CHECK(score.auc == doctest::Approx(r.best_valid_auc).epsilon(1e-12));
}

TEST_CASE("divergence is reported, not thrown") {
  Tiny f(6);
  auto cfg = testing::tiny_model(f.split.train, 8, 2, 1, 16);
  Model m(cfg, 4);
  m.parameters().params().back().var.mutable_value()(0, 0) = std::nan("");
  auto r = train(m, f.split, f.table, quick(2), AugmentationConfig());
  CHECK(r.diverged);
  CHECK(r.history.empty());
  CHECK(!r.divergence_message.empty());

  Model blow(cfg, 4);
  auto t = quick(3);
  t.learning_rate = std::numeric_limits<double>::infinity();
  auto rb = train(blow, f.split, f.table, t, AugmentationConfig());
  CHECK(rb.diverged);
}

TEST_CASE("evaluate pools valid positions and flags undefined AUC") {
  auto d = testing::dataset({{{1, 1, 1}, {2, 1, 1}}, {{1, 1, 1}}});
  auto table = compute_ctt(d);
  Model m(testing::tiny_model(d, 8, 2, 1, 4), 1);
  auto s = evaluate(m, d, table, 16);
  CHECK(s.count == 3);
  CHECK(std::isnan(s.auc));
  CHECK(s.rmse > 0);
  CHECK(predict_records(m, d, table, 1).size() == 3);

  DataSplit empty{d.with_students({}), d, d, {}};
  CHECK_THROWS_AS(train(m, empty, table, quick(), AugmentationConfig()), EmptyDatasetError);
}

TEST_CASE("k-fold assignments") {
  auto folds = kfold_assignments(50, 5, 7);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    CHECK(f.size() == 10);
    for (auto i : f) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == 50);
  CHECK(kfold_assignments(50, 2, 3) == kfold_assignments(50, 2, 3));
  CHECK(kfold_assignments(50, 2, 3) != kfold_assignments(50, 2, 4));
  CHECK_THROWS_AS(kfold_assignments(3, 5, 0), InputError);
  CHECK_THROWS_AS(kfold_assignments(10, 1, 0), InputError);
}

TEST_CASE("k_fold_cv runs every fold once with student-disjoint splits") {
  Rng rng(8);
  auto d = testing::dataset(testing::random_log(rng, 23, 5, 2, 1, 4));
  std::multiset<std::string> tested;
  auto r = k_fold_cv(d, 5, 1, [&](const DataSplit& s, int) {
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.valid, &s.test})
      for (const auto& st : part->students) CHECK(ids.insert(st.student_id).second);
    CHECK(ids.size() == 23);
    CHECK(!s.valid.students.empty());
    for (const auto& st : s.test.students) tested.insert(st.student_id);
    return std::map<std::string, double>{{"auc", 0.7}};
  });
  CHECK(r.folds.size() == 5);
  CHECK(tested.size() == 23);
  CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == 23);
  CHECK(r.mean.at("auc") == doctest::Approx(0.7));
  CHECK(r.stddev.at("auc") == doctest::Approx(0.0));

  std::vector<double> v{1, 2, 3, 4};
  auto [m, s] = mean_std(v);
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
}
