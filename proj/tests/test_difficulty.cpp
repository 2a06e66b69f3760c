#include "support.hpp"

#include <doctest.h>

#include <map>

using namespace dcl4kt;

namespace {

// Counts straight from the raw log, keyed by the string ids.
std::map<std::string, std::pair<int, int>> brute_force(const testing::RawLog& log, bool concepts) {
  std::map<std::string, std::pair<int, int>> out;
  for (const auto& s : log)
    for (auto [q, c, r] : s) {
      auto& e = out[concepts ? "c" + std::to_string(c) : "q" + std::to_string(q)];
      e.first += r;
      e.second += 1;
    }
  return out;
}

struct ConstantPredictor : UnseenPredictor {
  double value;
  explicit ConstantPredictor(double v) : value(v) {}
  std::optional<double> predict(ItemKind, int) const override { return value; }
};

}  // namespace

TEST_CASE("quantize examples and half-up rounding at every 0.005 step") {
  CHECK(quantize(0.75) == 75);
  CHECK(quantize(0.0) == 0);
  CHECK(quantize(1.0) == 100);
  CHECK(quantize(0.005) == 1);
  for (int k = 0; k <= 200; ++k) {
    const int expected = (k + 1) / 2;
    CHECK(quantize(k / 200.0) == expected);
    CHECK(quantize(k * 0.005) == expected);
  }
  CHECK_THROWS_AS(quantize(-0.01), InputError);
  CHECK_THROWS_AS(quantize(1.01), InputError);
  CHECK_THROWS_AS(quantize(std::nan("")), InputError);
}

TEST_CASE("dequantize error is at most half a bin") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    double d = uniform01(rng);
    CHECK(std::abs(dequantize(quantize(d)) - d) <= 0.005 + 1e-12);
  }
}

TEST_CASE("hard negative examples and involution") {
  CHECK(hard_negative(0.75) == 0.25);
  CHECK(hard_negative(0.5) == 0.5);
  CHECK(hard_negative(1.0) == 0.0);
  for (int bin = 0; bin <= 100; ++bin) {
    CHECK(negative_bin(negative_bin(bin)) == bin);
    CHECK(negative_bin(bin) == 100 - bin);
  }
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    double d = uniform01(rng);
    CHECK(hard_negative(hard_negative(d)) == doctest::Approx(d).epsilon(1e-15));
  }
}

TEST_CASE("compute_ctt examples") {
  // Question answered by four students, three of them correctly.
  auto d = testing::dataset({{{1, 1, 1}}, {{1, 1, 1}}, {{1, 1, 0}}, {{1, 1, 1}, {2, 2, 1}, {2, 2, 1}}});
  auto t = compute_ctt(d);
  CHECK(t.question_diff.at(d.questions->find("q1")) == 0.75);
  CHECK(t.concept_diff.at(d.concepts->find("c2")) == 1.0);
  CHECK(t.question_diff.size() == 2);
  CHECK_FALSE(t.stored(ItemKind::Question, d.questions->unk()));
  CHECK(lookup(t, d.questions->unk(), ItemKind::Question, View::Positive) == 0.75);
  CHECK(lookup(t, d.questions->unk(), ItemKind::Question, View::Negative) == 0.25);

  auto smoothed = compute_ctt(d, {1.0});
  CHECK(smoothed.question_diff.at(d.questions->find("q1")) == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("compute_ctt equals brute-force counting on random logs") {
  Rng rng(20240);
  for (int trial = 0; trial < 100; ++trial) {
    auto log = testing::random_log(rng, 1 + static_cast<int>(uniform_index(rng, 60)), 1 + static_cast<int>(uniform_index(rng, 40)),
                                   1 + static_cast<int>(uniform_index(rng, 8)), 1, 150);
    auto d = testing::dataset(log);
    REQUIRE(d.interaction_count() <= 10000);
    auto t = compute_ctt(d);
    auto bq = brute_force(log, false), bc = brute_force(log, true);
    REQUIRE(t.question_diff.size() == bq.size());
    REQUIRE(t.concept_diff.size() == bc.size());
    for (const auto& [id, n] : bq)
      CHECK(t.question_diff.at(d.questions->find(id)) == static_cast<double>(n.first) / n.second);
    for (const auto& [id, n] : bc)
      CHECK(t.concept_diff.at(d.concepts->find(id)) == static_cast<double>(n.first) / n.second);
  }
}

TEST_CASE("compute_ctt reads only the training split") {
  Rng rng(9);
  auto d = testing::dataset(testing::random_log(rng, 40, 15, 4, 5, 30));
  auto s = split_dataset(d, {}, 3);
  auto before = compute_ctt(s.train);
  // Appending more students to valid/test or scoring them separately leaves the train table alone.
  auto grown = s;
  grown.test.students.insert(grown.test.students.end(), s.valid.students.begin(), s.valid.students.end());
  auto after = compute_ctt(grown.train);
  CHECK(after.question_diff == before.question_diff);
  CHECK(after.concept_diff == before.concept_diff);
}

TEST_CASE("lookup by view and fallback") {
  DifficultyTable t;
  t.question_diff[3] = 0.6;
  CHECK(lookup(t, 3, ItemKind::Question, View::Positive) == 0.6);
  CHECK(lookup(t, 3, ItemKind::Question, View::Negative) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(lookup_bin(t, 3, ItemKind::Question, View::Negative) == 40);
  CHECK(lookup(t, 4, ItemKind::Question, View::Positive) == 0.75);
  CHECK(lookup(t, 4, ItemKind::Question, View::Negative) == 0.25);
  CHECK(lookup_bin(t, 4, ItemKind::Question, View::Negative) == 25);

  t.predictor = std::make_shared<ConstantPredictor>(0.62);
  CHECK(lookup(t, 4, ItemKind::Question, View::Positive) == 0.62);
  CHECK(lookup(t, 4, ItemKind::Question, View::Negative) == doctest::Approx(0.38));
  // Stored values win over the predictor.
  CHECK(lookup(t, 3, ItemKind::Question, View::Positive) == 0.6);
}

TEST_CASE("seen negative lookups mirror positive ones") {
  Rng rng(4);
  auto d = testing::dataset(testing::random_log(rng, 30, 20, 5, 1, 20));
  auto t = compute_ctt(d);
  for (auto kind : {ItemKind::Question, ItemKind::Concept})
    for (const auto& [item, v] : t.values(kind)) {
      CHECK(std::abs(lookup(t, item, kind, View::Negative) - (1.0 - lookup(t, item, kind, View::Positive))) <= 1e-12);
      CHECK(lookup_bin(t, item, kind, View::Negative) == 100 - lookup_bin(t, item, kind, View::Positive));
    }
}

TEST_CASE("table validation and csv round trip") {
  DifficultyTable t;
  t.question_diff[1] = 1.5;
  CHECK_THROWS_AS(t.validate(), InputError);
  t.question_diff[1] = 0.5;
  t.fallback_negative = -0.1;
  CHECK_THROWS_AS(t.validate(), InputError);
  t.fallback_negative = 0.25;
  CHECK(t.symmetric());
  t.fallback_negative = 0.75;
  CHECK_FALSE(t.symmetric());

  Rng rng(8);
  auto d = testing::dataset(testing::random_log(rng, 10, 6, 3, 3, 9));
  auto ctt = compute_ctt(d);
  auto dir = testing::temp_dir("difftable");
  write_table(dir / "d.csv", ctt, *d.questions, *d.concepts);
  auto back = read_table(dir / "d.csv", *d.questions, *d.concepts);
  CHECK(back.question_diff == ctt.question_diff);
  CHECK(back.concept_diff == ctt.concept_diff);
}
