#include "dcl4kt/synth.hpp"
#include "dcl4kt/text_difficulty.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace dcl4kt;

namespace {

TextModelConfig small_text_cfg() {
  TextModelConfig c;
  c.embed_dim = 16;
  c.heads = 2;
  c.layers = 1;
  c.max_tokens = 48;
  c.epochs = 40;
  c.batch_size = 8;
  return c;
}

struct Constant final : TextRegressor {
  double v;
  explicit Constant(double v) : v(v) {}
  double predict(std::string_view) const override { return v; }
};

/// Predicts the difficulty stored for an exact text match.
struct Lookup final : TextRegressor {
  std::map<std::string, double> m;
  double predict(std::string_view t) const override {
    auto it = m.find(std::string(t));
    return it == m.end() ? 0.5 : it->second;
  }
};

Dataset with_texts(Dataset d, TextMap q, TextMap c) {
  d.question_texts = std::make_shared<const TextMap>(std::move(q));
  d.concept_texts = std::make_shared<const TextMap>(std::move(c));
  return d;
}

}  // namespace

TEST_CASE("tokenizer freezes after fit and maps unseen bytes to UNK") {
  ByteTokenizer tok;
  std::vector<std::string> texts{"abc", "ca"};
  tok.fit(texts);
  CHECK(tok.frozen());
  CHECK(tok.vocab_size() == 5);
  CHECK_THROWS_AS(tok.fit(texts), Error);

  auto ids = tok.encode("abz", 10);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == 2);
  CHECK(ids[1] == 3);
  CHECK(ids[2] == ByteTokenizer::kUnk);
  CHECK(tok.encode("", 10) == std::vector<int>{ByteTokenizer::kUnk});
  CHECK(tok.encode("abcabc", 4).size() == 4);

  ByteTokenizer copy;
  copy.restore(tok.byte_ids());
  CHECK(copy.vocab_size() == tok.vocab_size());
  CHECK(copy.encode("cab", 8) == tok.encode("cab", 8));
}

TEST_CASE("text model config validation") {
  auto c = small_text_cfg();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = small_text_cfg();
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = small_text_cfg();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("text model fits two distinct texts") {
  std::vector<TextPair> pairs{{"short one", 0.2, Provenance::Train, "a"},
                              {"a much longer statement with many words", 0.9, Provenance::Train, "b"}};
  auto cfg = small_text_cfg();
  cfg.epochs = 150;
  auto m = fit_text_model(pairs, cfg);
  CHECK(m.report().loss_history.size() == 150u);
  CHECK(m.report().train_rmse < 5.0);
  CHECK(m.report().loss_history.back() < m.report().loss_history.front());
  CHECK(std::isnan(m.report().holdout_rmse));
}

TEST_CASE("constant labels give near-constant predictions") {
  std::vector<TextPair> pairs;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    std::string t;
    for (int k = 0; k < 5 + i; ++k) t.push_back(static_cast<char>('a' + uniform_index(rng, 26)));
    pairs.push_back({t, 0.6, Provenance::Train, std::to_string(i)});
  }
  auto m = fit_text_model(pairs, small_text_cfg());
  for (const auto& p : pairs) CHECK(std::abs(m.predict(p.text) - 0.6) < 0.02);
  CHECK(std::abs(m.predict("zzzz unseen ###") - 0.6) < 0.1);
}

TEST_CASE("text model is deterministic and bounded") {
  std::vector<TextPair> pairs{{"alpha beta", 0.3, Provenance::Train, "a"},
                              {"gamma", 0.8, Provenance::Train, "b"},
                              {"delta epsilon zeta", 0.5, Provenance::Train, "c"}};
  auto m1 = fit_text_model(pairs, small_text_cfg());
  auto m2 = fit_text_model(pairs, small_text_cfg());
  for (const auto& t : {"alpha", "gamma delta", "", "\xff\xfe\x01 binary"}) {
    double a = m1.predict(t);
    CHECK(a == m2.predict(t));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(predict_difficulty(m1, "gamma") == m1.predict("gamma"));
  std::vector<std::string> batch{"alpha beta", "gamma"};
  auto many = m1.predict(batch);
  CHECK(many[0] == doctest::Approx(m1.predict("alpha beta")).epsilon(1e-12));
  CHECK(many[1] == doctest::Approx(m1.predict("gamma")).epsilon(1e-12));
}

TEST_CASE("fitting rejects empty input and non-train labels") {
  CHECK_THROWS_AS(fit_text_model(std::vector<TextPair>{}, small_text_cfg()), InputError);
  for (auto p : {Provenance::Valid, Provenance::Test}) {
    std::vector<TextPair> pairs{{"x", 0.5, Provenance::Train, "a"}, {"y", 0.5, p, "b"}};
    CHECK_THROWS_AS(fit_text_model(pairs, small_text_cfg()), InputError);
  }
  std::vector<TextPair> bad{{"x", 1.5, Provenance::Train, "a"}};
  CHECK_THROWS_AS(fit_text_model(bad, small_text_cfg()), InputError);
}

TEST_CASE("item_text joins question and concept text") {
  testing::RawLog log{{{0, 0, 1}, {1, 1, 0}}};
  auto d = with_texts(testing::dataset(log), {{"q0", "add numbers"}}, {{"c0", "arithmetic"}, {"c1", "geometry"}});
  int q0 = d.questions->find("q0"), q1 = d.questions->find("q1");
  int c1 = d.concepts->find("c1");
  CHECK(item_text(d, q0, ItemKind::Question, TextInput::Own) == "add numbers");
  CHECK(item_text(d, q0, ItemKind::Question, TextInput::Joint) == "add numbers | arithmetic");
  CHECK(item_text(d, q1, ItemKind::Question, TextInput::Joint).empty());
  CHECK(item_text(d, c1, ItemKind::Concept, TextInput::Own) == "geometry");

  auto table = compute_ctt(d);
  auto qp = difficulty_pairs(d, table, ItemKind::Question, Provenance::Valid, TextInput::Own);
  REQUIRE(qp.size() == 1u);  // q1 has no text
  CHECK(qp[0].id == "q0");
  CHECK(qp[0].difficulty == 1.0);
  CHECK(qp[0].provenance == Provenance::Valid);
}

TEST_CASE("fill_unseen predicts only items missing from train") {
  // q0,q1 in train; q2 only in test; q3 only in valid without text.
  testing::RawLog train{{{0, 0, 1}, {1, 0, 0}}};
  testing::RawLog held{{{2, 1, 1}}, {{3, 2, 0}}};
  auto all = train;
  all.insert(all.end(), held.begin(), held.end());
  auto full = with_texts(testing::dataset(all), {{"q0", "t0"}, {"q1", "t1"}, {"q2", "t2"}},
                         {{"c0", "k0"}, {"c1", "k1"}, {"c2", "k2"}});
  DataSplit split;
  split.train = full.with_students({full.students[0]});
  split.test = full.with_students({full.students[1]});
  split.valid = full.with_students({full.students[2]});
  auto table = compute_ctt(split.train);
  const int q0 = full.questions->find("q0"), q2 = full.questions->find("q2"), q3 = full.questions->find("q3");
  const int c0 = full.concepts->find("c0"), c1 = full.concepts->find("c1");

  Lookup qm;
  qm.m = {{"t0", 0.11}, {"t2", 0.42}};
  Constant cm(0.33);
  FillStats stats;
  auto filled = fill_unseen(table, &qm, &cm, TextInput::Own, split, &stats);
  CHECK(filled.source == DifficultySource::TextModel);
  CHECK(filled.question_diff.at(q0) == table.question_diff.at(q0));  // train value wins
  CHECK(filled.question_diff.at(q2) == 0.42);
  CHECK(filled.question_diff.count(q3) == 0);
  CHECK(lookup(filled, q3, ItemKind::Question, View::Positive) == table.fallback_positive);
  CHECK(filled.concept_diff.at(c0) == table.concept_diff.at(c0));
  CHECK(filled.concept_diff.at(c1) == 0.33);
  CHECK(stats.predicted_questions == 1u);
  CHECK(stats.predicted_concepts == 2u);
  CHECK(stats.without_text == 1u);

  auto again = fill_unseen(filled, &qm, &cm, TextInput::Own, split);
  CHECK(again.question_diff == filled.question_diff);
  CHECK(again.concept_diff == filled.concept_diff);

  FillStats none;
  auto untouched = fill_unseen(table, nullptr, nullptr, TextInput::Own, split, &none);
  CHECK(untouched.question_diff == table.question_diff);
  CHECK(none.without_text == 4u);
}

TEST_CASE("difficulty prediction RMSE rows") {
  std::vector<TextPair> held{{"a", 0.75, Provenance::Test, "1"}, {"b", 0.75, Provenance::Test, "2"}};
  Lookup perfect;
  perfect.m = {{"a", 0.75}, {"b", 0.75}};
  auto rows = evaluate_difficulty_prediction(&perfect, held);
  REQUIRE(rows.size() == 3u);
  CHECK(rows[0].predictor == "text_model");
  CHECK(rows[0].rmse == 0.0);
  CHECK(rows[1].predictor == "constant_0.75");
  CHECK(rows[1].rmse == doctest::Approx(0.0));
  CHECK(rows[2].predictor == "constant_0.25");
  CHECK(rows[2].rmse == doctest::Approx(50.0));

  std::vector<TextPair> spread{{"a", 0.6, Provenance::Test, "1"}, {"b", 0.8, Provenance::Test, "2"}};
  auto r = evaluate_difficulty_prediction(nullptr, spread);
  REQUIRE(r.size() == 2u);
  CHECK(r[0].rmse == doctest::Approx(100 * std::sqrt((0.15 * 0.15 + 0.05 * 0.05) / 2)));
  CHECK(r[1].rmse == doctest::Approx(100 * std::sqrt((0.35 * 0.35 + 0.55 * 0.55) / 2)));
  CHECK_THROWS_AS(evaluate_difficulty_prediction(nullptr, std::vector<TextPair>{}), InputError);
}

TEST_CASE("utf8_length counts code points") {
  CHECK(utf8_length("") == 0u);
  CHECK(utf8_length("abc") == 3u);
  CHECK(utf8_length("caf\xc3\xa9") == 4u);
  CHECK(utf8_length("\xe6\x95\xb0\xe5\xad\xa6") == 2u);
}

TEST_CASE("length analysis buckets per question and honours the cap") {
  testing::RawLog log{{{0, 0, 1}, {1, 0, 0}, {2, 0, 1}}, {{0, 0, 1}, {1, 0, 1}, {2, 0, 0}}};
  auto d = with_texts(testing::dataset(log),
                      {{"q0", "abc"}, {"q1", "abcdefghijklm"}, {"q2", std::string(30, 'x')}}, {});
  auto rep = char_length_analysis(d, 20, 10);
  CHECK(rep.excluded_items == 1u);
  REQUIRE(rep.buckets.size() == 2u);
  CHECK(rep.buckets[0].lo == 0u);
  CHECK(rep.buckets[0].hi == 10u);
  CHECK(rep.buckets[0].mean_correct == 1.0);
  CHECK(rep.buckets[0].responses == 2u);
  CHECK(rep.buckets[1].lo == 10u);
  CHECK(rep.buckets[1].hi == 20u);
  CHECK(rep.buckets[1].mean_correct == 0.5);
  CHECK_THROWS_AS(char_length_analysis(d, 20, 0), InputError);

  auto dir = testing::temp_dir("length");
  write_length_report(dir / "l.csv", rep);
  CHECK(testing::slurp(dir / "l.csv").rfind("length_lo,length_hi,items,responses,mean_correct,median_correct", 0) == 0);
}

TEST_CASE("length analysis is flat when correctness ignores length") {
  testing::RawLog log(1);
  for (int q = 0; q < 6; ++q)
    for (int k = 0; k < 4; ++k) log[0].emplace_back(q, 0, k % 2);
  TextMap texts;
  for (int q = 0; q < 6; ++q) texts["q" + std::to_string(q)] = std::string(static_cast<std::size_t>(5 + 10 * q), 'w');
  auto rep = char_length_analysis(with_texts(testing::dataset(log), texts, {}), 120, 10);
  REQUIRE(rep.buckets.size() == 6u);
  for (const auto& b : rep.buckets) CHECK(b.mean_correct == 0.5);
}

TEST_CASE("synthetic longer questions are answered correctly less often") {
  SynthConfig sc;
  sc.students = 150;
  auto d = to_dataset(generate_synthetic(sc));
  auto rep = char_length_analysis(d, 1000, 20);
  REQUIRE(rep.buckets.size() >= 3u);
  CHECK(rep.buckets.front().mean_correct > rep.buckets.back().mean_correct);
}
