#include "dcl4kt/cli.hpp"
#include "dcl4kt/experiments.hpp"
#include "dcl4kt/prepared.hpp"
#include "dcl4kt/synth.hpp"
#include "support.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace dcl4kt;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::vector<std::string> kTinyModel = {"--embed-dim", "8", "--num-heads", "2", "--layers-per-encoder", "1",
                                             "--max-len", "20", "--batch-size", "16"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Synthesises and prepares a small dataset under `root`; returns root.
fs::path prepared_root(const std::string& name) {
  auto root = testing::temp_dir(name);
  const std::string o = root.string();
  REQUIRE(cli({"synth", "--out", o, "--students", "40", "--questions", "12", "--concepts", "3", "--min-length", "8",
               "--max-length", "20"})
              .code == kExitOk);
  REQUIRE(cli({"prepare", "--out", o, "--input", (root / "synth" / "interactions.csv").string()}).code == kExitOk);
  return root;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.students = 40;
  c.questions = 12;
  c.concepts = 3;
  c.min_length = 8;
  c.max_length = 20;
  return c;
}

}  // namespace

TEST_CASE("synthetic data is deterministic and carries texts") {
  auto a = generate_synthetic(small_synth());
  auto b = generate_synthetic(small_synth());
  REQUIRE(a.interactions.size() == b.interactions.size());
  for (std::size_t i = 0; i < a.interactions.size(); ++i) {
    CHECK(a.interactions[i].student_id == b.interactions[i].student_id);
    CHECK(a.interactions[i].question_id == b.interactions[i].question_id);
    CHECK(a.interactions[i].response == b.interactions[i].response);
  }
  CHECK(a.question_texts.size() == 12u);
  CHECK(a.concept_texts.size() == 3u);
  auto d = to_dataset(a);
  CHECK(d.students.size() == 40u);
  CHECK(d.questions->live_size() == 12);
  CHECK(d.question_texts->size() == 12u);
  for (const auto& s : d.students) {
    CHECK(s.steps.size() >= 8u);
    CHECK(s.steps.size() <= 20u);
  }
}

TEST_CASE("hiding questions leaves them out of train only") {
  auto d = to_dataset(generate_synthetic(small_synth()));
  auto split = split_dataset(d, {}, 1);
  auto u = hide_questions_from_train(split, 0.5, 7);
  CHECK(!u.removed_questions.empty());
  std::set<int> removed(u.removed_questions.begin(), u.removed_questions.end());
  for (const auto& s : u.split.train.students)
    for (const auto& st : s.steps) CHECK(removed.count(st.question) == 0);
  CHECK(u.split.test.interaction_count() == split.test.interaction_count());
  CHECK(u.split.valid.interaction_count() == split.valid.interaction_count());
  CHECK(u.unseen_test_item_share > 0.0);
  CHECK_THROWS_AS(hide_questions_from_train(split, 1.0, 7), InputError);
  auto none = hide_questions_from_train(split, 0.0, 7);
  CHECK(none.removed_questions.empty());
  CHECK(none.unseen_test_item_share == 0.0);
}

TEST_CASE("summarize groups by arm and setting") {
  std::vector<ArmResult> rows{{"a", 0.1, 0, 0.6, 0.4, 1, false},
                              {"a", 0.1, 1, 0.8, 0.2, 2, false},
                              {"b", 0.1, 0, 0.7, 0.3, 1, false},
                              {"a", 0.5, 0, 0.5, 0.5, 1, false}};
  auto s = summarize(rows);
  REQUIRE(s.size() == 3u);
  CHECK(s[0].arm == "a");
  CHECK(s[0].setting == 0.1);
  CHECK(s[0].runs == 2u);
  CHECK(s[0].mean_auc == doctest::Approx(0.7));
  CHECK(s[0].mean_rmse == doctest::Approx(0.3));
  CHECK(s[1].arm == "b");
  CHECK(s[2].setting == 0.5);
  CHECK(s[2].std_auc == 0.0);

  auto dir = testing::temp_dir("summary");
  write_results(dir / "r.csv", rows);
  write_summary(dir / "s.csv", s);
  CHECK(lines(testing::slurp(dir / "r.csv")) == 5u);
  CHECK(lines(testing::slurp(dir / "s.csv")) == 4u);
}

TEST_CASE("prepare is byte-identical across runs and load_prepared round-trips") {
  auto root = testing::temp_dir("prepare");
  auto data = generate_synthetic(small_synth());
  write_synthetic(root, data);
  PrepareOptions opts;
  opts.input = root / "interactions.csv";
  opts.seed = 3;
  auto s1 = prepare_artifacts(opts, root / "p1");
  prepare_artifacts(opts, root / "p2");
  for (const char* f : {"train.csv", "valid.csv", "test.csv", "difficulty.csv", "manifest.json", "question_texts.csv"})
    CHECK(testing::slurp(root / "p1" / f) == testing::slurp(root / "p2" / f));
  CHECK(s1.question_texts);
  CHECK(s1.concept_texts);
  CHECK(s1.students[0] + s1.students[1] + s1.students[2] == 40u);

  auto p = load_prepared(root / "p1");
  CHECK(p.split.train.students.size() == s1.students[0]);
  CHECK(p.split.test.students.size() == s1.students[2]);
  auto direct = compute_ctt(p.split.train);
  CHECK(p.table.question_diff.size() == direct.question_diff.size());
  for (const auto& [q, v] : direct.question_diff) CHECK(p.table.question_diff.at(q) == doctest::Approx(v).epsilon(1e-12));
  CHECK(merge_splits(p.split).students.size() == 40u);

  fs::remove(root / "p1" / "valid.csv");
  CHECK_THROWS_AS(load_prepared(root / "p1"), MissingArtifactError);
  CHECK_THROWS_AS(load_prepared(root / "nowhere"), MissingArtifactError);
}

TEST_CASE("prepare without text files records their absence") {
  auto root = testing::temp_dir("prepare_notext");
  auto data = generate_synthetic(small_synth());
  write_synthetic(root, data);
  fs::remove(root / "question_texts.csv");
  fs::remove(root / "concept_texts.csv");
  PrepareOptions opts;
  opts.input = root / "interactions.csv";
  auto s = prepare_artifacts(opts, root / "p");
  CHECK_FALSE(s.question_texts);
  CHECK_FALSE(s.concept_texts);
  CHECK(testing::slurp(root / "p" / "manifest.json").find("\"question\": false") != std::string::npos);

  auto r = cli({"predict-diff", "--out", root.string(), "--prepared", (root / "p").string()});
  CHECK(r.code == kExitInput);
}

TEST_CASE("cli exit codes") {
  auto root = testing::temp_dir("cli_codes");
  CHECK(cli({"prepare", "--out", root.string(), "--input", (root / "missing.csv").string()}).code == kExitInput);
  CHECK(cli({"train", "--out", root.string()}).code == kExitMissingArtifact);
  CHECK(cli({"evaluate", "--out", root.string()}).code == kExitMissingArtifact);
  CHECK(cli({"no-such-command"}).code != kExitOk);
  CHECK(cli({"cv", "--k", "1"}).code != kExitOk);
}

TEST_CASE("cli train, evaluate and divergence") {
  auto root = prepared_root("cli_train");
  const std::string o = root.string();
  auto r = cli(with({"train", "--out", o, "--max-epochs", "1"}, kTinyModel));
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  auto run = root / "runs" / "train";
  CHECK(lines(testing::slurp(run / "history.csv")) == 2u);
  CHECK(fs::exists(run / "checkpoint.json"));
  CHECK(fs::exists(run / "metrics.csv"));

  auto e = cli(with({"evaluate", "--out", o, "--split", "valid"}, {"--batch-size", "16"}));
  CHECK_MESSAGE(e.code == kExitOk, e.err);
  CHECK(fs::exists(run / "metrics_valid.csv"));

  auto bad = cli(with({"train", "--out", o, "--run-name", "nan", "--max-epochs", "2", "--learning-rate", "inf"}, kTinyModel));
  CHECK(bad.code == kExitDivergence);
}

TEST_CASE("cli lambda zero matches bce only") {
  auto root = prepared_root("cli_lambda");
  const std::string o = root.string();
  auto common = with({"--out", o, "--max-epochs", "2", "--augment", "--seed", "5"}, kTinyModel);
  REQUIRE(cli(with({"train", "--run-name", "zero", "--lambda-c", "0"}, common)).code == kExitOk);
  REQUIRE(cli(with({"train", "--run-name", "bce", "--bce-only"}, common)).code == kExitOk);
  auto col = [](const std::string& csv, const std::string& name) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    std::stringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) header.push_back(c);
    auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    REQUIRE(idx < header.size());
    std::vector<std::string> out;
    while (std::getline(in, line)) {
      std::stringstream ls(line);
      std::vector<std::string> cells;
      for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
      out.push_back(cells.at(idx));
    }
    return out;
  };
  auto a = col(testing::slurp(root / "runs" / "zero" / "history.csv"), "train_loss");
  auto b = col(testing::slurp(root / "runs" / "bce" / "history.csv"), "train_loss");
  CHECK(a.size() == 2u);
  CHECK(a == b);
}

TEST_CASE("cli report stub and determinism") {
  auto empty = testing::temp_dir("cli_report_empty");
  auto r = cli({"report", "--out", empty.string()});
  CHECK(r.code == kExitOk);
  CHECK(testing::slurp(empty / "report.md").find("No results found under") != std::string::npos);

  auto root = prepared_root("cli_report");
  const std::string o = root.string();
  REQUIRE(cli(with({"train", "--out", o, "--max-epochs", "1"}, kTinyModel)).code == kExitOk);
  REQUIRE(cli({"report", "--out", o}).code == kExitOk);
  auto first = testing::slurp(root / "report.md");
  CHECK(first.find("No results found") == std::string::npos);
  REQUIRE(cli({"report", "--out", o}).code == kExitOk);
  CHECK(testing::slurp(root / "report.md") == first);
}

TEST_CASE("cli lambda sweep writes complete tables and a figure") {
  auto root = prepared_root("cli_sweep");
  const std::string o = root.string();
  auto r = cli(with({"ablate", "lambda-sweep", "--out", o, "--seeds", "0", "--max-epochs", "1"}, kTinyModel));
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  auto dir = root / "ablate" / "lambda-sweep";
  CHECK(lines(testing::slurp(dir / "results.csv")) == 6u);
  CHECK(lines(testing::slurp(dir / "summary.csv")) == 6u);
  CHECK(testing::slurp(dir / "summary.svg").find("<svg") != std::string::npos);
}
