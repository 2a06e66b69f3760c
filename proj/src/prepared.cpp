#include "dcl4kt/prepared.hpp"

#include "dcl4kt/csv.hpp"

#include <fstream>
#include <json.hpp>

namespace dcl4kt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSplitNames[3] = {"train", "valid", "test"};

void write_texts(const fs::path& path, const TextMap& texts) {
  csv::Writer w(path);
  w.row({"id", "text"});
  for (const auto& [id, text] : texts) w.row({id, text});
}

fs::path sibling_or(const fs::path& given, const fs::path& input, const char* name) {
  if (!given.empty()) return given;
  auto candidate = input.parent_path() / name;
  return fs::exists(candidate) ? candidate : fs::path();
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError("missing artifact: " + p.string() + " (run prepare first)");
}

}  // namespace

PrepareSummary prepare_artifacts(const PrepareOptions& opts, const fs::path& dir) {
  Dataset d = load_interactions(opts.input, opts.columns);
  auto qt = sibling_or(opts.question_texts, opts.input, "question_texts.csv");
  auto ct = sibling_or(opts.concept_texts, opts.input, "concept_texts.csv");
  if (!qt.empty()) d.question_texts = std::make_shared<const TextMap>(load_texts(qt));
  if (!ct.empty()) d.concept_texts = std::make_shared<const TextMap>(load_texts(ct));

  auto split = split_dataset(d, opts.ratio, opts.seed);
  auto table = compute_ctt(split.train);

  fs::create_directories(dir);
  const Dataset* parts[3] = {&split.train, &split.valid, &split.test};
  PrepareSummary s;
  json manifest;
  manifest["format"] = kPreparedFormat;
  manifest["seed"] = opts.seed;
  manifest["ratio"] = {{"train", opts.ratio.train}, {"valid_of_train", opts.ratio.valid_of_train}, {"test", opts.ratio.test}};
  for (int i = 0; i < 3; ++i) {
    write_interactions(dir / (std::string(kSplitNames[i]) + ".csv"), *parts[i]);
    s.students[i] = parts[i]->students.size();
    s.interactions[i] = parts[i]->interaction_count();
    manifest["splits"][kSplitNames[i]] = {{"file", std::string(kSplitNames[i]) + ".csv"},
                                           {"students", s.students[i]},
                                           {"interactions", s.interactions[i]}};
  }
  write_vocabs(dir, d);
  write_table(dir / "difficulty.csv", table, *d.questions, *d.concepts);
  manifest["difficulty"] = "difficulty.csv";
  s.dropped_rows = d.dropped_rows;
  s.questions = d.questions->live_size();
  s.concepts = d.concepts->live_size();
  manifest["dropped_rows"] = d.dropped_rows;
  manifest["vocab"] = {{"questions", s.questions}, {"concepts", s.concepts}};
  s.question_texts = d.question_texts != nullptr;
  s.concept_texts = d.concept_texts != nullptr;
  if (s.question_texts) write_texts(dir / "question_texts.csv", *d.question_texts);
  if (s.concept_texts) write_texts(dir / "concept_texts.csv", *d.concept_texts);
  manifest["text_features"] = {{"question", s.question_texts}, {"concept", s.concept_texts}};

  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  return s;
}

Prepared load_prepared(const fs::path& dir, const fs::path& difficulty) {
  const auto manifest_path = dir / "manifest.json";
  require(manifest_path);
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kPreparedFormat) throw InputError(manifest_path.string() + ": unknown format");
  require(dir / "vocab_questions.csv");
  require(dir / "vocab_concepts.csv");
  FixedVocab vocab = read_vocabs(dir);

  std::shared_ptr<const TextMap> qt, ct;
  if (fs::exists(dir / "question_texts.csv")) qt = std::make_shared<const TextMap>(load_texts(dir / "question_texts.csv"));
  if (fs::exists(dir / "concept_texts.csv")) ct = std::make_shared<const TextMap>(load_texts(dir / "concept_texts.csv"));

  Dataset empty;
  empty.questions = vocab.questions;
  empty.concepts = vocab.concepts;
  empty.question_concept = vocab.question_concept;
  empty.question_texts = qt;
  empty.concept_texts = ct;

  Prepared p;
  p.dir = dir;
  Dataset* parts[3] = {&p.split.train, &p.split.valid, &p.split.test};
  for (int i = 0; i < 3; ++i) {
    const auto& entry = manifest.at("splits").at(kSplitNames[i]);
    auto path = dir / entry.at("file").get<std::string>();
    require(path);
    if (entry.at("students").get<std::size_t>() == 0) {
      *parts[i] = empty;
      continue;
    }
    Dataset d = load_interactions(path, {}, &vocab);
    d.question_texts = qt;
    d.concept_texts = ct;
    *parts[i] = std::move(d);
  }
  p.split.ratio = {manifest["ratio"].value("train", 0.8), manifest["ratio"].value("valid_of_train", 0.1),
                   manifest["ratio"].value("test", 0.2)};
  auto table_path = difficulty.empty() ? dir / manifest.value("difficulty", "difficulty.csv") : difficulty;
  require(table_path);
  p.table = read_table(table_path, *vocab.questions, *vocab.concepts);
  return p;
}

Dataset merge_splits(const DataSplit& split) {
  std::vector<StudentSequence> all = split.train.students;
  for (const Dataset* d : {&split.valid, &split.test}) all.insert(all.end(), d->students.begin(), d->students.end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.student_id < b.student_id; });
  return split.train.with_students(std::move(all));
}

}  // namespace dcl4kt
