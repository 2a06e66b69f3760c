#pragma once

#include "dcl4kt/dataset.hpp"
#include "dcl4kt/difficulty.hpp"

#include <filesystem>
#include <string>

namespace dcl4kt {

inline constexpr const char* kPreparedFormat = "dcl4kt-prepared/1";

struct PrepareOptions {
  std::filesystem::path input;
  ColumnMapping columns;
  /// Empty: look for question_texts.csv / concept_texts.csv next to input.
  std::filesystem::path question_texts;
  std::filesystem::path concept_texts;
  SplitRatio ratio;
  std::uint64_t seed = 0;
};

struct PrepareSummary {
  std::size_t students[3] = {0, 0, 0};
  std::size_t interactions[3] = {0, 0, 0};
  std::size_t dropped_rows = 0;
  int questions = 0;
  int concepts = 0;
  bool question_texts = false;
  bool concept_texts = false;
};

/// Loads, splits and scores the input, then writes split CSVs, vocabularies,
/// the training CTT table, texts and manifest.json into `dir`.
PrepareSummary prepare_artifacts(const PrepareOptions& opts, const std::filesystem::path& dir);

struct Prepared {
  DataSplit split;
  DifficultyTable table;
  std::filesystem::path dir;
};

/// Reads what prepare_artifacts wrote. Throws MissingArtifactError when the
/// manifest or a listed file is absent. `difficulty` overrides the table.
Prepared load_prepared(const std::filesystem::path& dir, const std::filesystem::path& difficulty = {});

/// Train, valid and test students in one dataset.
Dataset merge_splits(const DataSplit& split);

}  // namespace dcl4kt
