#pragma once

#include "dcl4kt/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcl4kt {

struct DifficultyTable;

/// One response event after vocabulary mapping.
struct Step {
  int question = 0;
  int kc = 0;
  int response = 0;

  friend bool operator==(const Step&, const Step&) = default;
  friend auto operator<=>(const Step&, const Step&) = default;
};

using Sequence = std::vector<Step>;

/// Raw interaction as it appears in the input file.
struct Interaction {
  std::string student_id;
  std::string question_id;
  std::string concept_id;
  int response = 0;
  std::optional<std::int64_t> timestamp;
};

/// id <-> index map. Index 0 is padding, real ids occupy 1..n, followed by
/// the UNK and MASK slots.
class Vocab {
 public:
  static constexpr int kPad = 0;

  Vocab();

  /// Index of `id`, inserting it if new.
  int add(const std::string& id);
  /// Index of `id`, or unk() if absent.
  int find(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const std::string& id(int index) const;

  /// Number of real ids.
  int live_size() const { return static_cast<int>(ids_.size()) - 1; }
  int unk() const { return live_size() + 1; }
  int mask() const { return live_size() + 2; }
  /// Rows an embedding table needs: padding, live ids, UNK, MASK.
  int table_rows() const { return live_size() + 3; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
};

struct StudentSequence {
  std::string student_id;
  Sequence steps;
  std::vector<std::int64_t> timestamps;
};

using TextMap = std::map<std::string, std::string>;

struct Dataset {
  std::vector<StudentSequence> students;
  std::shared_ptr<const Vocab> questions;
  std::shared_ptr<const Vocab> concepts;
  /// question index -> concept index of its first occurrence (0 if unknown).
  std::shared_ptr<const std::vector<int>> question_concept;
  std::shared_ptr<const TextMap> question_texts;
  std::shared_ptr<const TextMap> concept_texts;
  std::size_t dropped_rows = 0;

  std::size_t interaction_count() const;
  /// Same vocabularies and texts, different students.
  Dataset with_students(std::vector<StudentSequence> students) const;
};

struct ColumnMapping {
  std::string student = "user_id";
  std::string question = "question_id";
  std::string kc = "concept_id";
  std::string response = "response";
  /// Optional column; rows keep input order when it is absent.
  std::string timestamp = "timestamp";
  /// Separator for multi-concept cells; the first listed concept is used.
  std::string concept_separator = ";";
  /// Zero means infer from the file extension.
  char delimiter = 0;
};

/// Vocabularies to reuse when loading data that must share indices with an
/// earlier load (unknown ids then map to UNK instead of growing the vocab).
struct FixedVocab {
  std::shared_ptr<const Vocab> questions;
  std::shared_ptr<const Vocab> concepts;
  std::shared_ptr<const std::vector<int>> question_concept;
};

/// Groups already-parsed interactions by student and sorts each group by
/// timestamp (stable, so ties keep input order).
Dataset build_dataset(std::span<const Interaction> rows, const FixedVocab* fixed = nullptr);

/// Loads an interaction log. Rows missing a required field or carrying a
/// non-binary response are dropped and counted in Dataset::dropped_rows.
/// Throws IoError if unreadable, InputError if a mapped column is missing,
/// EmptyDatasetError if no valid row remains.
Dataset load_interactions(const std::filesystem::path& path, const ColumnMapping& columns = {},
                          const FixedVocab* fixed = nullptr);

/// (id, text) side file.
TextMap load_texts(const std::filesystem::path& path);

struct SplitRatio {
  double train = 0.8;
  /// Fraction of the training pool moved to validation.
  double valid_of_train = 0.1;
  double test = 0.2;
};

struct DataSplit {
  Dataset train;
  Dataset valid;
  Dataset test;
  SplitRatio ratio;
};

/// Student-level partition. Students are ordered by id and shuffled with
/// `seed`; the test block is taken first, then validation from the pool.
DataSplit split_dataset(const Dataset& d, const SplitRatio& ratio = {}, std::uint64_t seed = 0);

/// Fixed-length model input. Every matrix is [batch, max_len]; padded
/// positions hold index 0 and valid_mask 0.
struct SequenceBatch {
  MatrixXi questions;
  MatrixXi concepts;
  MatrixXi responses;
  MatrixXi q_difficulty_bins;
  MatrixXi c_difficulty_bins;
  /// Bins seen by the hard-negative view (100 - bin for items with a known
  /// difficulty, the negative fallback otherwise).
  MatrixXi q_negative_bins;
  MatrixXi c_negative_bins;
  MatrixXi valid_mask;

  Eigen::Index batch_size() const { return questions.rows(); }
  Eigen::Index max_len() const { return questions.cols(); }
  int length(Eigen::Index row) const { return valid_mask.row(row).sum(); }
};

/// Consecutive non-overlapping windows of at most `max_len` steps.
std::vector<Sequence> make_windows(const Dataset& d, int max_len);

SequenceBatch assemble_batch(std::span<const Sequence> sequences, const DifficultyTable& diff, int max_len);

std::vector<SequenceBatch> make_batches(const Dataset& d, const DifficultyTable& diff, int max_len = 100,
                                        int batch_size = 512);

/// Recovers the sequence stored in one batch row.
Sequence batch_row(const SequenceBatch& b, Eigen::Index row);

/// Writes a split back to the interaction-log format (synthetic timestamps
/// preserve order when the source had none).
void write_interactions(const std::filesystem::path& path, const Dataset& d);

/// vocab_questions.csv (index, question_id, concept_id) and
/// vocab_concepts.csv (index, concept_id) inside `dir`.
void write_vocabs(const std::filesystem::path& dir, const Dataset& d);
FixedVocab read_vocabs(const std::filesystem::path& dir);

}  // namespace dcl4kt
