#pragma once

#include "dcl4kt/dataset.hpp"

#include <filesystem>
#include <vector>

namespace dcl4kt {

/// Logistic ground truth: P(correct) = sigmoid(ability_s + mastery_{s,c}
/// + offset - b_q), where mastery grows with each practice of concept c.
struct SynthConfig {
  int students = 200;
  int questions = 50;
  int concepts = 10;
  int min_length = 20;
  int max_length = 100;
  double ability_sd = 1.0;
  double difficulty_sd = 1.2;
  double learning_gain = 0.08;
  /// Mean correctness the offset is calibrated to.
  double target_correct = 0.7;
  std::uint64_t seed = 0;
};

struct SynthData {
  std::vector<Interaction> interactions;
  TextMap question_texts;
  TextMap concept_texts;
  /// Latent item difficulty b_q, keyed like question_texts.
  std::map<std::string, double> question_logit;
};

SynthData generate_synthetic(const SynthConfig& cfg);

/// Interactions CSV plus question_texts.csv and concept_texts.csv.
void write_synthetic(const std::filesystem::path& dir, const SynthData& data);

/// Dataset with vocabularies and texts attached.
Dataset to_dataset(const SynthData& data);

}  // namespace dcl4kt
