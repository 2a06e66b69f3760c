#pragma once

#include "dcl4kt/dataset.hpp"
#include "dcl4kt/difficulty.hpp"
#include "dcl4kt/encoder.hpp"
#include "dcl4kt/random.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace testing {

using namespace dcl4kt;

/// (question, concept, response) triples per student; ids become "q<i>", "c<i>".
using RawLog = std::vector<std::vector<std::tuple<int, int, int>>>;

inline std::vector<Interaction> interactions(const RawLog& log, const std::string& prefix = "s") {
  std::vector<Interaction> rows;
  std::int64_t ts = 0;
  for (std::size_t s = 0; s < log.size(); ++s)
    for (auto [q, c, r] : log[s])
      rows.push_back({prefix + std::to_string(s), "q" + std::to_string(q), "c" + std::to_string(c), r, ts++});
  return rows;
}

inline Dataset dataset(const RawLog& log, const FixedVocab* fixed = nullptr) {
  auto rows = interactions(log);
  return build_dataset(rows, fixed);
}

/// Random log where question q always belongs to concept q % concepts.
inline RawLog random_log(Rng& rng, int students, int questions, int concepts, int min_len, int max_len) {
  RawLog log(students);
  std::uniform_int_distribution<int> len(min_len, max_len), qd(0, questions - 1), rd(0, 1);
  for (auto& s : log) {
    int n = len(rng);
    for (int t = 0; t < n; ++t) {
      int q = qd(rng);
      s.emplace_back(q, q % concepts, rd(rng));
    }
  }
  return log;
}

inline ModelConfig tiny_model(const Dataset& d, int dim = 8, int heads = 2, int layers = 1, int max_len = 12) {
  ModelConfig m;
  m.embed_dim = dim;
  m.num_heads = heads;
  m.layers_per_encoder = layers;
  m.max_len = max_len;
  m.conv_kernel_size = 3;
  m.ffn_multiplier = 2;
  m.dropout = 0.0;
  m.question_rows = d.questions->table_rows();
  m.concept_rows = d.concepts->table_rows();
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dcl4kt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

}  // namespace testing
