#include "dcl4kt/synth.hpp"

#include "dcl4kt/csv.hpp"
#include "dcl4kt/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace dcl4kt {

namespace {

constexpr const char* kWords[] = {
    "compute", "the",    "value",   "of",      "given",  "that",     "each",   "find",    "sum",     "ratio",
    "angle",   "area",   "number",  "when",    "total",  "between",  "two",    "three",   "square",  "root",
    "simplify", "and",   "solve",   "for",     "x",      "if",       "graph",  "line",    "slope",   "point",
    "fraction", "whole", "product", "divide",  "equal",  "remaining", "circle", "length", "estimate", "nearest",
};
constexpr std::size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string padded(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

std::string sentence(int words, Rng& rng) {
  std::string out;
  for (int w = 0; w < words; ++w) {
    if (w) out += ' ';
    out += kWords[uniform_index(rng, kWordCount)];
  }
  return out;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& cfg) {
  if (cfg.students < 1 || cfg.questions < 1 || cfg.concepts < 1 || cfg.concepts > cfg.questions)
    throw InputError("synth: need students >= 1 and 1 <= concepts <= questions");
  if (cfg.min_length < 1 || cfg.max_length < cfg.min_length) throw InputError("synth: bad sequence length range");
  if (!(cfg.target_correct > 0 && cfg.target_correct < 1)) throw InputError("synth: target_correct must be in (0,1)");

  auto rng = derive_rng(cfg.seed, {0x5e7});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> b(static_cast<std::size_t>(cfg.questions));
  for (auto& v : b) v = cfg.difficulty_sd * normal(rng);
  std::vector<double> theta(static_cast<std::size_t>(cfg.students));
  for (auto& v : theta) v = cfg.ability_sd * normal(rng);
  // Every concept owns at least one question.
  std::vector<int> q_concept(static_cast<std::size_t>(cfg.questions));
  for (int q = 0; q < cfg.questions; ++q) q_concept[static_cast<std::size_t>(q)] = q % cfg.concepts;
  std::shuffle(q_concept.begin(), q_concept.end(), rng);

  // Offset so the population mean matches target_correct.
  double lo = -10, hi = 10;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi), m = 0;
    for (double t : theta)
      for (double bq : b) m += sigmoid(t + mid - bq);
    m /= static_cast<double>(theta.size() * b.size());
    (m < cfg.target_correct ? lo : hi) = mid;
  }
  const double offset = 0.5 * (lo + hi);

  SynthData out;
  const int qw = static_cast<int>(std::to_string(cfg.questions).size());
  const int cw = static_cast<int>(std::to_string(cfg.concepts).size());
  const int sw = static_cast<int>(std::to_string(cfg.students).size());
  auto qid = [&](int q) { return padded("q", q + 1, qw); };
  auto cid = [&](int c) { return padded("c", c + 1, cw); };

  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double span = std::max(1e-9, *bmax - *bmin);
  for (int q = 0; q < cfg.questions; ++q) {
    // Harder items get longer statements.
    double z = (b[static_cast<std::size_t>(q)] - *bmin) / span;
    int words = std::clamp(static_cast<int>(std::lround(3 + 14 * z)) + static_cast<int>(uniform_index(rng, 3)) - 1, 2, 20);
    out.question_texts[qid(q)] = sentence(words, rng);
    out.question_logit[qid(q)] = b[static_cast<std::size_t>(q)];
  }
  for (int c = 0; c < cfg.concepts; ++c) {
    double mean_b = 0;
    int n = 0;
    for (int q = 0; q < cfg.questions; ++q)
      if (q_concept[static_cast<std::size_t>(q)] == c) mean_b += b[static_cast<std::size_t>(q)], ++n;
    mean_b /= n;
    double z = std::clamp((mean_b - *bmin) / span, 0.0, 1.0);
    out.concept_texts[cid(c)] = "topic " + sentence(1 + static_cast<int>(std::lround(8 * z)), rng);
  }

  for (int s = 0; s < cfg.students; ++s) {
    auto srng = derive_rng(cfg.seed, {0x5e8, static_cast<std::uint64_t>(s)});
    int len = cfg.min_length + static_cast<int>(uniform_index(srng, static_cast<std::size_t>(cfg.max_length - cfg.min_length + 1)));
    std::vector<double> mastery(static_cast<std::size_t>(cfg.concepts), 0.0);
    std::int64_t ts = 1'600'000'000'000 + static_cast<std::int64_t>(s) * 1000;
    // Students work through a few concepts at a time.
    int focus = static_cast<int>(uniform_index(srng, static_cast<std::size_t>(cfg.concepts)));
    for (int t = 0; t < len; ++t) {
      if (uniform01(srng) < 0.15) focus = static_cast<int>(uniform_index(srng, static_cast<std::size_t>(cfg.concepts)));
      int q;
      do {
        q = static_cast<int>(uniform_index(srng, static_cast<std::size_t>(cfg.questions)));
      } while (q_concept[static_cast<std::size_t>(q)] != focus && uniform01(srng) < 0.8);
      int c = q_concept[static_cast<std::size_t>(q)];
      double p = sigmoid(theta[static_cast<std::size_t>(s)] + mastery[static_cast<std::size_t>(c)] + offset -
                         b[static_cast<std::size_t>(q)]);
      int r = bernoulli(srng, p) ? 1 : 0;
      mastery[static_cast<std::size_t>(c)] += cfg.learning_gain * (r ? 1.0 : 0.5);
      ts += 30'000 + static_cast<std::int64_t>(uniform_index(srng, 60'000));
      out.interactions.push_back({padded("s", s + 1, sw), qid(q), cid(c), r, ts});
    }
  }
  return out;
}

void write_synthetic(const std::filesystem::path& dir, const SynthData& data) {
  {
    csv::Writer w(dir / "interactions.csv");
    w.row({"user_id", "question_id", "concept_id", "response", "timestamp"});
    for (const auto& r : data.interactions)
      w.row({r.student_id, r.question_id, r.concept_id, std::to_string(r.response),
             r.timestamp ? std::to_string(*r.timestamp) : std::string()});
  }
  auto texts = [&](const std::filesystem::path& p, const TextMap& m) {
    csv::Writer w(p);
    w.row({"id", "text"});
    for (const auto& [id, text] : m) w.row({id, text});
  };
  texts(dir / "question_texts.csv", data.question_texts);
  texts(dir / "concept_texts.csv", data.concept_texts);
}

Dataset to_dataset(const SynthData& data) {
  Dataset d = build_dataset(data.interactions);
  d.question_texts = std::make_shared<const TextMap>(data.question_texts);
  d.concept_texts = std::make_shared<const TextMap>(data.concept_texts);
  return d;
}

}  // namespace dcl4kt
