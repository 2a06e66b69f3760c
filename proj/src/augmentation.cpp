#include "dcl4kt/augmentation.hpp"

#include "dcl4kt/config.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dcl4kt {

namespace {

constexpr std::array<std::string_view, kStrategyCount> kNames = {
    "cutoff",  "span_cutoff",     "mask",           "crop",          "summarize", "reverse",
    "permute", "segment_permute", "replace_higher", "replace_lower", "concat"};

constexpr std::array<std::string_view, kStrategyCount> kKeys = {
    "cutoff",  "span_cutoff",     "mask",                "crop",               "summarize", "reverse",
    "permute", "segment_permute", "replace_higher_diff", "replace_lower_diff", "concat_seq"};

Sequence keep_one(const Sequence& seq, Rng& rng) { return {seq[uniform_index(rng, seq.size())]}; }

}  // namespace

std::string_view to_string(Strategy s) { return kNames[static_cast<std::size_t>(s)]; }
std::string_view key_of(Strategy s) { return kKeys[static_cast<std::size_t>(s)]; }

bool AugmentationConfig::any() const {
  return std::any_of(prob.begin(), prob.end(), [](double p) { return p > 0.0; });
}

void AugmentationConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (std::size_t i = 0; i < kStrategyCount; ++i)
    if (!unit(prob[i])) throw InputError(std::string(kKeys[i]) + "_prob must be in [0,1]");
  if ((*this)[Strategy::Cutoff] > 0 && (*this)[Strategy::SpanCutoff] > 0)
    throw InputError("cutoff and span_cutoff are mutually exclusive; enable only one");
  for (double v : {mask_rate, crop_keep, summarize_keep, cutoff_rate, span_cutoff_rate, replace_rate})
    if (!unit(v)) throw InputError("augmentation strength must be in [0,1]");
  if (segment_len < 1) throw InputError("segment_len must be >= 1");
  if (max_len < 1) throw InputError("max_len must be >= 1");
}

AugmentationConfig AugmentationConfig::training_defaults() {
  AugmentationConfig c;
  c[Strategy::Mask] = 0.2;
  c[Strategy::Crop] = 0.1;
  c[Strategy::Summarize] = 0.2;
  c[Strategy::Reverse] = 0.1;
  c[Strategy::Permute] = 0.1;
  c[Strategy::SegmentPermute] = 0.1;
  c[Strategy::ReplaceHigher] = 0.1;
  c[Strategy::ReplaceLower] = 0.1;
  c[Strategy::Concat] = 0.1;
  c[Strategy::Cutoff] = 0.03;
  return c;
}

AugmentationConfig AugmentationConfig::mixed() {
  AugmentationConfig c;
  c[Strategy::Mask] = 0.2;
  c[Strategy::Crop] = 0.2;
  c[Strategy::Summarize] = 0.2;
  c[Strategy::Reverse] = 0.2;
  c[Strategy::Permute] = 0.3;
  c[Strategy::SegmentPermute] = 0.2;
  c[Strategy::ReplaceHigher] = 0.3;
  c[Strategy::ReplaceLower] = 0.2;
  c[Strategy::Concat] = 0.2;
  c[Strategy::Cutoff] = 0.03;
  return c;
}

AugmentationConfig AugmentationConfig::from_config(const Config& cfg, AugmentationConfig base) {
  for (std::size_t i = 0; i < kStrategyCount; ++i)
    base.prob[i] = cfg.get_double(std::string(kKeys[i]) + "_prob", base.prob[i]);
  base.mask_rate = cfg.get_double("mask_rate", base.mask_rate);
  base.crop_keep = cfg.get_double("crop_keep", base.crop_keep);
  base.summarize_keep = cfg.get_double("summarize_keep", base.summarize_keep);
  base.cutoff_rate = cfg.get_double("cutoff_rate", base.cutoff_rate);
  base.span_cutoff_rate = cfg.get_double("span_cutoff_rate", base.span_cutoff_rate);
  base.segment_len = static_cast<int>(cfg.get_int("segment_len", base.segment_len));
  base.replace_rate = cfg.get_double("replace_rate", base.replace_rate);
  base.max_len = static_cast<int>(cfg.get_int("max_len", base.max_len));
  base.rng_seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(base.rng_seed)));
  base.validate();
  return base;
}

ReplacementIndex::ReplacementIndex(const DifficultyTable& table, std::vector<int> question_concept)
    : table_(&table), question_concept_(std::move(question_concept)) {
  for (const auto& [q, d] : table.question_diff) sorted_.emplace_back(d, q);
  std::sort(sorted_.begin(), sorted_.end());
}

double ReplacementIndex::difficulty(int question) const {
  return lookup(*table_, question, ItemKind::Question, View::Positive);
}

int ReplacementIndex::concept_of(int question) const {
  auto i = static_cast<std::size_t>(question);
  return i < question_concept_.size() ? question_concept_[i] : 0;
}

std::optional<int> ReplacementIndex::pick(int question, Direction dir, Rng& rng) const {
  if (!table_ || sorted_.empty()) return std::nullopt;
  const double d = difficulty(question);
  std::size_t lo, hi;
  if (dir == Direction::Higher) {
    lo = static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), std::make_pair(d, INT32_MAX)) -
                                  sorted_.begin());
    hi = sorted_.size();
  } else {
    lo = 0;
    hi = static_cast<std::size_t>(std::lower_bound(sorted_.begin(), sorted_.end(), std::make_pair(d, INT32_MIN)) -
                                  sorted_.begin());
  }
  if (lo >= hi) return std::nullopt;
  return sorted_[lo + uniform_index(rng, hi - lo)].second;
}

std::size_t kept_length(double keep_rate, std::size_t len) {
  auto n = static_cast<std::size_t>(std::ceil(keep_rate * static_cast<double>(len) - 1e-9));
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(len, 1));
}

Sequence cutoff(const Sequence& seq, CutoffMode mode, double rate, Rng& rng) {
  if (seq.empty()) return seq;
  Sequence out;
  if (mode == CutoffMode::Token) {
    for (const auto& s : seq)
      if (!bernoulli(rng, rate)) out.push_back(s);
  } else {
    auto span = static_cast<std::size_t>(std::llround(rate * static_cast<double>(seq.size())));
    span = std::min(span, seq.size());
    auto start = uniform_index(rng, seq.size() - span + 1);
    out.insert(out.end(), seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(start));
    out.insert(out.end(), seq.begin() + static_cast<std::ptrdiff_t>(start + span), seq.end());
  }
  return out.empty() ? keep_one(seq, rng) : out;
}

Sequence mask_items(const Sequence& seq, MaskTarget target, double mask_rate, int mask_index, Rng& rng) {
  Sequence out = seq;
  for (auto& s : out)
    if (bernoulli(rng, mask_rate)) (target == MaskTarget::Question ? s.question : s.kc) = mask_index;
  return out;
}

Sequence crop(const Sequence& seq, double keep_rate, Rng& rng) {
  if (seq.empty()) return seq;
  auto n = kept_length(keep_rate, seq.size());
  auto start = uniform_index(rng, seq.size() - n + 1);
  return Sequence(seq.begin() + static_cast<std::ptrdiff_t>(start),
                  seq.begin() + static_cast<std::ptrdiff_t>(start + n));
}

Sequence summarize(const Sequence& seq, double keep_rate, Rng& rng) {
  if (seq.empty()) return seq;
  auto n = kept_length(keep_rate, seq.size());
  std::vector<std::size_t> idx(seq.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates for a uniform subset.
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Sequence out;
  out.reserve(n);
  for (auto i : idx) out.push_back(seq[i]);
  return out;
}

Sequence reverse(const Sequence& seq) { return Sequence(seq.rbegin(), seq.rend()); }

Sequence permute(const Sequence& seq, PermuteMode mode, int segment_len, Rng& rng) {
  Sequence out = seq;
  if (mode == PermuteMode::Element) {
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }
  if (segment_len < 1) throw InputError("segment_len must be >= 1");
  auto seg = static_cast<std::size_t>(segment_len);
  std::vector<std::size_t> blocks;
  for (std::size_t b = 0; b < seq.size(); b += seg) blocks.push_back(b);
  std::shuffle(blocks.begin(), blocks.end(), rng);
  out.clear();
  for (auto b : blocks) {
    auto e = std::min(seq.size(), b + seg);
    out.insert(out.end(), seq.begin() + static_cast<std::ptrdiff_t>(b), seq.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

Sequence replace_by_difficulty(const Sequence& seq, Direction dir, double rate, const ReplacementIndex& index,
                               Rng& rng) {
  Sequence out = seq;
  for (auto& s : out) {
    if (!bernoulli(rng, rate)) continue;
    if (auto q = index.pick(s.question, dir, rng)) {
      s.question = *q;
      s.kc = index.concept_of(*q);
    }
  }
  return out;
}

Sequence concat_sequences(const Sequence& a, const Sequence& b, int max_len) {
  Sequence out = a;
  out.insert(out.end(), b.begin(), b.end());
  auto cap = static_cast<std::size_t>(std::max(max_len, 1));
  if (out.size() > cap) out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(cap));
  return out;
}

AugmentedBatch apply_pipeline(std::span<const Sequence> batch, const AugmentationConfig& cfg,
                              const AugmentContext& ctx, std::uint64_t stream, Mode mode) {
  AugmentedBatch out;
  out.sequences.assign(batch.begin(), batch.end());
  out.fired.assign(batch.size(), {});
  if (mode == Mode::Eval) return out;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto rng = derive_rng(cfg.rng_seed, {stream, i});
    auto& seq = out.sequences[i];
    auto& fired = out.fired[i];
    if (seq.empty()) continue;
    for (std::size_t k = 0; k < kStrategyCount; ++k) {
      auto s = static_cast<Strategy>(k);
      // Draw for every strategy so one strategy's probability does not shift
      // the stream seen by the others.
      bool fire = bernoulli(rng, cfg.prob[k]);
      if (!fire) continue;
      fired[k] = true;
      switch (s) {
        case Strategy::Cutoff:
          seq = cutoff(seq, CutoffMode::Token, cfg.cutoff_rate, rng);
          break;
        case Strategy::SpanCutoff:
          seq = cutoff(seq, CutoffMode::Span, cfg.span_cutoff_rate, rng);
          break;
        case Strategy::Mask:
          seq = mask_items(seq, MaskTarget::Question, cfg.mask_rate, ctx.question_mask, rng);
          seq = mask_items(seq, MaskTarget::Concept, cfg.mask_rate, ctx.concept_mask, rng);
          break;
        case Strategy::Crop:
          seq = crop(seq, cfg.crop_keep, rng);
          break;
        case Strategy::Summarize:
          seq = summarize(seq, cfg.summarize_keep, rng);
          break;
        case Strategy::Reverse:
          seq = reverse(seq);
          break;
        case Strategy::Permute:
          seq = permute(seq, PermuteMode::Element, 1, rng);
          break;
        case Strategy::SegmentPermute:
          seq = permute(seq, PermuteMode::Segment, cfg.segment_len, rng);
          break;
        case Strategy::ReplaceHigher:
        case Strategy::ReplaceLower:
          if (ctx.replacement)
            seq = replace_by_difficulty(seq, s == Strategy::ReplaceHigher ? Direction::Higher : Direction::Lower,
                                        cfg.replace_rate, *ctx.replacement, rng);
          break;
        case Strategy::Concat: {
          std::size_t j = i;
          if (batch.size() > 1) {
            j = uniform_index(rng, batch.size() - 1);
            if (j >= i) ++j;
          }
          seq = concat_sequences(seq, batch[j], cfg.max_len);
          break;
        }
      }
    }
  }
  return out;
}

AugmentedBatch AugmentationPipeline::operator()(std::span<const Sequence> batch, std::uint64_t stream,
                                                Mode mode) const {
  (mode == Mode::Train ? train_calls_ : eval_calls_).fetch_add(1);
  return apply_pipeline(batch, cfg_, ctx_, stream, mode);
}

}  // namespace dcl4kt
