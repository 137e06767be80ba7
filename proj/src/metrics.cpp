#include "metavqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "metavqa/error.hpp"

namespace mvqa {

namespace {

using NgramCounts = std::map<std::string, long>;

NgramCounts count_ngrams(const TokenList& toks, int n) {
  NgramCounts counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key.push_back('\x1f');
      key += toks[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuStats bleu_stats(std::span<const TokenList> candidates, std::span<const TokenList> references, int max_n,
                     bool smoothing) {
  if (candidates.size() != references.size()) {
    throw DataError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                    std::to_string(references.size()) + " references");
  }
  if (max_n < 1) throw UsageError("bleu: max_n must be >= 1");
  BleuStats s;
  s.matches.assign(static_cast<std::size_t>(max_n), 0);
  s.totals.assign(static_cast<std::size_t>(max_n), 0);
  std::vector<long> ref_totals(static_cast<std::size_t>(max_n), 0);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    s.candidate_length += static_cast<long>(candidates[k].size());
    s.reference_length += static_cast<long>(references[k].size());
    for (int n = 1; n <= max_n; ++n) {
      const auto cand = count_ngrams(candidates[k], n);
      const auto ref = count_ngrams(references[k], n);
      for (const auto& [gram, c] : cand) {
        auto it = ref.find(gram);
        s.matches[static_cast<std::size_t>(n - 1)] += std::min(c, it == ref.end() ? 0L : it->second);
        s.totals[static_cast<std::size_t>(n - 1)] += c;
      }
      for (const auto& [gram, c] : ref) ref_totals[static_cast<std::size_t>(n - 1)] += c;
    }
  }
  if (s.candidate_length == 0) return s;

  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < max_n; ++n) {
    const auto m = s.matches[static_cast<std::size_t>(n)];
    const auto t = s.totals[static_cast<std::size_t>(n)];
    // An order with no n-grams on either side is vacuous: nothing to match, nothing missed.
    const bool vacuous = t == 0 && ref_totals[static_cast<std::size_t>(n)] == 0;
    double p = t > 0 ? static_cast<double>(m) / static_cast<double>(t) : (vacuous ? 1.0 : 0.0);
    if (m == 0 && smoothing && !vacuous) p = 1.0 / (2.0 * static_cast<double>(std::max(t, 1L)));
    s.precisions.push_back(p);
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  const double c = static_cast<double>(s.candidate_length);
  const double r = static_cast<double>(s.reference_length);
  s.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / c);
  s.score = zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / max_n);
  return s;
}

double bleu(std::span<const TokenList> candidates, std::span<const TokenList> references, int max_n,
            bool smoothing) {
  return bleu_stats(candidates, references, max_n, smoothing).score;
}

namespace {

struct AlignValue {
  int matches = 0;
  int chunks = 0;
  bool better_than(const AlignValue& o) const {
    return matches != o.matches ? matches > o.matches : chunks < o.chunks;
  }
};

// Exact search over one-to-one alignments. State: candidate index, used
// reference positions, reference index matched by the previous candidate token.
class AlignSearch {
 public:
  AlignSearch(const TokenList& cand, const TokenList& ref) : cand_(cand), ref_(ref) {
    for (const auto& w : cand_) {
      std::vector<int> js;
      for (std::size_t j = 0; j < ref_.size(); ++j) {
        if (ref_[j] == w) js.push_back(static_cast<int>(j));
      }
      options_.push_back(std::move(js));
    }
  }

  AlignValue solve() { return best(0, 0, -1); }

 private:
  AlignValue best(std::size_t i, std::uint64_t used, int prev) {
    if (i == cand_.size()) return {};
    const std::uint64_t key_hi = (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint32_t>(prev + 1);
    auto& slot = memo_[key_hi];
    if (auto it = slot.find(used); it != slot.end()) return it->second;

    AlignValue result = best(i + 1, used, -1);
    for (int j : options_[i]) {
      if (used & (std::uint64_t{1} << j)) continue;
      AlignValue v = best(i + 1, used | (std::uint64_t{1} << j), j);
      v.matches += 1;
      v.chunks += (prev >= 0 && j == prev + 1) ? 0 : 1;
      if (v.better_than(result)) result = v;
    }
    memo_[key_hi][used] = result;
    return result;
  }

  const TokenList& cand_;
  const TokenList& ref_;
  std::vector<std::vector<int>> options_;
  std::unordered_map<std::uint64_t, std::unordered_map<std::uint64_t, AlignValue>> memo_;
};

// Left-to-right heuristic for references longer than the exact search supports.
MeteorAlignment greedy_align(const TokenList& cand, const TokenList& ref) {
  std::vector<bool> used(ref.size(), false);
  MeteorAlignment a;
  int prev = -1;
  for (const auto& w : cand) {
    int pick = -1;
    if (prev >= 0 && static_cast<std::size_t>(prev + 1) < ref.size() && !used[static_cast<std::size_t>(prev + 1)] &&
        ref[static_cast<std::size_t>(prev + 1)] == w) {
      pick = prev + 1;
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == w) {
          pick = static_cast<int>(j);
          break;
        }
      }
    }
    if (pick >= 0) {
      used[static_cast<std::size_t>(pick)] = true;
      ++a.matches;
      if (!(prev >= 0 && pick == prev + 1)) ++a.chunks;
    }
    prev = pick;
  }
  return a;
}

}  // namespace

MeteorAlignment meteor_align(const TokenList& candidate, const TokenList& reference) {
  if (reference.size() > 64) return greedy_align(candidate, reference);
  AlignSearch search(candidate, reference);
  const auto v = search.solve();
  return {v.matches, v.chunks};
}

double meteor_lite(const TokenList& candidate, const TokenList& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = a.matches;
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

MetricsReport evaluate_corpus(const std::map<std::string, TokenList>& generations,
                              const std::map<std::string, TokenList>& gold) {
  std::vector<std::string> unknown;
  for (const auto& [qid, _] : generations) {
    if (!gold.contains(qid)) unknown.push_back(qid);
  }
  if (!unknown.empty()) {
    std::string msg = "generations reference unknown qids:";
    for (std::size_t i = 0; i < unknown.size() && i < 10; ++i) msg += " " + unknown[i];
    if (unknown.size() > 10) msg += " ...";
    throw DataError(msg);
  }

  MetricsReport r;
  std::vector<TokenList> cands, refs;
  static const TokenList kEmpty;
  for (const auto& [qid, ref] : gold) {
    auto it = generations.find(qid);
    const bool missing = it == generations.end();
    const TokenList& cand = missing ? kEmpty : it->second;
    cands.push_back(cand);
    refs.push_back(ref);
    ExampleScore e;
    e.qid = qid;
    e.missing = missing;
    const std::span<const TokenList> one_c(&cand, 1), one_r(&ref, 1);
    e.bleu1 = bleu(one_c, one_r, 1, true);
    e.bleu4 = bleu(one_c, one_r, 4, true);
    e.meteor = meteor_lite(cand, ref);
    r.meteor += e.meteor;
    r.per_example.push_back(std::move(e));
    if (missing) {
      ++r.missing;
    } else {
      ++r.generated;
    }
  }
  r.examples = gold.size();
  if (r.examples) r.meteor /= static_cast<double>(r.examples);
  const auto b1 = bleu_stats(cands, refs, 1, false);
  r.bleu1 = b1.score;
  r.bleu4 = bleu(cands, refs, 4, false);
  r.bleu1_smoothed = bleu(cands, refs, 1, true);
  r.bleu4_smoothed = bleu(cands, refs, 4, true);
  r.candidate_tokens = b1.candidate_length;
  r.reference_tokens = b1.reference_length;
  return r;
}

std::string MetricsReport::to_json(bool include_examples) const {
  nlohmann::ordered_json j = {{"label", label},
                              {"bleu1", bleu1},
                              {"bleu4", bleu4},
                              {"bleu1_smoothed", bleu1_smoothed},
                              {"bleu4_smoothed", bleu4_smoothed},
                              {"meteor", meteor},
                              {"examples", examples},
                              {"generated", generated},
                              {"missing", missing},
                              {"candidate_tokens", candidate_tokens},
                              {"reference_tokens", reference_tokens}};
  if (include_examples) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : per_example) {
      arr.push_back({{"qid", e.qid}, {"bleu1", e.bleu1}, {"bleu4", e.bleu4}, {"meteor", e.meteor},
                     {"missing", e.missing}});
    }
    j["per_example"] = std::move(arr);
  }
  return j.dump(2);
}

std::string format_table(std::span<const MetricsReport> rows, const std::string& first_column, bool verbose) {
  std::size_t w = first_column.size();
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %7s  %7s  %7s", static_cast<int>(w), first_column.c_str(), "Bleu-1",
                "Bleu-4", "Meteor");
  os << buf;
  if (verbose) {
    std::snprintf(buf, sizeof buf, "  %9s  %9s  %5s  %7s", "Bleu-1(s)", "Bleu-4(s)", "N", "Missing");
    os << buf;
  }
  os << '\n';
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %7.4f  %7.4f  %7.4f", static_cast<int>(w), r.label.c_str(), r.bleu1,
                  r.bleu4, r.meteor);
    os << buf;
    if (verbose) {
      std::snprintf(buf, sizeof buf, "  %9.4f  %9.4f  %5zu  %7zu", r.bleu1_smoothed, r.bleu4_smoothed, r.examples,
                    r.missing);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string MetricsReport::to_table(bool verbose) const {
  MetricsReport copy = *this;
  if (copy.label.empty()) copy.label = "-";
  return format_table(std::span<const MetricsReport>(&copy, 1), "Model", verbose);
}

}  // namespace mvqa
