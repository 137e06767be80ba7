#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace mvqa {

using TokenList = std::vector<std::string>;

struct BleuStats {
  std::vector<long> matches;  // clipped n-gram matches per order
  std::vector<long> totals;   // candidate n-grams per order
  long candidate_length = 0;
  long reference_length = 0;
  std::vector<double> precisions;
  double brevity_penalty = 0.0;
  double score = 0.0;
};

// Corpus-level BLEU: BP * exp(sum_n log(p_n) / max_n) with per-reference clipping.
// BP = 1 if c > r else exp(1 - r/c). With smoothing, a zero-match order uses
// 1 / (2 * candidate n-gram count) instead of 0. An order for which neither
// side has any n-gram (all sentences shorter than n) has precision 1.
BleuStats bleu_stats(std::span<const TokenList> candidates, std::span<const TokenList> references, int max_n,
                     bool smoothing);
double bleu(std::span<const TokenList> candidates, std::span<const TokenList> references, int max_n,
            bool smoothing = false);

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
};

// Exact-match unigram alignment: maximal matches, then minimal chunks.
MeteorAlignment meteor_align(const TokenList& candidate, const TokenList& reference);

// F_mean = 10PR / (R + 9P), penalty = 0.5 (chunks/matches)^3, score = F_mean (1 - penalty).
double meteor_lite(const TokenList& candidate, const TokenList& reference);

struct ExampleScore {
  std::string qid;
  double bleu1 = 0.0;  // smoothed sentence BLEU-1
  double bleu4 = 0.0;  // smoothed sentence BLEU-4
  double meteor = 0.0;
  bool missing = false;
};

struct MetricsReport {
  std::string label;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double bleu1_smoothed = 0.0;
  double bleu4_smoothed = 0.0;
  double meteor = 0.0;
  std::size_t examples = 0;
  std::size_t generated = 0;
  std::size_t missing = 0;
  long candidate_tokens = 0;
  long reference_tokens = 0;
  std::vector<ExampleScore> per_example;

  std::string to_json(bool include_examples = true) const;
  // Aligned plain-text table with the ablation column layout.
  std::string to_table(bool verbose = false) const;
};

// Joins generations to gold by qid; gold entries without a generation are
// scored as empty candidates. Throws DataError on qids absent from gold.
MetricsReport evaluate_corpus(const std::map<std::string, TokenList>& generations,
                              const std::map<std::string, TokenList>& gold);

// Several reports as one table, rows in the given order.
std::string format_table(std::span<const MetricsReport> rows, const std::string& first_column = "Model",
                         bool verbose = false);

}  // namespace mvqa
