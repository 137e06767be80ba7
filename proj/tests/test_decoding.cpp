#include <cmath>
#include <map>

#include "doctest.h"
#include "metavqa/decoding.hpp"
#include "metavqa/error.hpp"
#include "metavqa/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mvqa;

namespace {

// Explicit next-token probabilities per prefix; unknown prefixes are uniform.
class TableLM : public TokenScorer {
 public:
  TableLM(int vocab, int eos, std::map<std::vector<int>, std::vector<double>> table)
      : vocab_(vocab), eos_(eos), table_(std::move(table)) {}
  int vocab_size() const override { return vocab_; }
  std::optional<int> eos_id() const override { return eos_; }
  std::vector<double> logits(std::span<const int> prefix) const override {
    auto it = table_.find(std::vector<int>(prefix.begin(), prefix.end()));
    std::vector<double> out(static_cast<std::size_t>(vocab_), 0.0);
    if (it != table_.end()) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(it->second[i]);
    }
    return out;
  }

 private:
  int vocab_, eos_;
  std::map<std::vector<int>, std::vector<double>> table_;
};

DecodeConfig with(Strategy s) {
  DecodeConfig c;
  c.strategy = s;
  return c;
}

}  // namespace

TEST_CASE("softmax and temperature") {
  const std::vector<double> z = {1.0, 2.0, 0.5};
  const auto p = softmax(z);
  double sum = 0;
  for (double x : p) sum += x;
  CHECK(std::abs(sum - 1) < 1e-12);
  CHECK(softmax(z, 0.01)[1] > 0.999);
}

TEST_CASE("nucleus_set cases") {
  const std::vector<double> p = {0.5, 0.3, 0.15, 0.05};
  CHECK(nucleus_set(p, 0.8) == std::vector<int>{0, 1});
  CHECK(nucleus_set(p, 1.0) == std::vector<int>{0, 1, 2, 3});
  CHECK(nucleus_set(p, 0.05) == std::vector<int>{0});
  const std::vector<double> with_zero = {0.0, 0.7, 0.3};
  CHECK(nucleus_set(with_zero, 1.0) == std::vector<int>{1, 2});
  const std::vector<double> ties = {0.25, 0.25, 0.25, 0.25};
  CHECK(nucleus_set(ties, 0.5) == std::vector<int>{0, 1});
  const std::vector<double> shuffled = {0.05, 0.15, 0.5, 0.3};
  CHECK(nucleus_set(shuffled, 0.8) == std::vector<int>{2, 3});
  const std::vector<double> bad = {0.5, 0.2};
  CHECK_THROWS_AS(nucleus_set(bad, 0.5), NumericError);
  CHECK_THROWS_AS(nucleus_set(p, 0.0), UsageError);
  CHECK_THROWS_AS(nucleus_set(p, 1.5), UsageError);
}

TEST_CASE("nucleus sampling frequencies match the renormalized nucleus") {
  const std::vector<double> p = {0.35, 0.25, 0.2, 0.1, 0.06, 0.04};
  const auto support = nucleus_set(p, 0.8);
  REQUIRE(support == std::vector<int>{0, 1, 2});
  Rng rng(2024);
  const int n = 10000;
  std::vector<int> counts(p.size(), 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_nucleus(p, 0.8, rng))];
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double q = k < 3 ? p[k] / 0.8 : 0.0;
    const double sigma = std::sqrt(n * q * (1 - q));
    CHECK(std::abs(counts[k] - n * q) <= 3 * sigma);
  }
}

TEST_CASE("beam equals exhaustive search on a 3-token toy model") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const oracle::ToyLM lm(3, 0, seed);
    auto cfg = with(Strategy::kBeam);
    cfg.beam_width = 27;
    cfg.length_norm_alpha = 0.0;
    cfg.max_new_tokens = 3;
    const auto best = oracle::exhaustive_best(lm, 3);
    const auto r = beam_search(lm, cfg);
    CHECK(r.tokens == best.tokens);
    CHECK(r.score == doctest::Approx(best.score).epsilon(1e-12));
  }
}

TEST_CASE("beam optimality without EOS over vocab 5, horizon 4") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const oracle::ToyLM lm(5, std::nullopt, 100 + seed);
    auto cfg = with(Strategy::kBeam);
    cfg.beam_width = 625;
    cfg.length_norm_alpha = 0.0;
    cfg.max_new_tokens = 4;
    CHECK(beam_search(lm, cfg).tokens == oracle::exhaustive_best(lm, 4).tokens);
  }
}

TEST_CASE("beam width 1 is greedy") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const oracle::ToyLM lm(6, 1, seed);
    auto cfg = with(Strategy::kBeam);
    cfg.beam_width = 1;
    cfg.max_new_tokens = 8;
    CHECK(beam_search(lm, cfg).tokens == greedy_decode(lm, cfg).tokens);
  }
}

TEST_CASE("length normalization changes the winner as hand-scored") {
  // Tokens: 0 = EOS, 1 = a, 2 = b.
  const TableLM lm(3, 0,
                   {{{}, {0.45, 0.54, 0.01}},
                    {{1}, {0.30, 0.01, 0.69}},
                    {{1, 2}, {0.98, 0.01, 0.01}}});
  // [EOS]: ln .45 = -0.799.  [a b EOS]: ln .54 + ln .69 + ln .98 = -1.007, /3 = -0.336.
  auto cfg = with(Strategy::kBeam);
  cfg.beam_width = 2;
  cfg.max_new_tokens = 3;
  cfg.length_norm_alpha = 0.0;
  CHECK(beam_search(lm, cfg).tokens == std::vector<int>{0});
  cfg.length_norm_alpha = 1.0;
  CHECK(beam_search(lm, cfg).tokens == std::vector<int>{1, 2, 0});
}

TEST_CASE("wider beams: never worse at exhaustive width, rarely worse otherwise") {
  // Beam search is not monotone in width in general: a narrow beam can keep a
  // prefix that a wider beam crowds out. Count how often that happens.
  int violations = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const oracle::ToyLM lm(5, 0, 7000 + seed);
    auto cfg = with(Strategy::kBeam);
    cfg.length_norm_alpha = 0.0;
    cfg.max_new_tokens = 4;
    for (int k : {1, 2, 3, 4}) {
      cfg.beam_width = k;
      const double narrow = beam_search(lm, cfg).score;
      cfg.beam_width = 2 * k;
      const double wide = beam_search(lm, cfg).score;
      ++total;
      if (wide < narrow - 1e-12) ++violations;
      cfg.beam_width = 625;
      CHECK(beam_search(lm, cfg).score >= narrow - 1e-12);
    }
  }
  INFO(violations << " of " << total);
  CHECK(violations * 100 < total);
}

TEST_CASE("no tokens after EOS and log-probs are non-positive") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const oracle::ToyLM lm(5, 2, seed);
    for (auto s : {Strategy::kGreedy, Strategy::kBeam, Strategy::kNucleus}) {
      auto cfg = with(s);
      cfg.max_new_tokens = 10;
      cfg.seed = seed;
      const auto r = decode(lm, cfg);
      for (std::size_t i = 0; i + 1 < r.tokens.size(); ++i) CHECK(r.tokens[i] != 2);
      CHECK(r.tokens.size() == r.log_probs.size());
      for (double lp : r.log_probs) CHECK(lp <= 0.0);
      CHECK(r.duration_ms >= 0.0);
    }
  }
}

// Distribution-checking wrapper for the nucleus support property.
class Recorder : public TokenScorer {
 public:
  explicit Recorder(const TokenScorer& inner) : inner_(inner) {}
  int vocab_size() const override { return inner_.vocab_size(); }
  std::optional<int> eos_id() const override { return inner_.eos_id(); }
  std::vector<double> logits(std::span<const int> prefix) const override {
    auto z = inner_.logits(prefix);
    seen.push_back(z);
    return z;
  }
  mutable std::vector<std::vector<double>> seen;

 private:
  const TokenScorer& inner_;
};

TEST_CASE("every sampled token lies in its step's nucleus") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const oracle::ToyLM lm(8, 0, seed);
    const Recorder rec(lm);
    auto cfg = with(Strategy::kNucleus);
    cfg.top_p = 0.7;
    cfg.max_new_tokens = 6;
    cfg.seed = seed;
    const auto r = nucleus_decode(rec, cfg);
    REQUIRE(rec.seen.size() == r.tokens.size());
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      const auto support = nucleus_set(softmax(rec.seen[i]), 0.7);
      CHECK(std::find(support.begin(), support.end(), r.tokens[i]) != support.end());
    }
  }
}

TEST_CASE("nucleus is seed-deterministic and collapses to greedy") {
  const oracle::ToyLM lm(6, 0, 9);
  auto cfg = with(Strategy::kNucleus);
  cfg.max_new_tokens = 8;
  cfg.seed = 4;
  CHECK(nucleus_decode(lm, cfg) == nucleus_decode(lm, cfg));
  cfg.top_p = 1e-9;
  CHECK(nucleus_decode(lm, cfg).tokens == greedy_decode(lm, cfg).tokens);
}

TEST_CASE("max_new_tokens caps output") {
  const oracle::ToyLM lm(6, std::nullopt, 3);
  auto cfg = with(Strategy::kGreedy);
  cfg.max_new_tokens = 1;
  CHECK(greedy_decode(lm, cfg).tokens.size() == 1);
  cfg.max_new_tokens = 0;
  CHECK_THROWS_AS(greedy_decode(lm, cfg), UsageError);
}

TEST_CASE("greedy ties go to the lowest id") {
  const TableLM lm(3, 0, {{{}, {0.2, 0.4, 0.4}}, {{1}, {1.0 - 2e-9, 1e-9, 1e-9}}});
  auto cfg = with(Strategy::kGreedy);
  CHECK(greedy_decode(lm, cfg).tokens == std::vector<int>{1, 0});
}

TEST_CASE("transformer decoding on a memorized answer") {
  const auto c = test::tiny_corpus();
  const auto vocab = test::tiny_vocab();
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_seq_len = 32;
  mc.vocab_size = vocab.size();
  mc.feature_dims = c.feature_dims;
  mc.dropout = 0.0;
  Transformer<double> model(mc);
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.max_epochs = 150;
  train(model, c, Corpus{}, vocab, ModalityMask::all(), tc);

  const auto ctx = assemble(c.examples[0], vocab, ModalityMask::all(), false, mc.max_seq_len);
  const auto gold = vocab.encode(c.examples[0].answer);
  auto expected = gold;
  expected.push_back(special::kEos);
  for (auto s : {Strategy::kGreedy, Strategy::kBeam}) CHECK(decode(model, ctx, with(s)).tokens == expected);
  auto nuc = with(Strategy::kNucleus);
  nuc.top_p = 1e-9;
  CHECK(decode(model, ctx, nuc).tokens == expected);

  const auto p = next_distribution(model, ctx);
  double sum = 0;
  for (double x : p) sum += x;
  CHECK(std::abs(sum - 1) < 1e-9);
  CHECK(next_distribution(model, ctx) == p);
  const auto cold = next_distribution(model, ctx, 0.01);
  CHECK(*std::max_element(cold.begin(), cold.end()) > 0.999);

  // The generated continuation carries the answer segment and flat positions.
  auto grown = ctx;
  grown.append_answer_token(gold[0]);
  CHECK(grown.slots.back().segment == Segment::kAnswer);
  CHECK(grown.slots.back().position == static_cast<int>(ctx.size()));

  // No room left to generate.
  auto full_cfg = mc;
  full_cfg.max_seq_len = static_cast<int>(ctx.size());
  const Transformer<double> cramped(full_cfg);
  CHECK_THROWS_AS(decode(cramped, ctx, with(Strategy::kGreedy)), OverflowError);
}
