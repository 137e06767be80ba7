#include <cmath>

#include "doctest.h"
#include "metavqa/error.hpp"
#include "metavqa/metrics.hpp"
#include "metavqa/random.hpp"
#include "metavqa/tokenizer.hpp"
#include "oracles.hpp"

using namespace mvqa;

namespace {

TokenList T(const char* s) { return normalize(s); }

TokenList random_sentence(Rng& rng, int max_len, int alphabet) {
  static const char* words[] = {"a", "b", "c", "d", "e", "f"};
  TokenList out;
  const auto n = rng.uniform_int(0, max_len);
  for (int i = 0; i < n; ++i) out.push_back(words[rng.uniform_int(0, alphabet - 1)]);
  return out;
}

}  // namespace

TEST_CASE("bleu identity") {
  const std::vector<TokenList> xs = {T("the cat sat on the mat"), T("a dog"), T("hello there friend")};
  for (int n = 1; n <= 4; ++n) CHECK(bleu(xs, xs, n, false) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("bleu clipping example") {
  const std::vector<TokenList> c = {T("the the the the the the the")};
  const std::vector<TokenList> r = {T("the cat is on the mat")};
  const auto s = bleu_stats(c, r, 1, false);
  CHECK(s.matches[0] == 2);
  CHECK(s.totals[0] == 7);
  CHECK(s.precisions[0] == 2.0 / 7.0);
  // c = 7 > r = 6 so BP = 1.
  CHECK(s.brevity_penalty == 1.0);
  CHECK(s.score == doctest::Approx(2.0 / 7.0).epsilon(1e-15));
}

TEST_CASE("bleu brevity penalty for a short candidate") {
  const std::vector<TokenList> c = {T("the cat")};
  const std::vector<TokenList> r = {T("the cat is on the mat")};
  CHECK(bleu(c, r, 1) == doctest::Approx(std::exp(1.0 - 6.0 / 2.0)).epsilon(1e-15));
}

TEST_CASE("bleu with no shared 4-grams is zero unless smoothed") {
  const std::vector<TokenList> c = {T("the cat sat down")};
  const std::vector<TokenList> r = {T("the cat sat up")};
  CHECK(bleu(c, r, 4, false) == 0.0);
  const double smoothed = bleu(c, r, 4, true);
  // p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 1/(2*1); BP = 1.
  CHECK(smoothed == doctest::Approx(std::pow(0.75 * (2.0 / 3.0) * 0.5 * 0.5, 0.25)).epsilon(1e-14));
}

TEST_CASE("bleu on empty candidates and mismatched lengths") {
  const std::vector<TokenList> c = {{}, {}};
  const std::vector<TokenList> r = {T("a"), T("b")};
  CHECK(bleu(c, r, 4) == 0.0);
  const std::vector<TokenList> one = {T("a")};
  CHECK_THROWS_AS(bleu(one, r, 1), DataError);
}

TEST_CASE("bleu-1 clipping matches a brute-force counter") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = random_sentence(rng, 8, 4);
    const auto r = random_sentence(rng, 8, 4);
    const std::vector<TokenList> cs = {c}, rs = {r};
    const auto s = bleu_stats(cs, rs, 1, false);
    CHECK(s.matches[0] == oracle::clipped_unigram_matches(c, r));
    CHECK(s.score >= 0.0);
    CHECK(s.score <= 1.0);
  }
}

TEST_CASE("shortening a candidate never increases the brevity penalty") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_sentence(rng, 6, 3);
    const auto r = random_sentence(rng, 10, 3);
    if (c.empty() || r.empty()) continue;
    double prev = bleu_stats(std::vector<TokenList>{c}, std::vector<TokenList>{r}, 1, false).brevity_penalty;
    while (c.size() > 1) {
      c.pop_back();
      const double bp = bleu_stats(std::vector<TokenList>{c}, std::vector<TokenList>{r}, 1, false).brevity_penalty;
      CHECK(bp <= prev);
      prev = bp;
    }
  }
}

TEST_CASE("meteor-lite cases") {
  CHECK(meteor_lite(T("a b"), T("c d")) == 0.0);
  CHECK(meteor_lite({}, T("a")) == 0.0);
  const auto x = T("one two three four");
  CHECK(meteor_lite(x, x) == doctest::Approx(1.0 - 1.0 / 128.0).epsilon(1e-15));
  const auto a = meteor_align(T("the cat sat"), T("sat the cat"));
  CHECK(a.matches == 3);
  CHECK(a.chunks == 2);
  const auto [m, ch] = oracle::brute_force_alignment(T("the cat sat"), T("sat the cat"));
  CHECK(meteor_lite(T("the cat sat"), T("sat the cat")) ==
        doctest::Approx(oracle::meteor_from_alignment(3, 3, m, ch)).epsilon(1e-15));
}

TEST_CASE("meteor identity formula") {
  for (int n = 1; n <= 10; ++n) {
    TokenList x;
    for (int i = 0; i < n; ++i) x.push_back("w" + std::to_string(i));
    CHECK(meteor_lite(x, x) == doctest::Approx(1.0 - 0.5 / (double(n) * n * n)).epsilon(1e-15));
  }
}

TEST_CASE("meteor alignment equals the brute-force oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_sentence(rng, 6, 3);
    const auto r = random_sentence(rng, 6, 3);
    const auto [m, ch] = oracle::brute_force_alignment(c, r);
    const auto a = meteor_align(c, r);
    CHECK(a.matches == m);
    CHECK(a.chunks == ch);
    const double expected = (c.empty() || r.empty()) ? 0.0 : oracle::meteor_from_alignment(c.size(), r.size(), m, ch);
    CHECK(meteor_lite(c, r) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(meteor_lite(c, r) >= 0.0);
    CHECK(meteor_lite(c, r) <= 1.0);
  }
}

TEST_CASE("meteor falls back to a greedy alignment on long references") {
  TokenList ref, cand;
  for (int i = 0; i < 80; ++i) ref.push_back("w" + std::to_string(i % 20));
  for (int i = 0; i < 30; ++i) cand.push_back("w" + std::to_string(i % 20));
  const auto a = meteor_align(cand, ref);
  CHECK(a.matches == 30);
  CHECK(a.chunks >= 1);
}

TEST_CASE("evaluate_corpus") {
  const std::map<std::string, TokenList> gold = {
      {"q1", T("hun is reading")}, {"q2", T("to the library")}, {"q3", T("the ring")}};

  const auto perfect = evaluate_corpus(gold, gold);
  CHECK(perfect.bleu1 == 1.0);
  CHECK(perfect.bleu4 == doctest::Approx(1.0));
  CHECK(perfect.missing == 0);

  const auto none = evaluate_corpus({}, gold);
  CHECK(none.bleu1 == 0.0);
  CHECK(none.meteor == 0.0);
  CHECK(none.missing == 3);
  CHECK(none.generated == 0);
  CHECK(none.candidate_tokens == 0);

  const auto empty = evaluate_corpus({}, {});
  CHECK(empty.examples == 0);
  CHECK(empty.bleu1 == 0.0);

  // Hand computation. q1: 2/3 unigrams match, q2 exact, q3 missing.
  const std::map<std::string, TokenList> gen = {{"q1", T("hun is sleeping")}, {"q2", T("to the library")}};
  const auto r = evaluate_corpus(gen, gold);
  // c = 6, r = 8 -> BP = exp(1 - 8/6); p1 = 5/6.
  CHECK(r.bleu1 == doctest::Approx(std::exp(1.0 - 8.0 / 6.0) * 5.0 / 6.0).epsilon(1e-14));
  const double m1 = oracle::meteor_from_alignment(3, 3, 2, 1);
  const double m2 = oracle::meteor_from_alignment(3, 3, 3, 1);
  CHECK(r.meteor == doctest::Approx((m1 + m2 + 0.0) / 3.0).epsilon(1e-14));
  CHECK(r.missing == 1);
  CHECK(r.per_example.size() == 3);
  CHECK(r.per_example[2].missing);

  const std::map<std::string, TokenList> stray = {{"zz", T("x")}};
  try {
    evaluate_corpus(stray, gold);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("zz") != std::string::npos);
  }
}

TEST_CASE("report table and json") {
  const std::map<std::string, TokenList> gold = {{"q1", T("a b")}};
  auto r = evaluate_corpus(gold, gold);
  r.label = "S+M";
  const auto table = r.to_table();
  CHECK(table.find("Bleu-1") != std::string::npos);
  CHECK(table.find("S+M") != std::string::npos);
  CHECK(r.to_json().find("\"bleu1\"") != std::string::npos);
  CHECK(r.to_table(true).find("Missing") != std::string::npos);
}
