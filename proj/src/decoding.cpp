#include "metavqa/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "metavqa/error.hpp"
#include "metavqa/tokenizer.hpp"

namespace mvqa {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kBeam: return "beam";
    case Strategy::kNucleus: return "nucleus";
  }
  return "greedy";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "greedy") return Strategy::kGreedy;
  if (s == "beam") return Strategy::kBeam;
  if (s == "nucleus") return Strategy::kNucleus;
  throw UsageError("unknown decoding strategy '" + s + "'");
}

void DecodeConfig::validate() const {
  if (max_new_tokens < 1) throw UsageError("max_new_tokens must be >= 1");
  if (beam_width < 1) throw UsageError("beam_width must be >= 1");
  if (!(length_norm_alpha >= 0.0)) throw UsageError("length_norm_alpha must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw UsageError("top_p must lie in (0,1]");
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
}

template <class T>
std::optional<int> TransformerScorer<T>::eos_id() const {
  return special::kEos;
}

template <class T>
std::vector<double> TransformerScorer<T>::logits(std::span<const int> generated) const {
  const auto max_len = static_cast<std::size_t>(model_.config().max_seq_len);
  if (context_.size() + generated.size() > max_len) {
    throw OverflowError("qid " + context_.qid + ": no room to generate past max_seq_len " + std::to_string(max_len));
  }
  AssembledSequence seq = context_;
  for (int t : generated) seq.append_answer_token(t);
  const auto trace = model_.forward(seq);
  const auto row = trace.logits.row(trace.logits.rows() - 1);
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(row(i));
  return out;
}

template class TransformerScorer<float>;
template class TransformerScorer<double>;

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

template <class T>
std::vector<double> next_distribution(const Transformer<T>& model, const AssembledSequence& context,
                                      double temperature) {
  TransformerScorer<T> lm(model, context);
  return softmax(lm.logits({}), temperature);
}

template std::vector<double> next_distribution(const Transformer<float>&, const AssembledSequence&, double);
template std::vector<double> next_distribution(const Transformer<double>&, const AssembledSequence&, double);

namespace {

// Indices sorted by descending probability, ties to the lower id.
std::vector<int> ranked(std::span<const double> probs) {
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  return idx;
}

// Cumulative sums are compared with this slack so that e.g. 0.5 + 0.3 reaches 0.8.
constexpr double kMassSlack = 1e-12;

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

using Clock = std::chrono::steady_clock;

// max_new_tokens clamped to what the scorer can still take.
int step_budget(const TokenScorer& lm, const DecodeConfig& cfg) {
  const auto cap = lm.capacity();
  if (cap && *cap < 1) throw OverflowError("context leaves no room to generate");
  return cap ? std::min(cfg.max_new_tokens, *cap) : cfg.max_new_tokens;
}

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

std::vector<int> nucleus_set(std::span<const double> probs, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw UsageError("top_p must lie in (0,1]");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw NumericError("invalid probability vector");
    total += p;
  }
  if (probs.empty() || std::abs(total - 1.0) > 1e-6) throw NumericError("probabilities do not sum to 1");
  std::vector<int> out;
  double mass = 0.0;
  for (int i : ranked(probs)) {
    const double p = probs[static_cast<std::size_t>(i)];
    if (p <= 0.0) break;
    out.push_back(i);
    mass += p;
    if (mass >= top_p - kMassSlack) break;
  }
  return out;
}

int sample_nucleus(std::span<const double> probs, double top_p, Rng& rng) {
  const auto support = nucleus_set(probs, top_p);
  double mass = 0.0;
  for (int i : support) mass += probs[static_cast<std::size_t>(i)];
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (int i : support) {
    acc += probs[static_cast<std::size_t>(i)];
    if (u < acc) return i;
  }
  return support.back();
}

DecodeResult greedy_decode(const TokenScorer& lm, const DecodeConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  DecodeResult r;
  const auto eos = lm.eos_id();
  const int budget = step_budget(lm, cfg);
  for (int step = 0; step < budget; ++step) {
    const auto p = softmax(lm.logits(r.tokens), cfg.temperature);
    const int tok = argmax(p);
    r.tokens.push_back(tok);
    r.log_probs.push_back(std::log(p[static_cast<std::size_t>(tok)]));
    r.score += r.log_probs.back();
    if (eos && tok == *eos) break;
  }
  r.duration_ms = elapsed_ms(t0);
  return r;
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> log_probs;
  double score = 0.0;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

double normalized(const Hypothesis& h, double alpha) {
  if (alpha == 0.0 || h.tokens.empty()) return h.score;
  return h.score / std::pow(static_cast<double>(h.tokens.size()), alpha);
}

}  // namespace

DecodeResult beam_search(const TokenScorer& lm, const DecodeConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  const auto eos = lm.eos_id();
  const auto width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<Hypothesis> live(1), finished;

  const int budget = step_budget(lm, cfg);
  for (int step = 0; step < budget && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : live) {
      const auto p = softmax(lm.logits(h.tokens), cfg.temperature);
      for (std::size_t w = 0; w < p.size(); ++w) {
        if (p[w] <= 0.0) continue;
        Hypothesis next = h;
        next.tokens.push_back(static_cast<int>(w));
        next.log_probs.push_back(std::log(p[w]));
        next.score += next.log_probs.back();
        candidates.push_back(std::move(next));
      }
    }
    const auto keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = candidates[i];
      if (eos && c.tokens.back() == *eos) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }

  // Length-capped hypotheses compete with the EOS-terminated ones.
  for (auto& h : live) finished.push_back(std::move(h));
  const Hypothesis* best = nullptr;
  double best_score = -INFINITY;
  for (const auto& h : finished) {
    const double s = normalized(h, cfg.length_norm_alpha);
    if (!best || s > best_score || (s == best_score && h.tokens < best->tokens)) {
      best = &h;
      best_score = s;
    }
  }
  DecodeResult r;
  if (best) {
    r.tokens = best->tokens;
    r.log_probs = best->log_probs;
    r.score = best->score;
  }
  r.duration_ms = elapsed_ms(t0);
  return r;
}

DecodeResult nucleus_decode(const TokenScorer& lm, const DecodeConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  Rng rng(cfg.seed);
  DecodeResult r;
  const auto eos = lm.eos_id();
  const int budget = step_budget(lm, cfg);
  for (int step = 0; step < budget; ++step) {
    const auto p = softmax(lm.logits(r.tokens), cfg.temperature);
    const int tok = sample_nucleus(p, cfg.top_p, rng);
    r.tokens.push_back(tok);
    r.log_probs.push_back(std::log(p[static_cast<std::size_t>(tok)]));
    r.score += r.log_probs.back();
    if (eos && tok == *eos) break;
  }
  r.duration_ms = elapsed_ms(t0);
  return r;
}

DecodeResult decode(const TokenScorer& lm, const DecodeConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::kGreedy: return greedy_decode(lm, cfg);
    case Strategy::kBeam: return beam_search(lm, cfg);
    case Strategy::kNucleus: return nucleus_decode(lm, cfg);
  }
  return greedy_decode(lm, cfg);
}

}  // namespace mvqa
