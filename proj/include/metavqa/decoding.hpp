#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metavqa/model.hpp"
#include "metavqa/sequence.hpp"

namespace mvqa {

enum class Strategy { kGreedy, kBeam, kNucleus };
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct DecodeConfig {
  Strategy strategy = Strategy::kGreedy;
  int max_new_tokens = 16;
  int beam_width = 5;
  double length_norm_alpha = 0.7;
  double top_p = 0.9;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  void validate() const;
};

struct DecodeResult {
  std::vector<int> tokens;         // ends with EOS unless length-capped
  std::vector<double> log_probs;   // per emitted token, under the tempered distribution
  double duration_ms = 0.0;
  double score = 0.0;              // sum of log_probs
  bool operator==(const DecodeResult& o) const { return tokens == o.tokens && log_probs == o.log_probs; }
};

// Language-model view used by every decoding strategy: next-token logits
// given the tokens generated so far.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual int vocab_size() const = 0;
  virtual std::optional<int> eos_id() const = 0;
  virtual std::vector<double> logits(std::span<const int> generated) const = 0;
  // Upper bound on generated tokens, if the scorer has one.
  virtual std::optional<int> capacity() const { return std::nullopt; }
};

// Transformer continuation of an assembled context; generated slots carry the
// answer segment and continue the flat positions.
template <class T>
class TransformerScorer final : public TokenScorer {
 public:
  TransformerScorer(const Transformer<T>& model, const AssembledSequence& context)
      : model_(model), context_(context) {}
  int vocab_size() const override { return model_.config().vocab_size; }
  std::optional<int> eos_id() const override;
  std::vector<double> logits(std::span<const int> generated) const override;
  // Context plus answer must fit in max_seq_len.
  std::optional<int> capacity() const override {
    return model_.config().max_seq_len - static_cast<int>(context_.size());
  }

 private:
  const Transformer<T>& model_;
  const AssembledSequence& context_;
};

// softmax(logits / temperature), in double.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

template <class T>
std::vector<double> next_distribution(const Transformer<T>& model, const AssembledSequence& context,
                                      double temperature = 1.0);

// Smallest prefix (by descending probability, ties to the lower id) whose mass reaches top_p.
std::vector<int> nucleus_set(std::span<const double> probs, double top_p);

// Draws one token from the renormalized nucleus.
int sample_nucleus(std::span<const double> probs, double top_p, Rng& rng);

DecodeResult greedy_decode(const TokenScorer& lm, const DecodeConfig& cfg);
DecodeResult beam_search(const TokenScorer& lm, const DecodeConfig& cfg);
DecodeResult nucleus_decode(const TokenScorer& lm, const DecodeConfig& cfg);
DecodeResult decode(const TokenScorer& lm, const DecodeConfig& cfg);

template <class T>
DecodeResult decode(const Transformer<T>& model, const AssembledSequence& context, const DecodeConfig& cfg) {
  TransformerScorer<T> lm(model, context);
  return decode(lm, cfg);
}

}  // namespace mvqa
