#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metavqa/datamodel.hpp"
#include "metavqa/model.hpp"
#include "metavqa/optimizer.hpp"
#include "metavqa/sequence.hpp"
#include "metavqa/tokenizer.hpp"

namespace mvqa {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 10;
  std::int64_t max_steps = 0;    // 0: no cap beyond max_epochs
  double grad_clip_norm = 1.0;   // <= 0 disables clipping
  std::int64_t eval_every = 0;   // 0: once per epoch
  int patience = 0;              // evals without improvement before stopping; 0 disables
  std::uint64_t seed = 1;        // shuffling and dropout

  AdamWConfig adamw() const { return {learning_rate, weight_decay, beta1, beta2, epsilon}; }
  void validate() const;
};

struct TrainLog {
  struct Step {
    std::int64_t step;
    int epoch;
    double train_loss;
    std::optional<double> val_loss;
    double ms;
  };
  std::vector<Step> steps;
  std::int64_t best_step = 0;
  double best_val_loss = 0.0;
  bool has_validation = false;
  std::string checkpoint_path;

  // step,train_loss,val_loss,ms_per_step
  std::string to_csv() const;
  // Losses only; timing excluded so equal runs compare equal.
  bool same_losses(const TrainLog& other) const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Assembles every example with its answer; overflow errors carry the qid.
std::vector<AssembledSequence> assemble_corpus(const Corpus& corpus, const Vocabulary& vocab,
                                               const ModalityMask& mask, bool include_answer, int max_seq_len);

// Seeded shuffle each epoch; per step: forward(train) -> loss -> backward ->
// clip -> AdamW. Keeps the parameters with the best validation loss (or the
// final ones when val is empty).
template <class T>
TrainLog train(Transformer<T>& model, std::span<const AssembledSequence> train_seqs,
               std::span<const AssembledSequence> val_seqs, const TrainConfig& cfg,
               const ProgressFn& progress = {});

template <class T>
TrainLog train(Transformer<T>& model, const Corpus& train_corpus, const Corpus& val_corpus,
               const Vocabulary& vocab, const ModalityMask& mask, const TrainConfig& cfg,
               const ProgressFn& progress = {});

}  // namespace mvqa
