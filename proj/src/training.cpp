#include "metavqa/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "metavqa/error.hpp"

namespace mvqa {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must lie in [0,1)");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
  if (weight_decay < 0.0) throw UsageError("weight_decay must be >= 0");
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "step,train_loss,val_loss,ms_per_step\n";
  char buf[128];
  for (const auto& s : steps) {
    if (s.val_loss) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.3f\n", static_cast<long long>(s.step), s.train_loss,
                    *s.val_loss, s.ms);
    } else {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,,%.3f\n", static_cast<long long>(s.step), s.train_loss, s.ms);
    }
    os << buf;
  }
  return os.str();
}

bool TrainLog::same_losses(const TrainLog& other) const {
  if (steps.size() != other.steps.size() || best_step != other.best_step) return false;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& a = steps[i];
    const auto& b = other.steps[i];
    if (a.step != b.step || a.train_loss != b.train_loss || a.val_loss != b.val_loss) return false;
  }
  return true;
}

std::vector<AssembledSequence> assemble_corpus(const Corpus& corpus, const Vocabulary& vocab,
                                               const ModalityMask& mask, bool include_answer, int max_seq_len) {
  std::vector<AssembledSequence> out;
  out.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) out.push_back(assemble(ex, vocab, mask, include_answer, max_seq_len));
  return out;
}

template <class T>
TrainLog train(Transformer<T>& model, std::span<const AssembledSequence> train_seqs,
               std::span<const AssembledSequence> val_seqs, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (train_seqs.empty()) throw DataError("training corpus is empty");
  using Clock = std::chrono::steady_clock;

  AdamW<T> opt(model.layout().tensors(), cfg.adamw());
  auto grads = model.make_gradients();
  Rng shuffle_rng(derive_seed(cfg.seed, 11));
  Rng dropout_rng(derive_seed(cfg.seed, 12));

  TrainLog log;
  log.has_validation = !val_seqs.empty();
  std::vector<T> best_params(model.parameters().begin(), model.parameters().end());
  double best = INFINITY;
  int evals_without_gain = 0;
  std::int64_t step = 0;
  bool stop = false;

  std::vector<std::size_t> order(train_seqs.size());
  const auto steps_per_epoch =
      static_cast<std::int64_t>((train_seqs.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                static_cast<std::size_t>(cfg.batch_size));
  const std::int64_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

  for (int epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t at = 0; at < order.size() && !stop; at += static_cast<std::size_t>(cfg.batch_size)) {
      const auto t0 = Clock::now();
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - at);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t k = at; k < end; ++k) {
        const auto& seq = train_seqs[order[k]];
        const auto trace = model.forward_train(seq, dropout_rng);
        const double loss = model.backward(trace, seq, grads, scale);
        if (!std::isfinite(loss)) throw NumericError("qid " + seq.qid + ": non-finite loss");
        batch_loss += loss * scale;
      }
      if (cfg.grad_clip_norm > 0.0) clip_grad_norm<T>(grads.data, cfg.grad_clip_norm);
      opt.step(model.parameters(), grads.data);
      ++step;

      TrainLog::Step rec{step, epoch, batch_loss, std::nullopt, 0.0};
      const bool last_step = (cfg.max_steps > 0 && step >= cfg.max_steps);
      if (log.has_validation && (step % eval_every == 0 || last_step)) {
        const double val = mean_loss(model, val_seqs);
        rec.val_loss = val;
        if (val < best) {
          best = val;
          log.best_step = step;
          best_params.assign(model.parameters().begin(), model.parameters().end());
          evals_without_gain = 0;
        } else if (cfg.patience > 0 && ++evals_without_gain >= cfg.patience) {
          stop = true;
        }
        if (progress) {
          std::ostringstream os;
          os << "epoch " << epoch + 1 << " step " << step << " train " << batch_loss << " val " << val;
          progress(os.str());
        }
      }
      rec.ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      log.steps.push_back(rec);
      if (last_step) stop = true;
    }
  }

  if (log.has_validation) {
    std::copy(best_params.begin(), best_params.end(), model.parameters().begin());
    log.best_val_loss = best;
  } else {
    log.best_step = step;
  }
  return log;
}

template <class T>
TrainLog train(Transformer<T>& model, const Corpus& train_corpus, const Corpus& val_corpus, const Vocabulary& vocab,
               const ModalityMask& mask, const TrainConfig& cfg, const ProgressFn& progress) {
  const int max_len = model.config().max_seq_len;
  const auto tr = assemble_corpus(train_corpus, vocab, mask, true, max_len);
  const auto va = assemble_corpus(val_corpus, vocab, mask, true, max_len);
  return train(model, std::span<const AssembledSequence>(tr), std::span<const AssembledSequence>(va), cfg, progress);
}

template TrainLog train(Transformer<float>&, std::span<const AssembledSequence>, std::span<const AssembledSequence>,
                        const TrainConfig&, const ProgressFn&);
template TrainLog train(Transformer<double>&, std::span<const AssembledSequence>, std::span<const AssembledSequence>,
                        const TrainConfig&, const ProgressFn&);
template TrainLog train(Transformer<float>&, const Corpus&, const Corpus&, const Vocabulary&, const ModalityMask&,
                        const TrainConfig&, const ProgressFn&);
template TrainLog train(Transformer<double>&, const Corpus&, const Corpus&, const Vocabulary&, const ModalityMask&,
                        const TrainConfig&, const ProgressFn&);

}  // namespace mvqa
