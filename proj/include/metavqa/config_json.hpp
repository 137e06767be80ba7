#pragma once

// nlohmann::json conversions for the configuration structs. Missing keys keep
// their defaults, so partial config files are accepted.

#include "json.hpp"
#include "metavqa/datamodel.hpp"
#include "metavqa/decoding.hpp"
#include "metavqa/model.hpp"
#include "metavqa/sequence.hpp"
#include "metavqa/training.hpp"

namespace mvqa {

namespace detail {
template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) it->get_to(out);
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const FeatureDims& d) { j = nlohmann::json::array({d.video, d.bbox}); }
inline void from_json(const nlohmann::json& j, FeatureDims& d) {
  d.video = j.at(0).get<int>();
  d.bbox = j.at(1).get<int>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},         {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
       {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
       {"feature_dims", c.feature_dims}, {"dropout", c.dropout},     {"init_std", c.init_std},
       {"seed", c.seed},               {"precision", to_string(c.precision)}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  using detail::read_opt;
  read_opt(j, "d_model", c.d_model);
  read_opt(j, "n_layers", c.n_layers);
  read_opt(j, "n_heads", c.n_heads);
  read_opt(j, "d_ff", c.d_ff);
  read_opt(j, "max_seq_len", c.max_seq_len);
  read_opt(j, "vocab_size", c.vocab_size);
  read_opt(j, "feature_dims", c.feature_dims);
  read_opt(j, "dropout", c.dropout);
  read_opt(j, "init_std", c.init_std);
  read_opt(j, "seed", c.seed);
  if (j.contains("precision")) c.precision = precision_from_string(j.at("precision").get<std::string>());
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
       {"beta1", c.beta1},                 {"beta2", c.beta2},               {"epsilon", c.epsilon},
       {"max_epochs", c.max_epochs},       {"max_steps", c.max_steps},       {"grad_clip_norm", c.grad_clip_norm},
       {"eval_every", c.eval_every},       {"patience", c.patience},         {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  using detail::read_opt;
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "epsilon", c.epsilon);
  read_opt(j, "max_epochs", c.max_epochs);
  read_opt(j, "max_steps", c.max_steps);
  read_opt(j, "grad_clip_norm", c.grad_clip_norm);
  read_opt(j, "eval_every", c.eval_every);
  read_opt(j, "patience", c.patience);
  read_opt(j, "seed", c.seed);
}

inline void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = {{"strategy", to_string(c.strategy)}, {"max_new_tokens", c.max_new_tokens},
       {"beam_width", c.beam_width},        {"length_norm_alpha", c.length_norm_alpha},
       {"top_p", c.top_p},                  {"temperature", c.temperature},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, DecodeConfig& c) {
  using detail::read_opt;
  if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  read_opt(j, "max_new_tokens", c.max_new_tokens);
  read_opt(j, "beam_width", c.beam_width);
  read_opt(j, "length_norm_alpha", c.length_norm_alpha);
  read_opt(j, "top_p", c.top_p);
  read_opt(j, "temperature", c.temperature);
  read_opt(j, "seed", c.seed);
}

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"n_examples", c.n_examples},
       {"n_persons", c.n_persons},
       {"n_behaviors", c.n_behaviors},
       {"n_emotions", c.n_emotions},
       {"frames_per_clip", {c.frames_per_clip.lo, c.frames_per_clip.hi}},
       {"chars_per_frame", {c.chars_per_frame.lo, c.chars_per_frame.hi}},
       {"subtitles_per_clip", {c.subtitles_per_clip.lo, c.subtitles_per_clip.hi}},
       {"feature_dims", c.feature_dims},
       {"seed", c.seed},
       {"metadata_signal", c.metadata_signal},
       {"bbox_noise", c.bbox_noise}};
}
inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  using detail::read_opt;
  auto range = [&](const char* key, Range<int>& r) {
    if (j.contains(key)) {
      r.lo = j.at(key).at(0).get<int>();
      r.hi = j.at(key).at(1).get<int>();
    }
  };
  read_opt(j, "n_examples", c.n_examples);
  read_opt(j, "n_persons", c.n_persons);
  read_opt(j, "n_behaviors", c.n_behaviors);
  read_opt(j, "n_emotions", c.n_emotions);
  range("frames_per_clip", c.frames_per_clip);
  range("chars_per_frame", c.chars_per_frame);
  range("subtitles_per_clip", c.subtitles_per_clip);
  read_opt(j, "feature_dims", c.feature_dims);
  read_opt(j, "seed", c.seed);
  read_opt(j, "metadata_signal", c.metadata_signal);
  read_opt(j, "bbox_noise", c.bbox_noise);
}

}  // namespace mvqa
