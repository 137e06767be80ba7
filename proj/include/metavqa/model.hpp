#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "metavqa/datamodel.hpp"
#include "metavqa/random.hpp"
#include "metavqa/sequence.hpp"

namespace mvqa {

enum class Precision { kFloat32, kFloat64 };
std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct ModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 512;
  int vocab_size = 13;
  FeatureDims feature_dims{32, 32};
  double dropout = 0.1;
  double init_std = 0.02;
  std::uint64_t seed = 1234;
  Precision precision = Precision::kFloat32;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;  // throws UsageError
  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool decay = false;  // layer-norm gains and biases are excluded
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// Documented flat order of every parameter tensor. Checkpoints, the optimizer
// and gradient checks all walk this list.
class ParameterLayout {
 public:
  struct Block {
    std::size_t ln1_g, ln1_b, attn_w, attn_b, proj_w, proj_b, ln2_g, ln2_b, fc_w, fc_b, fc2_w, fc2_b;
  };

  explicit ParameterLayout(const ModelConfig& cfg);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t find(const std::string& name) const;  // throws when absent
  std::size_t total() const { return total_; }

  std::size_t token_embedding, segment_embedding, position_embedding;
  std::size_t video_w, video_b, bbox_w, bbox_b;
  std::vector<Block> blocks;
  std::size_t lnf_g, lnf_b;

 private:
  std::size_t add(std::string name, int rows, int cols, bool decay);
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

// Activations cached by one forward call; enough for exact backprop.
template <class T>
struct ForwardTrace {
  struct LayerCache {
    Matrix<T> ln1_hat, ln1_out;
    Vector<T> ln1_rstd;
    Matrix<T> qkv;
    std::vector<Matrix<T>> probs;  // per head, lower triangular
    Matrix<T> att;                 // concatenated head outputs, before projection
    Matrix<T> drop_attn;           // dropout scale, empty in eval mode
    Matrix<T> ln2_hat, ln2_out;
    Vector<T> ln2_rstd;
    Matrix<T> fc_pre, fc_act;
    Matrix<T> drop_mlp;
  };

  bool train_mode = false;
  Matrix<T> drop_embed;
  std::vector<LayerCache> layers;
  Matrix<T> lnf_hat, lnf_out;
  Vector<T> lnf_rstd;
  Matrix<T> logits;  // len x vocab
};

// Flat parameter storage. Aligned so vectorized reductions split the same way
// on every allocation, which keeps results bit-reproducible.
template <class T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct Gradients {
  ParamVector<T> data;
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

template <class T>
class Transformer {
 public:
  using Scalar = T;

  // Deterministic init from cfg.seed: weights ~ N(0, init_std), biases 0, gains 1.
  explicit Transformer(const ModelConfig& cfg);
  Transformer(const ModelConfig& cfg, std::vector<T> params);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  MatrixMap<T> tensor(std::size_t index);
  ConstMatrixMap<T> tensor(std::size_t index) const;

  // Row t = content(t) + segment[seg_t] + position[t]. Dropout only with rng.
  Matrix<T> embed(const AssembledSequence& seq, Rng* dropout_rng = nullptr) const;

  ForwardTrace<T> forward(const AssembledSequence& seq) const { return run(seq, nullptr); }
  ForwardTrace<T> forward_train(const AssembledSequence& seq, Rng& dropout_rng) const {
    return run(seq, &dropout_rng);
  }

  // Accumulates scale * d(loss)/d(params) into grads. Returns the loss.
  double backward(const ForwardTrace<T>& trace, const AssembledSequence& seq, Gradients<T>& grads,
                  double scale = 1.0) const;

  Gradients<T> make_gradients() const { return {ParamVector<T>(params_.size(), T(0))}; }

  template <class U>
  Transformer<U> cast() const {
    ModelConfig cfg = config_;
    cfg.precision = sizeof(U) == sizeof(float) ? Precision::kFloat32 : Precision::kFloat64;
    std::vector<U> p(params_.begin(), params_.end());
    return Transformer<U>(cfg, std::move(p));
  }

 private:
  ForwardTrace<T> run(const AssembledSequence& seq, Rng* rng) const;
  void check_sequence(const AssembledSequence& seq) const;

  ModelConfig config_;
  ParameterLayout layout_;
  ParamVector<T> params_;
};

// Mean masked cross-entropy, log-sum-exp in double. Throws if nothing is masked.
template <class T>
double sequence_loss(const ForwardTrace<T>& trace, const AssembledSequence& seq);

// Mean loss in eval mode over a set of sequences.
template <class T>
double mean_loss(const Transformer<T>& model, std::span<const AssembledSequence> seqs);

using AnyModel = std::variant<Transformer<float>, Transformer<double>>;
AnyModel make_model(const ModelConfig& cfg);

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace mvqa
