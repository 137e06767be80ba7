#include "metavqa/model.hpp"

#include <cmath>
#include <numbers>

#include "metavqa/error.hpp"

namespace mvqa {

std::string to_string(Precision p) { return p == Precision::kFloat32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f32" || s == "float32") return Precision::kFloat32;
  if (s == "f64" || s == "float64") return Precision::kFloat64;
  throw UsageError("unknown precision '" + s + "' (expected f32 or f64)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("model config: " + m); };
  if (d_model < 1 || n_layers < 0 || n_heads < 1) fail("sizes must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff < d_model) fail("d_ff must be >= d_model");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (vocab_size < 13) fail("vocab_size must be >= 13");
  if (feature_dims.video < 0 || feature_dims.bbox < 0) fail("feature dims must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

ParameterLayout::ParameterLayout(const ModelConfig& cfg) {
  const int d = cfg.d_model;
  token_embedding = add("token_embedding", cfg.vocab_size, d, true);
  segment_embedding = add("segment_embedding", kNumSegments, d, true);
  position_embedding = add("position_embedding", cfg.max_seq_len, d, true);
  video_w = add("video_adapter.weight", cfg.feature_dims.video, d, true);
  video_b = add("video_adapter.bias", 1, d, false);
  bbox_w = add("bbox_adapter.weight", cfg.feature_dims.bbox, d, true);
  bbox_b = add("bbox_adapter.bias", 1, d, false);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(p + "ln1.gain", 1, d, false);
    b.ln1_b = add(p + "ln1.bias", 1, d, false);
    b.attn_w = add(p + "attn.qkv.weight", d, 3 * d, true);
    b.attn_b = add(p + "attn.qkv.bias", 1, 3 * d, false);
    b.proj_w = add(p + "attn.proj.weight", d, d, true);
    b.proj_b = add(p + "attn.proj.bias", 1, d, false);
    b.ln2_g = add(p + "ln2.gain", 1, d, false);
    b.ln2_b = add(p + "ln2.bias", 1, d, false);
    b.fc_w = add(p + "mlp.fc.weight", d, cfg.d_ff, true);
    b.fc_b = add(p + "mlp.fc.bias", 1, cfg.d_ff, false);
    b.fc2_w = add(p + "mlp.proj.weight", cfg.d_ff, d, true);
    b.fc2_b = add(p + "mlp.proj.bias", 1, d, false);
    blocks.push_back(b);
  }
  lnf_g = add("ln_f.gain", 1, d, false);
  lnf_b = add("ln_f.bias", 1, d, false);
}

std::size_t ParameterLayout::add(std::string name, int rows, int cols, bool decay) {
  TensorSpec t{std::move(name), rows, cols, total_, decay};
  total_ += t.size();
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

std::size_t ParameterLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw DataError("no parameter tensor named '" + name + "'");
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class T>
struct LayerNormOut {
  Matrix<T> hat, out;
  Vector<T> rstd;
};

template <class T>
LayerNormOut<T> layer_norm(const Matrix<T>& x, ConstMatrixMap<T> gain, ConstMatrixMap<T> bias) {
  LayerNormOut<T> r;
  const auto n = x.cols();
  r.hat.resize(x.rows(), n);
  r.rstd.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mean = x.row(i).sum() / T(n);
    const auto centered = (x.row(i).array() - mean).matrix();
    const T var = centered.squaredNorm() / T(n);
    const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
    r.rstd(i) = rstd;
    r.hat.row(i) = centered * rstd;
  }
  r.out = (r.hat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  return r;
}

// Returns dx; accumulates gain/bias gradients.
template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& hat, const Vector<T>& rstd,
                              ConstMatrixMap<T> gain, MatrixMap<T> dgain, MatrixMap<T> dbias) {
  dgain.row(0) += (dy.array() * hat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Matrix<T> dhat = dy.array().rowwise() * gain.row(0).array();
  const T n = T(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T mean_dhat = dhat.row(i).sum() / n;
    const T mean_dhat_hat = dhat.row(i).dot(hat.row(i)) / n;
    dx.row(i) = rstd(i) * (dhat.row(i).array() - mean_dhat - hat.row(i).array() * mean_dhat_hat).matrix();
  }
  return dx;
}

template <class T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)

template <class T>
T gelu(T x) {
  const T inner = kGeluC<T> * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <class T>
T gelu_grad(T x) {
  const T inner = kGeluC<T> * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = kGeluC<T> * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

template <class T>
Matrix<T> dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
  Matrix<T> m(rows, cols);
  const T keep_scale = T(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? T(0) : keep_scale;
  return m;
}

template <class T>
void require_finite(const Matrix<T>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

}  // namespace

template <class T>
Transformer<T>::Transformer(const ModelConfig& cfg) : config_(cfg), layout_(cfg) {
  config_.validate();
  params_.assign(layout_.total(), T(0));
  Rng rng(config_.seed);
  for (const auto& t : layout_.tensors()) {
    T* p = params_.data() + t.offset;
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (is_gain) {
        p[i] = T(1);
      } else if (is_bias) {
        p[i] = T(0);
      } else {
        p[i] = static_cast<T>(rng.normal() * config_.init_std);
      }
    }
  }
}

template <class T>
Transformer<T>::Transformer(const ModelConfig& cfg, std::vector<T> params)
    : config_(cfg), layout_(cfg), params_(params.begin(), params.end()) {
  config_.validate();
  if (params_.size() != layout_.total()) {
    throw DataError("parameter count " + std::to_string(params_.size()) + " does not match config (" +
                    std::to_string(layout_.total()) + ")");
  }
}

template <class T>
MatrixMap<T> Transformer<T>::tensor(std::size_t index) {
  const auto& t = layout_[index];
  return MatrixMap<T>(params_.data() + t.offset, t.rows, t.cols);
}

template <class T>
ConstMatrixMap<T> Transformer<T>::tensor(std::size_t index) const {
  const auto& t = layout_[index];
  return ConstMatrixMap<T>(params_.data() + t.offset, t.rows, t.cols);
}

template <class T>
void Transformer<T>::check_sequence(const AssembledSequence& seq) const {
  if (seq.size() == 0) throw DataError("qid " + seq.qid + ": empty sequence");
  if (static_cast<int>(seq.size()) > config_.max_seq_len) {
    throw OverflowError("qid " + seq.qid + ": sequence length " + std::to_string(seq.size()) +
                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (const auto& s : seq.slots) {
    switch (s.kind) {
      case PayloadKind::kToken:
        if (s.token < 0 || s.token >= config_.vocab_size) {
          throw DataError("qid " + seq.qid + ": token id " + std::to_string(s.token) + " out of range");
        }
        break;
      case PayloadKind::kVideo:
        if (static_cast<int>(s.feature.size()) != config_.feature_dims.video) {
          throw DimensionError("qid " + seq.qid + ": video feature has wrong dimension");
        }
        break;
      case PayloadKind::kBox:
        if (static_cast<int>(s.feature.size()) != config_.feature_dims.bbox) {
          throw DimensionError("qid " + seq.qid + ": bbox feature has wrong dimension");
        }
        break;
    }
    if (s.position < 0 || s.position >= config_.max_seq_len) {
      throw OverflowError("qid " + seq.qid + ": position " + std::to_string(s.position) + " out of range");
    }
  }
}

template <class T>
Matrix<T> Transformer<T>::embed(const AssembledSequence& seq, Rng* dropout_rng) const {
  check_sequence(seq);
  const auto len = static_cast<Eigen::Index>(seq.size());
  Matrix<T> x(len, config_.d_model);
  const auto tok = tensor(layout_.token_embedding);
  const auto seg = tensor(layout_.segment_embedding);
  const auto pos = tensor(layout_.position_embedding);
  const auto vw = tensor(layout_.video_w);
  const auto vb = tensor(layout_.video_b);
  const auto bw = tensor(layout_.bbox_w);
  const auto bb = tensor(layout_.bbox_b);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto& s = seq.slots[static_cast<std::size_t>(t)];
    switch (s.kind) {
      case PayloadKind::kToken: x.row(t) = tok.row(s.token); break;
      case PayloadKind::kVideo: {
        const Vector<T> f = Eigen::Map<const Eigen::VectorXd>(s.feature.data(), vw.rows()).template cast<T>();
        x.row(t) = f.transpose() * vw + vb.row(0);
        break;
      }
      case PayloadKind::kBox: {
        const Vector<T> f = Eigen::Map<const Eigen::VectorXd>(s.feature.data(), bw.rows()).template cast<T>();
        x.row(t) = f.transpose() * bw + bb.row(0);
        break;
      }
    }
    x.row(t) += seg.row(static_cast<Eigen::Index>(s.segment)) + pos.row(s.position);
  }
  if (dropout_rng && config_.dropout > 0.0) {
    x.array() *= dropout_mask<T>(*dropout_rng, x.rows(), x.cols(), config_.dropout).array();
  }
  return x;
}

template <class T>
ForwardTrace<T> Transformer<T>::run(const AssembledSequence& seq, Rng* rng) const {
  ForwardTrace<T> tr;
  tr.train_mode = rng != nullptr;
  const bool use_dropout = tr.train_mode && config_.dropout > 0.0;
  const int d = config_.d_model;
  const int hd = config_.head_dim();
  const T scale = T(1) / std::sqrt(T(hd));

  check_sequence(seq);
  Matrix<T> x;
  {
    // Embedding without dropout, then the dropout mask kept for backprop.
    x = embed(seq, nullptr);
    if (use_dropout) {
      tr.drop_embed = dropout_mask<T>(*rng, x.rows(), x.cols(), config_.dropout);
      x.array() *= tr.drop_embed.array();
    }
  }
  const auto len = x.rows();

  tr.layers.resize(layout_.blocks.size());
  for (std::size_t l = 0; l < layout_.blocks.size(); ++l) {
    const auto& b = layout_.blocks[l];
    auto& c = tr.layers[l];

    auto ln1 = layer_norm<T>(x, tensor(b.ln1_g), tensor(b.ln1_b));
    c.ln1_hat = std::move(ln1.hat);
    c.ln1_out = std::move(ln1.out);
    c.ln1_rstd = std::move(ln1.rstd);

    c.qkv.noalias() = c.ln1_out * tensor(b.attn_w);
    c.qkv.rowwise() += tensor(b.attn_b).row(0);

    c.att.resize(len, d);
    c.probs.resize(static_cast<std::size_t>(config_.n_heads));
    for (int h = 0; h < config_.n_heads; ++h) {
      const auto q = c.qkv.middleCols(h * hd, hd);
      const auto k = c.qkv.middleCols(d + h * hd, hd);
      const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
      Matrix<T> p = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < len; ++i) {
        auto row = p.row(i);
        const T mx = row.head(i + 1).maxCoeff();
        T sum = T(0);
        for (Eigen::Index j = 0; j <= i; ++j) {
          row(j) = std::exp(row(j) - mx);
          sum += row(j);
        }
        row.head(i + 1) /= sum;
        row.tail(len - i - 1).setZero();
      }
      c.att.middleCols(h * hd, hd).noalias() = p.template triangularView<Eigen::Lower>() * v;
      c.probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    Matrix<T> y = c.att * tensor(b.proj_w);
    y.rowwise() += tensor(b.proj_b).row(0);
    if (use_dropout) {
      c.drop_attn = dropout_mask<T>(*rng, len, d, config_.dropout);
      y.array() *= c.drop_attn.array();
    }
    x += y;

    auto ln2 = layer_norm<T>(x, tensor(b.ln2_g), tensor(b.ln2_b));
    c.ln2_hat = std::move(ln2.hat);
    c.ln2_out = std::move(ln2.out);
    c.ln2_rstd = std::move(ln2.rstd);

    c.fc_pre.noalias() = c.ln2_out * tensor(b.fc_w);
    c.fc_pre.rowwise() += tensor(b.fc_b).row(0);
    c.fc_act = c.fc_pre.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> z = c.fc_act * tensor(b.fc2_w);
    z.rowwise() += tensor(b.fc2_b).row(0);
    if (use_dropout) {
      c.drop_mlp = dropout_mask<T>(*rng, len, d, config_.dropout);
      z.array() *= c.drop_mlp.array();
    }
    x += z;
    require_finite(x, "block " + std::to_string(l));
  }

  auto lnf = layer_norm<T>(x, tensor(layout_.lnf_g), tensor(layout_.lnf_b));
  tr.lnf_hat = std::move(lnf.hat);
  tr.lnf_out = std::move(lnf.out);
  tr.lnf_rstd = std::move(lnf.rstd);
  tr.logits.noalias() = tr.lnf_out * tensor(layout_.token_embedding).transpose();
  require_finite(tr.logits, "lm head");
  return tr;
}

template <class T>
double sequence_loss(const ForwardTrace<T>& trace, const AssembledSequence& seq) {
  const auto count = seq.masked_count();
  if (count == 0) throw DataError("qid " + seq.qid + ": no loss-masked positions");
  double total = 0.0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (!seq.loss_mask[t]) continue;
    const auto row = trace.logits.row(static_cast<Eigen::Index>(t)).template cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(seq.targets[t]);
  }
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) throw NumericError("qid " + seq.qid + ": non-finite loss");
  return loss;
}

template <class T>
double Transformer<T>::backward(const ForwardTrace<T>& tr, const AssembledSequence& seq, Gradients<T>& grads,
                                double scale) const {
  if (grads.data.size() != params_.size()) throw DataError("gradient buffer shape mismatch");
  if (tr.logits.rows() != static_cast<Eigen::Index>(seq.size())) {
    throw DataError("trace does not match sequence length");
  }
  const double loss = sequence_loss(tr, seq);
  const auto len = tr.logits.rows();
  const int d = config_.d_model;
  const int hd = config_.head_dim();
  const T attn_scale = T(1) / std::sqrt(T(hd));
  auto g = [&](std::size_t index) {
    const auto& t = layout_[index];
    return MatrixMap<T>(grads.data.data() + t.offset, t.rows, t.cols);
  };

  // Softmax minus one-hot on masked rows.
  Matrix<T> dlogits = Matrix<T>::Zero(len, tr.logits.cols());
  const double w = scale / static_cast<double>(seq.masked_count());
  for (Eigen::Index t = 0; t < len; ++t) {
    if (!seq.loss_mask[static_cast<std::size_t>(t)]) continue;
    const auto row = tr.logits.row(t).template cast<double>();
    const double mx = row.maxCoeff();
    Eigen::RowVectorXd p = (row.array() - mx).exp();
    p /= p.sum();
    p(seq.targets[static_cast<std::size_t>(t)]) -= 1.0;
    dlogits.row(t) = (p * w).template cast<T>();
  }

  const auto tok = tensor(layout_.token_embedding);
  g(layout_.token_embedding).noalias() += dlogits.transpose() * tr.lnf_out;
  Matrix<T> dx = dlogits * tok;
  dx = layer_norm_backward<T>(dx, tr.lnf_hat, tr.lnf_rstd, tensor(layout_.lnf_g), g(layout_.lnf_g),
                              g(layout_.lnf_b));

  for (std::size_t li = layout_.blocks.size(); li-- > 0;) {
    const auto& b = layout_.blocks[li];
    const auto& c = tr.layers[li];

    // MLP branch.
    Matrix<T> dz = dx;
    if (c.drop_mlp.size()) dz.array() *= c.drop_mlp.array();
    g(b.fc2_w).noalias() += c.fc_act.transpose() * dz;
    g(b.fc2_b).row(0) += dz.colwise().sum();
    Matrix<T> dpre = dz * tensor(b.fc2_w).transpose();
    dpre.array() *= c.fc_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    g(b.fc_w).noalias() += c.ln2_out.transpose() * dpre;
    g(b.fc_b).row(0) += dpre.colwise().sum();
    Matrix<T> dln2 = dpre * tensor(b.fc_w).transpose();
    dx += layer_norm_backward<T>(dln2, c.ln2_hat, c.ln2_rstd, tensor(b.ln2_g), g(b.ln2_g), g(b.ln2_b));

    // Attention branch.
    Matrix<T> dy = dx;
    if (c.drop_attn.size()) dy.array() *= c.drop_attn.array();
    g(b.proj_w).noalias() += c.att.transpose() * dy;
    g(b.proj_b).row(0) += dy.colwise().sum();
    const Matrix<T> datt = dy * tensor(b.proj_w).transpose();

    Matrix<T> dqkv(len, 3 * d);
    for (int h = 0; h < config_.n_heads; ++h) {
      const auto& p = c.probs[static_cast<std::size_t>(h)];
      const auto q = c.qkv.middleCols(h * hd, hd);
      const auto k = c.qkv.middleCols(d + h * hd, hd);
      const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
      const auto dout = datt.middleCols(h * hd, hd);
      Matrix<T> dp = dout * v.transpose();
      dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * dout;
      // dS = P * (dP - rowsum(P * dP)); zero above the diagonal because P is.
      Matrix<T> ds = p.array() * dp.array();
      const Vector<T> rowdot = ds.rowwise().sum();
      ds = (p.array() * (dp.array().colwise() - rowdot.array())) * attn_scale;
      dqkv.middleCols(h * hd, hd).noalias() = ds * k;
      dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
    }
    g(b.attn_w).noalias() += c.ln1_out.transpose() * dqkv;
    g(b.attn_b).row(0) += dqkv.colwise().sum();
    Matrix<T> dln1 = dqkv * tensor(b.attn_w).transpose();
    dx += layer_norm_backward<T>(dln1, c.ln1_hat, c.ln1_rstd, tensor(b.ln1_g), g(b.ln1_g), g(b.ln1_b));
  }

  if (tr.drop_embed.size()) dx.array() *= tr.drop_embed.array();
  auto dtok = g(layout_.token_embedding);
  auto dseg = g(layout_.segment_embedding);
  auto dpos = g(layout_.position_embedding);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto& s = seq.slots[static_cast<std::size_t>(t)];
    const auto row = dx.row(t);
    dseg.row(static_cast<Eigen::Index>(s.segment)) += row;
    dpos.row(s.position) += row;
    switch (s.kind) {
      case PayloadKind::kToken: dtok.row(s.token) += row; break;
      case PayloadKind::kVideo:
      case PayloadKind::kBox: {
        const bool video = s.kind == PayloadKind::kVideo;
        auto dw = g(video ? layout_.video_w : layout_.bbox_w);
        auto db = g(video ? layout_.video_b : layout_.bbox_b);
        const Vector<T> f =
            Eigen::Map<const Eigen::VectorXd>(s.feature.data(), dw.rows()).template cast<T>();
        dw.noalias() += f * row;
        db.row(0) += row;
        break;
      }
    }
  }
  return loss;
}

template <class T>
double mean_loss(const Transformer<T>& model, std::span<const AssembledSequence> seqs) {
  if (seqs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : seqs) total += sequence_loss(model.forward(s), s);
  return total / static_cast<double>(seqs.size());
}

AnyModel make_model(const ModelConfig& cfg) {
  if (cfg.precision == Precision::kFloat64) return Transformer<double>(cfg);
  return Transformer<float>(cfg);
}

template class Transformer<float>;
template class Transformer<double>;
template double sequence_loss(const ForwardTrace<float>&, const AssembledSequence&);
template double sequence_loss(const ForwardTrace<double>&, const AssembledSequence&);
template double mean_loss(const Transformer<float>&, std::span<const AssembledSequence>);
template double mean_loss(const Transformer<double>&, std::span<const AssembledSequence>);

}  // namespace mvqa
