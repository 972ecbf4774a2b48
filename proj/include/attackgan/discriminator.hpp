#pragma once

// Convolutional substitute detector: one convolution per window size over the
// embedded sequence, max-over-time pooling, a linear head and a sigmoid.
// The output is the probability that the sequence is benign.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "attackgan/adam.hpp"
#include "attackgan/checkpoint.hpp"
#include "attackgan/embedding.hpp"

namespace attackgan {

template <typename Scalar>
struct DiscriminatorParams {
  std::vector<std::size_t> windows;
  std::size_t filters = 0;
  std::size_t d = 0;
  std::vector<Mat<Scalar>> kernels;  // per window l: filters x (l*d), column j*d + k is kernel row j, dim k
  std::vector<Mat<Scalar>> biases;   // per window: filters x 1
  Mat<Scalar> head;                  // 1 x (|L| * filters)
  Mat<Scalar> head_bias;             // 1 x 1

  std::size_t features() const { return windows.size() * filters; }
  std::size_t max_window() const { return windows.empty() ? 0 : *std::max_element(windows.begin(), windows.end()); }

  std::vector<std::pair<std::string, Mat<Scalar>*>> named_tensors() {
    std::vector<std::pair<std::string, Mat<Scalar>*>> out;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      out.emplace_back("conv" + std::to_string(windows[w]) + "/weight", &kernels[w]);
      out.emplace_back("conv" + std::to_string(windows[w]) + "/bias", &biases[w]);
    }
    out.emplace_back("head/weight", &head);
    out.emplace_back("head/bias", &head_bias);
    return out;
  }
  std::vector<std::pair<std::string, const Mat<Scalar>*>> named_tensors() const {
    std::vector<std::pair<std::string, const Mat<Scalar>*>> out;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      out.emplace_back("conv" + std::to_string(windows[w]) + "/weight", &kernels[w]);
      out.emplace_back("conv" + std::to_string(windows[w]) + "/bias", &biases[w]);
    }
    out.emplace_back("head/weight", &head);
    out.emplace_back("head/bias", &head_bias);
    return out;
  }

  bool operator==(const DiscriminatorParams& o) const {
    return windows == o.windows && filters == o.filters && d == o.d && kernels == o.kernels && biases == o.biases &&
           head == o.head && head_bias == o.head_bias;
  }
};

template <typename Scalar>
DiscriminatorParams<Scalar> init_discriminator(std::size_t d, std::vector<std::size_t> windows, std::size_t filters,
                                               std::uint64_t seed) {
  if (d == 0 || filters == 0 || windows.empty()) throw Error("discriminator", "discriminator dimensions must be positive");
  for (std::size_t l : windows)
    if (l == 0) throw Error("discriminator", "window sizes must be positive");
  DiscriminatorParams<Scalar> p;
  p.windows = std::move(windows);
  p.filters = filters;
  p.d = d;
  Rng rng = make_rng(seed, stream_id("discriminator/init"));
  auto fill = [&](Eigen::Index r, Eigen::Index c, double k) {
    Mat<Scalar> m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = static_cast<Scalar>((2 * uniform01(rng) - 1) * k);
    return m;
  };
  const auto nf = static_cast<Eigen::Index>(filters);
  for (std::size_t l : p.windows) {
    const double k = 1.0 / std::sqrt(static_cast<double>(l * d));
    p.kernels.push_back(fill(nf, static_cast<Eigen::Index>(l * d), k));
    p.biases.push_back(fill(nf, 1, k));
  }
  const double k = 1.0 / std::sqrt(static_cast<double>(p.features()));
  p.head = fill(1, static_cast<Eigen::Index>(p.features()), k);
  p.head_bias = fill(1, 1, k);
  return p;
}

template <typename Scalar>
void save_discriminator(Checkpoint& ckpt, const DiscriminatorParams<Scalar>& p, const std::string& prefix = "disc") {
  Mat<double> win(static_cast<Eigen::Index>(p.windows.size()), 1);
  for (std::size_t w = 0; w < p.windows.size(); ++w) win(static_cast<Eigen::Index>(w), 0) = static_cast<double>(p.windows[w]);
  ckpt.add_matrix(prefix + "/windows", win);
  ckpt.add_scalar(prefix + "/embedding_dim", static_cast<double>(p.d));
  for (const auto& [name, t] : p.named_tensors()) ckpt.add_matrix(prefix + "/" + name, *t);
}

template <typename Scalar>
DiscriminatorParams<Scalar> load_discriminator(const Checkpoint& ckpt, const std::string& prefix = "disc") {
  DiscriminatorParams<Scalar> p;
  const Mat<double> win = ckpt.get_matrix<double>(prefix + "/windows");
  for (Eigen::Index w = 0; w < win.rows(); ++w) p.windows.push_back(static_cast<std::size_t>(win(w, 0)));
  p.d = static_cast<std::size_t>(ckpt.get_scalar(prefix + "/embedding_dim"));
  for (std::size_t l : p.windows) {
    p.kernels.push_back(ckpt.get_matrix<Scalar>(prefix + "/conv" + std::to_string(l) + "/weight"));
    p.biases.push_back(ckpt.get_matrix<Scalar>(prefix + "/conv" + std::to_string(l) + "/bias"));
    if (static_cast<std::size_t>(p.kernels.back().cols()) != l * p.d) {
      throw Error("discriminator", "kernel width does not match embedding dimension");
    }
  }
  p.filters = p.kernels.empty() ? 0 : static_cast<std::size_t>(p.kernels[0].rows());
  p.head = ckpt.get_matrix<Scalar>(prefix + "/head/weight", 1, static_cast<Eigen::Index>(p.features()));
  p.head_bias = ckpt.get_matrix<Scalar>(prefix + "/head/bias", 1, 1);
  return p;
}

namespace detail {

template <typename Scalar>
inline double kernel_row_dot(const Scalar* kernel_row, const float* e, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(kernel_row[k]) * static_cast<double>(e[k]);
  return acc;
}

inline double head_to_probability(double z) { return sigmoid(z); }

}  // namespace detail

/// Pooled feature vector for a sequence: one max-over-time value per filter.
template <typename Scalar>
std::vector<double> pooled_features(const DiscriminatorParams<Scalar>& p, const TokenSequence& seq,
                                    const EmbeddingMatrix& emb) {
  const std::size_t T = seq.size();
  if (T < p.max_window()) {
    throw Error("discriminator", "sequence of length " + std::to_string(T) + " is shorter than window " +
                                     std::to_string(p.max_window()));
  }
  if (emb.dim() != p.d) throw Error("discriminator", "embedding dimension does not match discriminator");
  const RowMat<float> E = embed_sequence(seq, emb);
  const std::size_t d = p.d;
  std::vector<double> pooled(p.features(), 0.0);
  // Kernels are stored column-major; copy each filter's row contiguously.
  std::vector<Scalar> krow;
  for (std::size_t w = 0; w < p.windows.size(); ++w) {
    const std::size_t l = p.windows[w];
    krow.resize(l * d);
    for (std::size_t f = 0; f < p.filters; ++f) {
      for (std::size_t j = 0; j < l * d; ++j) krow[j] = p.kernels[w](static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j));
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t tau = 0; tau + l <= T; ++tau) {
        double c = static_cast<double>(p.biases[w](static_cast<Eigen::Index>(f), 0));
        for (std::size_t j = 0; j < l; ++j) c += detail::kernel_row_dot(krow.data() + j * d, E.row(static_cast<Eigen::Index>(tau + j)).data(), d);
        best = std::max(best, c);
      }
      pooled[w * p.filters + f] = best;
    }
  }
  return pooled;
}

template <typename Scalar>
double discriminator_logit(const DiscriminatorParams<Scalar>& p, const std::vector<double>& pooled) {
  double z = static_cast<double>(p.head_bias(0, 0));
  for (std::size_t i = 0; i < pooled.size(); ++i) z += static_cast<double>(p.head(0, static_cast<Eigen::Index>(i))) * pooled[i];
  return z;
}

/// P(benign | seq).
template <typename Scalar>
double discriminate(const DiscriminatorParams<Scalar>& p, const TokenSequence& seq, const EmbeddingMatrix& emb) {
  return detail::head_to_probability(discriminator_logit(p, pooled_features(p, seq, emb)));
}

/// Fast inference against a frozen snapshot. For small vocabularies the
/// kernel-row/embedding dot products are tabulated per token; the
/// accumulation order matches discriminate() so results agree bit-for-bit.
template <typename Scalar>
class DiscriminatorScorer {
 public:
  DiscriminatorScorer(const DiscriminatorParams<Scalar>& params, const EmbeddingMatrix& emb,
                      std::size_t max_table_vocab = 4096)
      : p_(params), emb_(emb) {
    if (emb.dim() != p_.d) throw Error("discriminator", "embedding dimension does not match discriminator");
    const std::size_t d = p_.d;
    offsets_.push_back(0);
    for (std::size_t l : p_.windows) offsets_.push_back(offsets_.back() + l * p_.filters);
    row_width_ = offsets_.back();
    krows_.resize(p_.windows.size());
    bias_.resize(p_.windows.size());
    for (std::size_t w = 0; w < p_.windows.size(); ++w) {
      const std::size_t l = p_.windows[w];
      krows_[w].resize(p_.filters * l * d);
      bias_[w].resize(static_cast<Eigen::Index>(p_.filters));
      for (std::size_t f = 0; f < p_.filters; ++f) {
        bias_[w](static_cast<Eigen::Index>(f)) = static_cast<double>(p_.biases[w](static_cast<Eigen::Index>(f), 0));
        for (std::size_t j = 0; j < l * d; ++j)
          krows_[w][f * l * d + j] = p_.kernels[w](static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j));
      }
    }
    if (emb.vocab() <= max_table_vocab) {
      table_.resize(emb.vocab() * row_width_);
      for (std::size_t v = 0; v < emb.vocab(); ++v) fill_row(static_cast<Token>(v), table_.data() + v * row_width_);
    }
  }

  bool tabulated() const noexcept { return !table_.empty(); }

  double operator()(const TokenSequence& seq) const { return score(seq); }

  double score(const TokenSequence& seq) const { return detail::head_to_probability(logit(seq)); }

  double logit(const TokenSequence& seq) const {
    const std::size_t T = seq.size();
    if (T < p_.max_window()) throw Error("discriminator", "sequence shorter than the largest window");
    if (seq.granularity != emb_.granularity) throw Error("discriminator", "sequence granularity does not match");
    for (Token t : seq.tokens)
      if (t >= emb_.vocab()) throw Error("discriminator", "token outside embedding table");
    std::vector<double> direct;
    if (!tabulated()) {
      direct.resize(T * row_width_);
      for (std::size_t t = 0; t < T; ++t) fill_row(seq.tokens[t], direct.data() + t * row_width_);
    }
    auto row_of = [&](std::size_t t) {
      return tabulated() ? table_.data() + static_cast<std::size_t>(seq.tokens[t]) * row_width_
                         : direct.data() + t * row_width_;
    };
    const auto F = static_cast<Eigen::Index>(p_.filters);
    Eigen::ArrayXd acc(F), best(F);
    double z = static_cast<double>(p_.head_bias(0, 0));
    for (std::size_t w = 0; w < p_.windows.size(); ++w) {
      const std::size_t l = p_.windows[w];
      best.setConstant(-std::numeric_limits<double>::infinity());
      for (std::size_t tau = 0; tau + l <= T; ++tau) {
        acc = bias_[w];
        for (std::size_t j = 0; j < l; ++j) {
          acc += Eigen::Map<const Eigen::ArrayXd>(row_of(tau + j) + offsets_[w] + j * p_.filters, F);
        }
        best = best.max(acc);
      }
      for (Eigen::Index f = 0; f < F; ++f)
        z += static_cast<double>(p_.head(0, static_cast<Eigen::Index>(w * p_.filters) + f)) * best(f);
    }
    return z;
  }

 private:
  // Entry offsets_[w] + j * filters + f holds kernel row j of filter f dotted
  // with the token's embedding.
  void fill_row(Token v, double* out) const {
    const std::size_t d = p_.d;
    const float* e = emb_.row(v).data();
    for (std::size_t w = 0; w < p_.windows.size(); ++w) {
      const std::size_t l = p_.windows[w];
      for (std::size_t f = 0; f < p_.filters; ++f)
        for (std::size_t j = 0; j < l; ++j)
          out[offsets_[w] + j * p_.filters + f] = detail::kernel_row_dot(krows_[w].data() + f * l * d + j * d, e, d);
    }
  }

  const DiscriminatorParams<Scalar>& p_;
  const EmbeddingMatrix& emb_;
  std::vector<std::size_t> offsets_;
  std::size_t row_width_ = 0;
  std::vector<std::vector<Scalar>> krows_;
  std::vector<Eigen::ArrayXd> bias_;
  std::vector<double> table_;
};

/// Binary cross-entropy of one sample, computed from the logit for stability.
inline double bce_from_logit(double z, bool benign) { return benign ? softplus(-z) : softplus(z); }

/// Detector loss -sum_X log D(x) - sum_Y log(1 - D(y)), summed over both sets.
template <typename Scalar>
double discriminator_loss(const DiscriminatorParams<Scalar>& p, std::span<const TokenSequence> benign,
                          std::span<const TokenSequence> malicious, const EmbeddingMatrix& emb) {
  const DiscriminatorScorer<Scalar> scorer(p, emb);
  double loss = 0.0;
  for (const auto& x : benign) loss += bce_from_logit(scorer.logit(x), true);
  for (const auto& y : malicious) loss += bce_from_logit(scorer.logit(y), false);
  return loss;
}

namespace detail {

/// Forward and backward for one sample using im2col over the row-major
/// embedding: window tau is the contiguous slice E[tau*d, (tau+l)*d).
template <typename Scalar>
double accumulate_sample_gradient(const DiscriminatorParams<Scalar>& p, const TokenSequence& seq,
                                  const EmbeddingMatrix& emb, bool benign, double weight,
                                  DiscriminatorParams<Scalar>& grad,
                                  const std::type_identity_t<std::vector<Scalar>>* dropout_scale) {
  const std::size_t T = seq.size();
  if (T < p.max_window()) throw Error("discriminator", "sequence shorter than the largest window");
  const auto d = static_cast<Eigen::Index>(p.d);
  Mat<Scalar> E(d, static_cast<Eigen::Index>(T));  // column t = embedding of token t
  for (std::size_t t = 0; t < T; ++t) {
    if (seq.tokens[t] >= emb.vocab()) throw Error("discriminator", "token outside embedding table");
    E.col(static_cast<Eigen::Index>(t)) = emb.row(seq.tokens[t]).transpose().template cast<Scalar>();
  }
  const std::size_t F = p.features();
  std::vector<double> pooled(F);
  std::vector<Eigen::Index> argmax(F);
  for (std::size_t w = 0; w < p.windows.size(); ++w) {
    const auto l = static_cast<Eigen::Index>(p.windows[w]);
    const Eigen::Index n = static_cast<Eigen::Index>(T) - l + 1;
    Eigen::Map<const Mat<Scalar>, 0, Eigen::OuterStride<>> cols(E.data(), l * d, n, Eigen::OuterStride<>(d));
    Mat<Scalar> C = p.kernels[w] * cols;
    C.colwise() += p.biases[w].col(0);
    for (std::size_t f = 0; f < p.filters; ++f) {
      Eigen::Index best = 0;
      C.row(static_cast<Eigen::Index>(f)).maxCoeff(&best);
      pooled[w * p.filters + f] = static_cast<double>(C(static_cast<Eigen::Index>(f), best));
      argmax[w * p.filters + f] = best;
    }
  }
  if (dropout_scale)
    for (std::size_t i = 0; i < F; ++i) pooled[i] *= static_cast<double>((*dropout_scale)[i]);
  const double z = discriminator_logit(p, pooled);
  const double loss = bce_from_logit(z, benign);
  const double dz = weight * (sigmoid(z) - (benign ? 1.0 : 0.0));
  grad.head_bias(0, 0) += static_cast<Scalar>(dz);
  for (std::size_t i = 0; i < F; ++i) grad.head(0, static_cast<Eigen::Index>(i)) += static_cast<Scalar>(dz * pooled[i]);
  for (std::size_t w = 0; w < p.windows.size(); ++w) {
    const auto l = static_cast<Eigen::Index>(p.windows[w]);
    for (std::size_t f = 0; f < p.filters; ++f) {
      const std::size_t i = w * p.filters + f;
      double g = dz * static_cast<double>(p.head(0, static_cast<Eigen::Index>(i)));
      if (dropout_scale) g *= static_cast<double>((*dropout_scale)[i]);
      if (g == 0.0) continue;
      const auto gs = static_cast<Scalar>(g);
      Eigen::Map<const Vec<Scalar>> window(E.data() + argmax[i] * d, l * d);
      grad.kernels[w].row(static_cast<Eigen::Index>(f)) += gs * window.transpose();
      grad.biases[w](static_cast<Eigen::Index>(f), 0) += gs;
    }
  }
  return loss;
}

}  // namespace detail

/// Gradient of the summed detector loss over the given sets (no dropout).
template <typename Scalar>
std::pair<double, DiscriminatorParams<Scalar>> discriminator_loss_gradient(const DiscriminatorParams<Scalar>& p,
                                                                           std::span<const TokenSequence> benign,
                                                                           std::span<const TokenSequence> malicious,
                                                                           const EmbeddingMatrix& emb) {
  DiscriminatorParams<Scalar> grad = zeros_like(p);
  double loss = 0.0;
  for (const auto& x : benign) loss += detail::accumulate_sample_gradient(p, x, emb, true, 1.0, grad, nullptr);
  for (const auto& y : malicious) loss += detail::accumulate_sample_gradient(p, y, emb, false, 1.0, grad, nullptr);
  return {loss, grad};
}

struct DiscriminatorTrainOptions {
  std::size_t epochs = 3;
  std::size_t batch = 64;  // split evenly between the two sets
  double lr = 1e-4;
  double dropout = 0.0;
  std::uint64_t seed = 1;
};

struct DiscriminatorTrainResult {
  std::vector<double> loss_trace;  // detector loss over the full sets after each epoch
  double initial_loss = 0.0;
};

/// Adam on the detector loss with balanced minibatches: each batch holds batch/2 samples
/// from each set and the smaller set cycles. The per-batch objective is the
/// mean BCE over the batch.
template <typename Scalar>
DiscriminatorTrainResult train_discriminator(DiscriminatorParams<Scalar>& params, Adam<Scalar>& adam,
                                             std::span<const TokenSequence> benign,
                                             std::span<const TokenSequence> malicious, const EmbeddingMatrix& emb,
                                             const DiscriminatorTrainOptions& options) {
  if (benign.empty() || malicious.empty()) {
    throw Error("discriminator", std::string("cannot train with an empty ") + (benign.empty() ? "benign" : "malicious") +
                                     " set");
  }
  DiscriminatorTrainResult result;
  result.initial_loss = discriminator_loss(params, benign, malicious, emb);
  const std::size_t half = std::max<std::size_t>(1, options.batch / 2);
  const std::size_t steps = (std::max(benign.size(), malicious.size()) + half - 1) / half;
  std::vector<std::size_t> bx(benign.size()), by(malicious.size());
  std::iota(bx.begin(), bx.end(), std::size_t{0});
  std::iota(by.begin(), by.end(), std::size_t{0});
  std::vector<Scalar> scale(params.features(), Scalar(1));
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng = make_rng(options.seed, stream_id("discriminator/epoch"), epoch);
    shuffle(bx, rng);
    shuffle(by, rng);
    std::size_t ix = 0, iy = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      DiscriminatorParams<Scalar> grad = zeros_like(params);
      const double w = 1.0 / static_cast<double>(2 * half);
      for (std::size_t k = 0; k < 2 * half; ++k) {
        const bool is_benign = k < half;
        const TokenSequence& seq = is_benign ? benign[bx[ix++ % bx.size()]] : malicious[by[iy++ % by.size()]];
        const std::vector<Scalar>* drop = nullptr;
        if (options.dropout > 0) {
          const double keep = 1.0 - options.dropout;
          for (auto& v : scale) v = uniform01(rng) < keep ? static_cast<Scalar>(1.0 / keep) : Scalar(0);
          drop = &scale;
        }
        detail::accumulate_sample_gradient(params, seq, emb, is_benign, w, grad, drop);
      }
      adam.step(params, grad);
    }
    result.loss_trace.push_back(discriminator_loss(params, benign, malicious, emb));
  }
  return result;
}

}  // namespace attackgan
