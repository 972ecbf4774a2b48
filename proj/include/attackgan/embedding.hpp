#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attackgan/checkpoint.hpp"
#include "attackgan/packet.hpp"

namespace attackgan {

/// Skip-gram network: one-hot center -> hidden (row of W_h) -> softmax(W_out^T h).
template <typename Scalar>
struct SkipGramModel {
  Granularity granularity = Granularity::one_byte;
  std::size_t window = 2;
  RowMat<Scalar> hidden;  // V x d, the embedding table
  Mat<Scalar> output;     // d x V

  std::size_t vocab() const { return static_cast<std::size_t>(hidden.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(hidden.cols()); }
};

/// Frozen V x d lookup table shared by generator, discriminator and metrics.
struct EmbeddingMatrix {
  Granularity granularity = Granularity::one_byte;
  RowMat<float> table;

  std::size_t vocab() const { return static_cast<std::size_t>(table.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(table.cols()); }
  auto row(Token t) const { return table.row(static_cast<Eigen::Index>(t)); }

  void save(Checkpoint& ckpt) const {
    ckpt.add_matrix("embedding/table", table);
    ckpt.add_scalar("embedding/granularity", static_cast<double>(granularity));
  }

  static EmbeddingMatrix load(const Checkpoint& ckpt) {
    EmbeddingMatrix emb;
    emb.granularity = static_cast<Granularity>(static_cast<int>(ckpt.get_scalar("embedding/granularity")));
    emb.table = ckpt.get_matrix<float>("embedding/table");
    if (emb.table.rows() != static_cast<Eigen::Index>(vocab_size(emb.granularity))) {
      throw Error("embedding", "table rows do not match the vocabulary size");
    }
    return emb;
  }
};

struct SkipGramOptions {
  std::size_t dim = 32;
  std::size_t window = 2;
  std::size_t epochs = 5;
  double lr = 0.025;
  std::uint64_t seed = 1;
  std::size_t negatives = 5;
  /// Vocabularies above this size train with negative sampling instead of a full softmax.
  std::size_t full_softmax_max_vocab = 4096;
  std::size_t monitor_centers = 2000;
};

template <typename Scalar>
struct SkipGramResult {
  SkipGramModel<Scalar> model;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // monitoring loss after each epoch
  std::size_t pair_count = 0;
};

// ---------------------------------------------------------------------------

template <typename F>
void for_each_training_pair(std::span<const TokenSequence> corpus, std::size_t window, F&& f) {
  if (window == 0) throw Error("embedding", "skip-gram window must be at least 1");
  for (const TokenSequence& seq : corpus) {
    const std::size_t T = seq.size();
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t lo = t >= window ? t - window : 0;
      const std::size_t hi = std::min(T - 1, t + window);
      for (std::size_t j = lo; j <= hi; ++j)
        if (j != t) f(seq.tokens[t], seq.tokens[j]);
    }
  }
}

inline std::vector<std::pair<Token, Token>> build_training_pairs(std::span<const TokenSequence> corpus,
                                                                 std::size_t window) {
  std::vector<std::pair<Token, Token>> pairs;
  for_each_training_pair(corpus, window, [&](Token c, Token x) { pairs.emplace_back(c, x); });
  return pairs;
}

template <typename Scalar>
SkipGramModel<Scalar> init_skipgram(Granularity granularity, std::size_t dim, std::size_t window,
                                    std::uint64_t seed) {
  if (dim == 0) throw Error("embedding", "embedding dimension must be at least 1");
  const auto V = static_cast<Eigen::Index>(vocab_size(granularity));
  const auto d = static_cast<Eigen::Index>(dim);
  SkipGramModel<Scalar> model;
  model.granularity = granularity;
  model.window = window;
  model.hidden.resize(V, d);
  model.output.resize(d, V);
  Rng rng = make_rng(seed, stream_id("embedding/init"));
  const double half_range = 0.5 / static_cast<double>(dim);
  for (Eigen::Index i = 0; i < V; ++i)
    for (Eigen::Index j = 0; j < d; ++j) model.hidden(i, j) = static_cast<Scalar>((2 * uniform01(rng) - 1) * half_range);
  for (Eigen::Index j = 0; j < V; ++j)
    for (Eigen::Index i = 0; i < d; ++i) model.output(i, j) = static_cast<Scalar>((2 * uniform01(rng) - 1) * half_range);
  return model;
}

/// Full softmax over the vocabulary for one center token.
template <typename Scalar>
Vec<double> predictive_distribution(const SkipGramModel<Scalar>& model, Token center) {
  Vec<double> scores = (model.output.transpose() * model.hidden.row(center).transpose()).template cast<double>();
  scores.array() -= scores.maxCoeff();
  scores = scores.array().exp();
  return scores / scores.sum();
}

/// Sum of -log p(context | center) over pairs and its gradient (full softmax).
template <typename Scalar>
std::pair<double, SkipGramModel<Scalar>> skipgram_loss_gradient(const SkipGramModel<Scalar>& model,
                                                                std::span<const std::pair<Token, Token>> pairs) {
  SkipGramModel<Scalar> grad = model;
  grad.hidden.setZero();
  grad.output.setZero();
  double loss = 0.0;
  for (const auto& [center, context] : pairs) {
    const Vec<Scalar> h = model.hidden.row(center).transpose();
    Vec<Scalar> s = model.output.transpose() * h;
    const Scalar m = s.maxCoeff();
    Vec<Scalar> p = (s.array() - m).exp();
    const Scalar z = p.sum();
    p /= z;
    loss -= static_cast<double>(s(context) - m - std::log(z));
    p(context) -= Scalar(1);
    grad.output.noalias() += h * p.transpose();
    grad.hidden.row(center).noalias() += (model.output * p).transpose();
  }
  return {loss, std::move(grad)};
}

namespace detail {

inline void check_vocab(std::span<const TokenSequence> corpus, Granularity granularity) {
  const std::size_t V = vocab_size(granularity);
  for (const auto& seq : corpus) {
    if (seq.granularity != granularity) throw Error("embedding", "corpus mixes token granularities");
    for (Token t : seq.tokens)
      if (t >= V) throw Error("embedding", "token " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
  }
}

struct CenterContexts {
  Token center;
  std::vector<Token> contexts;
};

inline std::vector<CenterContexts> sample_monitor_set(std::span<const TokenSequence> corpus, std::size_t window,
                                                      std::size_t limit, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t s = 0; s < corpus.size(); ++s)
    for (std::size_t t = 0; t < corpus[s].size(); ++t)
      if (corpus[s].size() > 1) positions.emplace_back(s, t);
  Rng rng = make_rng(seed, stream_id("embedding/monitor"));
  shuffle(positions, rng);
  if (positions.size() > limit) positions.resize(limit);
  std::sort(positions.begin(), positions.end());
  std::vector<CenterContexts> out;
  for (auto [s, t] : positions) {
    const auto& seq = corpus[s];
    CenterContexts cc{seq.tokens[t], {}};
    const std::size_t lo = t >= window ? t - window : 0;
    const std::size_t hi = std::min(seq.size() - 1, t + window);
    for (std::size_t j = lo; j <= hi; ++j)
      if (j != t) cc.contexts.push_back(seq.tokens[j]);
    out.push_back(std::move(cc));
  }
  return out;
}

/// Cumulative unigram^0.75 table for negative sampling.
inline std::vector<double> noise_cdf(std::span<const TokenSequence> corpus, std::size_t V) {
  std::vector<double> freq(V, 0.0);
  for (const auto& seq : corpus)
    for (Token t : seq.tokens) freq[t] += 1.0;
  double acc = 0.0;
  for (auto& f : freq) {
    acc += std::pow(f, 0.75);
    f = acc;
  }
  if (acc > 0)
    for (auto& f : freq) f /= acc;
  return freq;
}

inline Token draw_noise(const std::vector<double>& cdf, Rng& rng) {
  const double u = uniform01(rng);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<Token>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1));
}

template <typename Scalar>
double monitor_loss(const SkipGramModel<Scalar>& model, const std::vector<CenterContexts>& monitor, bool full_softmax,
                    const std::vector<double>& cdf, std::size_t negatives, std::uint64_t seed) {
  double loss = 0.0;
  std::size_t n = 0;
  Rng rng = make_rng(seed, stream_id("embedding/monitor-noise"));
  for (const auto& cc : monitor) {
    const Vec<Scalar> h = model.hidden.row(cc.center).transpose();
    if (full_softmax) {
      Vec<double> s = (model.output.transpose() * h).template cast<double>();
      const double m = s.maxCoeff();
      const double lz = m + std::log((s.array() - m).exp().sum());
      for (Token x : cc.contexts) loss += lz - s(x);
    } else {
      for (Token x : cc.contexts) {
        loss += softplus(-static_cast<double>(model.output.col(x).dot(h)));
        for (std::size_t k = 0; k < negatives; ++k) {
          const Token neg = draw_noise(cdf, rng);
          loss += softplus(static_cast<double>(model.output.col(neg).dot(h)));
        }
      }
    }
    n += cc.contexts.size();
  }
  return n ? loss / static_cast<double>(n) : 0.0;
}

}  // namespace detail

/// SGD skip-gram training. Full softmax for small vocabularies, negative
/// sampling above `full_softmax_max_vocab`. Deterministic under `options.seed`.
template <typename Scalar = float>
SkipGramResult<Scalar> train_skipgram(std::span<const TokenSequence> corpus, Granularity granularity,
                                      const SkipGramOptions& options) {
  if (corpus.empty()) throw Error("embedding", "skip-gram corpus is empty");
  if (options.window == 0) throw Error("embedding", "skip-gram window must be at least 1");
  detail::check_vocab(corpus, granularity);
  SkipGramResult<Scalar> result;
  result.model = init_skipgram<Scalar>(granularity, options.dim, options.window, options.seed);
  auto& model = result.model;
  const std::size_t V = model.vocab();
  const bool full_softmax = V <= options.full_softmax_max_vocab;

  for_each_training_pair(corpus, options.window, [&](Token, Token) { ++result.pair_count; });
  if (result.pair_count == 0) return result;

  const auto cdf = full_softmax ? std::vector<double>{} : detail::noise_cdf(corpus, V);
  const auto monitor = detail::sample_monitor_set(corpus, options.window, options.monitor_centers, options.seed);
  auto measure = [&] {
    return detail::monitor_loss(model, monitor, full_softmax, cdf, options.negatives, options.seed);
  };
  result.initial_loss = measure();

  const auto lr = static_cast<Scalar>(options.lr);
  const auto d = static_cast<Eigen::Index>(model.dim());
  Vec<Scalar> s(static_cast<Eigen::Index>(V));
  Vec<Scalar> grad_h(d);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng = make_rng(options.seed, stream_id("embedding/epoch"), epoch);
    shuffle(order, rng);
    for (std::size_t si : order) {
      const TokenSequence& seq = corpus[si];
      const std::size_t T = seq.size();
      for (std::size_t t = 0; t < T; ++t) {
        const Token center = seq.tokens[t];
        const std::size_t lo = t >= options.window ? t - options.window : 0;
        const std::size_t hi = std::min(T - 1, t + options.window);
        if (lo == hi) continue;
        const Vec<Scalar> h = model.hidden.row(center).transpose();
        if (full_softmax) {
          // All contexts of one center share the softmax; their gradients add.
          s.noalias() = model.output.transpose() * h;
          s.array() = (s.array() - s.maxCoeff()).exp();
          s /= s.sum();
          s *= static_cast<Scalar>(hi - lo);
          for (std::size_t j = lo; j <= hi; ++j)
            if (j != t) s(seq.tokens[j]) -= Scalar(1);
          grad_h.noalias() = model.output * s;
          model.output.noalias() -= lr * h * s.transpose();
          model.hidden.row(center).noalias() -= lr * grad_h.transpose();
        } else {
          grad_h.setZero();
          for (std::size_t j = lo; j <= hi; ++j) {
            if (j == t) continue;
            for (std::size_t k = 0; k <= options.negatives; ++k) {
              const Token target = k == 0 ? seq.tokens[j] : detail::draw_noise(cdf, rng);
              const Scalar label = k == 0 ? Scalar(1) : Scalar(0);
              auto u = model.output.col(target);
              const auto g = static_cast<Scalar>(sigmoid(static_cast<double>(u.dot(h)))) - label;
              grad_h.noalias() += g * u;
              u.noalias() -= lr * g * h;
            }
          }
          model.hidden.row(center).noalias() -= lr * grad_h.transpose();
        }
      }
    }
    result.epoch_loss.push_back(measure());
  }
  return result;
}

template <typename Scalar>
EmbeddingMatrix to_embedding(const SkipGramModel<Scalar>& model) {
  EmbeddingMatrix emb;
  emb.granularity = model.granularity;
  emb.table = model.hidden.template cast<float>();
  return emb;
}

inline RowMat<float> embed_sequence(const TokenSequence& seq, const EmbeddingMatrix& emb) {
  if (seq.granularity != emb.granularity) throw Error("embedding", "sequence and embedding granularity differ");
  RowMat<float> out(static_cast<Eigen::Index>(seq.size()), static_cast<Eigen::Index>(emb.dim()));
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq.tokens[t] >= emb.vocab()) throw Error("embedding", "token outside embedding table");
    out.row(static_cast<Eigen::Index>(t)) = emb.row(seq.tokens[t]);
  }
  return out;
}

}  // namespace attackgan
