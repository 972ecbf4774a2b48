#pragma once

// LSTM policy over tokens. Inputs are frozen skip-gram embeddings of the
// previous token; the first step reads a learned start vector.

#include <cmath>
#include <limits>
#include <type_traits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "attackgan/adam.hpp"
#include "attackgan/checkpoint.hpp"
#include "attackgan/embedding.hpp"
#include "attackgan/packet.hpp"

namespace attackgan {

template <typename Scalar>
struct GeneratorParams {
  std::size_t H = 0;
  std::size_t V = 0;
  std::size_t d = 0;
  Mat<Scalar> gates;       // 4H x (d+H); row blocks f, i, c, o acting on [x; h]
  Mat<Scalar> gate_bias;   // 4H x 1
  Mat<Scalar> out_weight;  // V x H
  Mat<Scalar> out_bias;    // V x 1
  Mat<Scalar> start;       // d x 1

  std::vector<std::pair<std::string, Mat<Scalar>*>> named_tensors() {
    return {{"gates", &gates}, {"gate_bias", &gate_bias}, {"out_weight", &out_weight}, {"out_bias", &out_bias},
            {"start", &start}};
  }
  std::vector<std::pair<std::string, const Mat<Scalar>*>> named_tensors() const {
    return {{"gates", &gates}, {"gate_bias", &gate_bias}, {"out_weight", &out_weight}, {"out_bias", &out_bias},
            {"start", &start}};
  }

  auto W(std::size_t gate) { return gates.middleRows(static_cast<Eigen::Index>(gate * H), static_cast<Eigen::Index>(H)); }
  auto W(std::size_t gate) const {
    return gates.middleRows(static_cast<Eigen::Index>(gate * H), static_cast<Eigen::Index>(H));
  }
  auto b(std::size_t gate) {
    return gate_bias.middleRows(static_cast<Eigen::Index>(gate * H), static_cast<Eigen::Index>(H));
  }
  auto b(std::size_t gate) const {
    return gate_bias.middleRows(static_cast<Eigen::Index>(gate * H), static_cast<Eigen::Index>(H));
  }

  bool all_finite() const {
    for (const auto& [name, t] : named_tensors())
      if (!t->allFinite()) return false;
    return true;
  }

  template <typename Other>
  GeneratorParams<Other> cast() const {
    GeneratorParams<Other> out;
    out.H = H;
    out.V = V;
    out.d = d;
    out.gates = gates.template cast<Other>();
    out.gate_bias = gate_bias.template cast<Other>();
    out.out_weight = out_weight.template cast<Other>();
    out.out_bias = out_bias.template cast<Other>();
    out.start = start.template cast<Other>();
    return out;
  }

  bool operator==(const GeneratorParams& o) const {
    return H == o.H && V == o.V && d == o.d && gates == o.gates && gate_bias == o.gate_bias &&
           out_weight == o.out_weight && out_bias == o.out_bias && start == o.start;
  }
};

inline constexpr const char* kGateNames[4] = {"f", "i", "c", "o"};

template <typename Scalar>
GeneratorParams<Scalar> init_generator(std::size_t V, std::size_t d, std::size_t H, std::uint64_t seed) {
  if (V == 0 || d == 0 || H == 0) throw Error("generator", "generator dimensions must be positive");
  GeneratorParams<Scalar> p;
  p.H = H;
  p.V = V;
  p.d = d;
  Rng rng = make_rng(seed, stream_id("generator/init"));
  const double k = 1.0 / std::sqrt(static_cast<double>(H));
  auto fill = [&](Mat<Scalar>& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = static_cast<Scalar>((2 * uniform01(rng) - 1) * k);
  };
  const auto h = static_cast<Eigen::Index>(H);
  fill(p.gates, 4 * h, static_cast<Eigen::Index>(d) + h);
  fill(p.gate_bias, 4 * h, 1);
  fill(p.out_weight, static_cast<Eigen::Index>(V), h);
  fill(p.out_bias, static_cast<Eigen::Index>(V), 1);
  fill(p.start, static_cast<Eigen::Index>(d), 1);
  return p;
}

template <typename Scalar>
void save_generator(Checkpoint& ckpt, const GeneratorParams<Scalar>& p, const std::string& prefix = "gen") {
  for (std::size_t g = 0; g < 4; ++g) {
    ckpt.add_matrix(prefix + "/W_" + kGateNames[g], p.W(g));
    ckpt.add_matrix(prefix + "/b_" + kGateNames[g], p.b(g));
  }
  ckpt.add_matrix(prefix + "/out_weight", p.out_weight);
  ckpt.add_matrix(prefix + "/out_bias", p.out_bias);
  ckpt.add_matrix(prefix + "/start", p.start);
}

template <typename Scalar>
GeneratorParams<Scalar> load_generator(const Checkpoint& ckpt, const std::string& prefix = "gen") {
  GeneratorParams<Scalar> p;
  const Mat<Scalar> wf = ckpt.get_matrix<Scalar>(prefix + "/W_f");
  p.H = static_cast<std::size_t>(wf.rows());
  p.d = static_cast<std::size_t>(wf.cols()) - p.H;
  const auto h = static_cast<Eigen::Index>(p.H);
  p.gates.resize(4 * h, wf.cols());
  p.gate_bias.resize(4 * h, 1);
  for (std::size_t g = 0; g < 4; ++g) {
    p.W(g) = ckpt.get_matrix<Scalar>(prefix + "/W_" + kGateNames[g], h, wf.cols());
    p.b(g) = ckpt.get_matrix<Scalar>(prefix + "/b_" + kGateNames[g], h, 1);
  }
  p.out_weight = ckpt.get_matrix<Scalar>(prefix + "/out_weight");
  p.V = static_cast<std::size_t>(p.out_weight.rows());
  if (p.out_weight.cols() != h) throw Error("generator", "output projection does not match hidden size");
  p.out_bias = ckpt.get_matrix<Scalar>(prefix + "/out_bias", static_cast<Eigen::Index>(p.V), 1);
  p.start = ckpt.get_matrix<Scalar>(prefix + "/start", static_cast<Eigen::Index>(p.d), 1);
  if (!p.all_finite()) throw Error("generator", "checkpoint holds non-finite generator parameters");
  return p;
}

template <typename Scalar>
struct GeneratorState {
  Vec<Scalar> h;
  Vec<Scalar> c;
  std::size_t t = 0;
  std::vector<Token> prefix;
};

template <typename Scalar>
GeneratorState<Scalar> initial_state(const GeneratorParams<Scalar>& p) {
  return {Vec<Scalar>::Zero(static_cast<Eigen::Index>(p.H)), Vec<Scalar>::Zero(static_cast<Eigen::Index>(p.H)), 0, {}};
}

struct PolicySample {
  TokenSequence tokens;
  std::vector<double> step_logprobs;  // 0 at forced positions
  std::vector<bool> masked;
};

/// One step of the gated recurrence. The returned state has `t` advanced but
/// leaves `prefix` for the caller, which knows the emitted token.
template <typename Scalar>
std::pair<GeneratorState<Scalar>, Vec<Scalar>> lstm_step(const GeneratorParams<Scalar>& p,
                                                         const GeneratorState<Scalar>& s,
                                                         const std::type_identity_t<Eigen::Ref<const Vec<Scalar>>>& x) {
  if (static_cast<std::size_t>(x.size()) != p.d) throw Error("generator", "input has wrong dimension");
  if (!x.allFinite() || !s.h.allFinite() || !s.c.allFinite()) throw Error("generator", "non-finite input to lstm_step");
  const auto H = static_cast<Eigen::Index>(p.H);
  const auto d = static_cast<Eigen::Index>(p.d);
  const Vec<Scalar> z = p.gates.leftCols(d) * x + p.gates.rightCols(H) * s.h + p.gate_bias;
  auto sig = [](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); };
  GeneratorState<Scalar> next;
  next.t = s.t + 1;
  next.prefix = s.prefix;
  next.c.resize(H);
  next.h.resize(H);
  for (Eigen::Index k = 0; k < H; ++k) {
    const Scalar f = sig(z(k));
    const Scalar i = sig(z(H + k));
    const Scalar g = std::tanh(z(2 * H + k));
    const Scalar o = sig(z(3 * H + k));
    next.c(k) = f * s.c(k) + i * g;
    next.h(k) = o * std::tanh(next.c(k));
  }
  Vec<Scalar> logits = p.out_weight * next.h + p.out_bias;
  return {std::move(next), std::move(logits)};
}

template <typename Derived>
Vec<double> softmax(const Eigen::MatrixBase<Derived>& logits) {
  const Vec<double> z = logits.template cast<double>();
  Vec<double> e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

/// Input vector for step t given the previously emitted token.
template <typename Scalar>
Vec<Scalar> step_input(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb, const std::vector<Token>& prefix) {
  if (prefix.empty()) return p.start.col(0);
  return emb.row(prefix.back()).transpose().template cast<Scalar>();
}

/// Distribution over the next token: consumes the last token of the prefix
/// (or the start vector) from `state` and returns softmax of the logits.
template <typename Scalar>
Vec<double> next_token_distribution(const GeneratorParams<Scalar>& p, const GeneratorState<Scalar>& state,
                                    const EmbeddingMatrix& emb) {
  const auto [next, logits] = lstm_step(p, state, step_input(p, emb, state.prefix));
  return softmax(logits);
}

namespace detail {

inline void check_generator_embedding(std::size_t V, std::size_t d, const EmbeddingMatrix& emb) {
  if (emb.vocab() != V) throw Error("generator", "embedding vocabulary does not match generator");
  if (emb.dim() != d) throw Error("generator", "embedding dimension does not match generator");
}

/// Turns stacked pre-activations z (4H x n) into gate activations in place
/// and advances the cell and hidden blocks.
template <typename Scalar, typename CBlock, typename HBlock>
void apply_gates(Mat<Scalar>& z, Eigen::Index H, CBlock&& c, HBlock&& h) {
  const Eigen::Index n = z.cols();
  auto f = z.topRows(H).array();
  auto i = z.middleRows(H, H).array();
  auto g = z.middleRows(2 * H, H).array();
  auto o = z.bottomRows(H).array();
  f = (Scalar(1) + (-f).exp()).inverse();
  i = (Scalar(1) + (-i).exp()).inverse();
  g = g.tanh();
  o = (Scalar(1) + (-o).exp()).inverse();
  c.array() = f * c.array() + i * g;
  h.array() = o * c.array().tanh();
  (void)n;
}

/// Batched recurrence over columns; each column is one sequence.
template <typename Scalar>
struct LstmColumns {
  Mat<Scalar> h, c;

  /// Advances the first x.cols() columns; the rest are left untouched.
  void step(const GeneratorParams<Scalar>& p, const Mat<Scalar>& x) {
    const auto H = static_cast<Eigen::Index>(p.H);
    Mat<Scalar> z = p.gates.rightCols(H) * h.leftCols(x.cols());
    z.noalias() += p.gates.leftCols(static_cast<Eigen::Index>(p.d)) * x;
    z.colwise() += p.gate_bias.col(0);
    apply_gates(z, H, c.leftCols(x.cols()), h.leftCols(x.cols()));
  }
};

template <typename Scalar>
Mat<Scalar> gather_inputs(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb, std::span<const Token> prev,
                          bool at_start) {
  Mat<Scalar> x(static_cast<Eigen::Index>(p.d), static_cast<Eigen::Index>(prev.size()));
  for (std::size_t n = 0; n < prev.size(); ++n) {
    if (at_start) {
      x.col(static_cast<Eigen::Index>(n)) = p.start.col(0);
    } else {
      x.col(static_cast<Eigen::Index>(n)) = emb.row(prev[n]).transpose().template cast<Scalar>();
    }
  }
  return x;
}

/// Draws one token per listed column from softmax(W h + b). Logits are
/// computed in chunks so large vocabularies stay within memory.
template <typename Scalar>
void sample_columns(const GeneratorParams<Scalar>& p, const Mat<Scalar>& h, std::span<const Eigen::Index> cols,
                    std::span<StreamRng*> rngs, std::span<Token> out_tokens, std::span<double> out_logprob) {
  if (cols.empty()) return;
  const auto V = static_cast<Eigen::Index>(p.V);
  const Eigen::Index chunk = std::max<Eigen::Index>(1, (1 << 22) / V);
  Mat<Scalar> hc, logits;
  for (std::size_t start = 0; start < cols.size(); start += static_cast<std::size_t>(chunk)) {
    const auto n = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(chunk), cols.size() - start));
    hc.resize(h.rows(), n);
    for (Eigen::Index k = 0; k < n; ++k) hc.col(k) = h.col(cols[start + static_cast<std::size_t>(k)]);
    logits.noalias() = p.out_weight * hc;
    logits.colwise() += p.out_bias.col(0);
    const auto maxes = logits.colwise().maxCoeff().eval();
    logits.array() = (logits.rowwise() - maxes).array().exp();
    const auto totals = logits.colwise().sum().eval();
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::size_t idx = start + static_cast<std::size_t>(k);
      const Scalar* e = logits.col(k).data();
      const Scalar total = totals(k);
      const auto u = static_cast<Scalar>(uniform01(*rngs[idx])) * total;
      Scalar acc = 0;
      Eigen::Index chosen = V - 1;
      for (Eigen::Index v = 0; v < V; ++v) {
        acc += e[v];
        if (u < acc) {
          chosen = v;
          break;
        }
      }
      // Skip zero-probability tail entries if rounding pushed u past the last positive term.
      while (chosen > 0 && e[chosen] == Scalar(0)) --chosen;
      out_tokens[idx] = static_cast<Token>(chosen);
      out_logprob[idx] = std::log(static_cast<double>(e[chosen])) - std::log(static_cast<double>(total));
    }
  }
}

}  // namespace detail

/// Samples one sequence per mask. Column n draws from its own stream keyed by
/// (seed, first_id + n), so a sample depends only on its id, not the batch.
template <typename Scalar>
std::vector<PolicySample> sample_batch(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb,
                                       std::span<const ConstraintMask> masks, std::uint64_t seed,
                                       std::uint64_t first_id = 0) {
  detail::check_generator_embedding(p.V, p.d, emb);
  const std::size_t N = masks.size();
  if (N == 0) return {};
  const Granularity gran = emb.granularity;
  const std::size_t T = masks[0].token_count();
  std::vector<TokenSequence> templ(N);
  std::vector<std::vector<bool>> flags(N);
  for (std::size_t n = 0; n < N; ++n) {
    if (masks[n].granularity != gran) throw Error("generator", "mask granularity does not match embedding");
    if (masks[n].token_count() != T) throw Error("generator", "masks in one batch must share a length");
    templ[n] = tokenize(masks[n].templ, gran);
    flags[n] = masks[n].token_flags();
  }
  std::vector<StreamRng> rng_store;
  rng_store.reserve(N);
  for (std::size_t n = 0; n < N; ++n) rng_store.push_back(make_stream_rng(seed, stream_id("generator/sample"), first_id + n));

  std::vector<PolicySample> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    out[n].tokens.granularity = gran;
    out[n].tokens.tokens.assign(T, 0);
    out[n].step_logprobs.assign(T, 0.0);
    out[n].masked = flags[n];
  }
  const auto cols = static_cast<Eigen::Index>(N);
  detail::LstmColumns<Scalar> lstm{Mat<Scalar>::Zero(static_cast<Eigen::Index>(p.H), cols),
                                   Mat<Scalar>::Zero(static_cast<Eigen::Index>(p.H), cols)};
  std::vector<Token> prev(N, 0);
  std::vector<Eigen::Index> free_cols;
  std::vector<StreamRng*> free_rngs;
  std::vector<Token> tok_buf;
  std::vector<double> lp_buf;
  for (std::size_t t = 0; t < T; ++t) {
    lstm.step(p, detail::gather_inputs(p, emb, prev, t == 0));
    free_cols.clear();
    free_rngs.clear();
    for (std::size_t n = 0; n < N; ++n) {
      if (flags[n][t]) {
        out[n].tokens.tokens[t] = templ[n].tokens[t];
      } else {
        free_cols.push_back(static_cast<Eigen::Index>(n));
        free_rngs.push_back(&rng_store[n]);
      }
    }
    tok_buf.assign(free_cols.size(), 0);
    lp_buf.assign(free_cols.size(), 0.0);
    detail::sample_columns(p, lstm.h, free_cols, free_rngs, tok_buf, lp_buf);
    for (std::size_t k = 0; k < free_cols.size(); ++k) {
      const auto n = static_cast<std::size_t>(free_cols[k]);
      out[n].tokens.tokens[t] = tok_buf[k];
      out[n].step_logprobs[t] = lp_buf[k];
    }
    for (std::size_t n = 0; n < N; ++n) prev[n] = out[n].tokens.tokens[t];
  }
  return out;
}

template <typename Scalar>
PolicySample sample_sequence(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb, const ConstraintMask& mask,
                             std::size_t T, std::uint64_t seed) {
  if (mask.token_count() != T) {
    throw Error("generator", "sequence length " + std::to_string(T) + " does not match mask length " +
                                 std::to_string(mask.token_count()));
  }
  return sample_batch(p, emb, std::span<const ConstraintMask>(&mask, 1), seed).front();
}

/// Sum over sequences and positions of w[t][n] * (-log G(y_t | y_<t)) under
/// teacher forcing, with its gradient. The output-layer gradient is taken
/// during the forward pass so the V x N probabilities are never stored.
template <typename Scalar>
std::pair<double, GeneratorParams<Scalar>> weighted_nll_gradient(const GeneratorParams<Scalar>& p,
                                                                 const EmbeddingMatrix& emb,
                                                                 std::span<const TokenSequence> seqs,
                                                                 const Mat<double>& weights) {
  detail::check_generator_embedding(p.V, p.d, emb);
  const std::size_t N = seqs.size();
  GeneratorParams<Scalar> grad = zeros_like(p);
  if (N == 0) return {0.0, grad};
  const std::size_t T = seqs[0].size();
  if (static_cast<std::size_t>(weights.rows()) != T || static_cast<std::size_t>(weights.cols()) != N) {
    throw Error("generator", "weight table shape does not match sequences");
  }
  for (const auto& s : seqs) {
    if (s.size() != T) throw Error("generator", "sequences in one batch must share a length");
    for (Token tok : s.tokens)
      if (tok >= p.V) throw Error("generator", "token " + std::to_string(tok) + " outside vocabulary");
  }
  const auto H = static_cast<Eigen::Index>(p.H);
  const auto d = static_cast<Eigen::Index>(p.d);
  const auto cols = static_cast<Eigen::Index>(N);
  const auto V = static_cast<Eigen::Index>(p.V);

  std::vector<Mat<Scalar>> xs(T), acts(T), cs(T + 1), hs(T + 1), dh_out(T);
  cs[0] = Mat<Scalar>::Zero(H, cols);
  hs[0] = Mat<Scalar>::Zero(H, cols);
  double loss = 0.0;
  std::vector<Token> prev(N, 0);
  std::vector<Eigen::Index> active;
  Mat<Scalar> hc, logits;
  for (std::size_t t = 0; t < T; ++t) {
    xs[t] = detail::gather_inputs(p, emb, prev, t == 0);
    Mat<Scalar> z = p.gates.rightCols(H) * hs[t];
    z.noalias() += p.gates.leftCols(d) * xs[t];
    z.colwise() += p.gate_bias.col(0);
    cs[t + 1] = cs[t];
    hs[t + 1].resize(H, cols);
    detail::apply_gates(z, H, cs[t + 1], hs[t + 1]);
    acts[t] = std::move(z);
    dh_out[t] = Mat<Scalar>::Zero(H, cols);
    active.clear();
    for (std::size_t n = 0; n < N; ++n)
      if (weights(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) != 0.0) active.push_back(static_cast<Eigen::Index>(n));
    const Eigen::Index chunk = std::max<Eigen::Index>(1, (1 << 22) / V);
    for (std::size_t start = 0; start < active.size(); start += static_cast<std::size_t>(chunk)) {
      const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(chunk), active.size() - start));
      hc.resize(H, m);
      for (Eigen::Index k = 0; k < m; ++k) hc.col(k) = hs[t + 1].col(active[start + static_cast<std::size_t>(k)]);
      logits.noalias() = p.out_weight * hc;
      logits.colwise() += p.out_bias.col(0);
      for (Eigen::Index k = 0; k < m; ++k) {
        const auto n = static_cast<std::size_t>(active[start + static_cast<std::size_t>(k)]);
        const double w = weights(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n));
        const Token y = seqs[n].tokens[t];
        auto col = logits.col(k);
        const double mx = static_cast<double>(col.maxCoeff());
        double total = 0.0;
        for (Eigen::Index v = 0; v < V; ++v) total += std::exp(static_cast<double>(col(v)) - mx);
        const double log_total = std::log(total);
        loss += w * (mx + log_total - static_cast<double>(col(y)));
        for (Eigen::Index v = 0; v < V; ++v) {
          col(v) = static_cast<Scalar>(w * std::exp(static_cast<double>(col(v)) - mx - log_total));
        }
        col(y) -= static_cast<Scalar>(w);
      }
      grad.out_weight.noalias() += logits * hc.transpose();
      grad.out_bias.col(0) += logits.rowwise().sum();
      Mat<Scalar> dh = p.out_weight.transpose() * logits;
      for (Eigen::Index k = 0; k < m; ++k) dh_out[t].col(active[start + static_cast<std::size_t>(k)]) = dh.col(k);
    }
    for (std::size_t n = 0; n < N; ++n) prev[n] = seqs[n].tokens[t];
  }

  Mat<Scalar> dh_next = Mat<Scalar>::Zero(H, cols);
  Mat<Scalar> dc_next = Mat<Scalar>::Zero(H, cols);
  Mat<Scalar> dz(4 * H, cols);
  for (std::size_t t = T; t-- > 0;) {
    const auto dh = (dh_out[t] + dh_next).array();
    const auto f = acts[t].topRows(H).array();
    const auto i = acts[t].middleRows(H, H).array();
    const auto g = acts[t].middleRows(2 * H, H).array();
    const auto o = acts[t].bottomRows(H).array();
    const Mat<Scalar> tc = cs[t + 1].array().tanh();
    const Mat<Scalar> dc = dc_next.array() + dh * o * (Scalar(1) - tc.array().square());
    dz.topRows(H).array() = dc.array() * cs[t].array() * f * (Scalar(1) - f);
    dz.middleRows(H, H).array() = dc.array() * g * i * (Scalar(1) - i);
    dz.middleRows(2 * H, H).array() = dc.array() * i * (Scalar(1) - g.square());
    dz.bottomRows(H).array() = dh * tc.array() * o * (Scalar(1) - o);
    dc_next.array() = dc.array() * f;
    grad.gates.leftCols(d).noalias() += dz * xs[t].transpose();
    grad.gates.rightCols(H).noalias() += dz * hs[t].transpose();
    grad.gate_bias.col(0) += dz.rowwise().sum();
    dh_next.noalias() = p.gates.rightCols(H).transpose() * dz;
    if (t == 0) grad.start.col(0) += (p.gates.leftCols(d).transpose() * dz).rowwise().sum();
  }
  return {loss, grad};
}

/// Log-probability of each token under teacher forcing (forced tokens included).
template <typename Scalar>
std::vector<double> sequence_logprobs(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb,
                                      const TokenSequence& seq) {
  GeneratorState<Scalar> s = initial_state(p);
  std::vector<double> out;
  for (Token tok : seq.tokens) {
    auto [next, logits] = lstm_step(p, s, step_input(p, emb, s.prefix));
    const Vec<double> z = logits.template cast<double>();
    const double mx = z.maxCoeff();
    out.push_back(z(tok) - mx - std::log((z.array() - mx).exp().sum()));
    next.prefix.push_back(tok);
    s = std::move(next);
  }
  return out;
}

struct MleOptions {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

template <typename Scalar>
struct MleResult {
  GeneratorParams<Scalar> params;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // mean NLL per token over the corpus, after each epoch
};

template <typename Scalar>
double mean_nll(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb, std::span<const TokenSequence> corpus,
                std::size_t batch = 256) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < corpus.size(); start += batch) {
    const std::size_t n = std::min(batch, corpus.size() - start);
    const auto sub = corpus.subspan(start, n);
    const Mat<double> w = Mat<double>::Ones(static_cast<Eigen::Index>(sub[0].size()), static_cast<Eigen::Index>(n));
    total += weighted_nll_gradient(p, emb, sub, w).first;
    tokens += n * sub[0].size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

/// Teacher-forced maximum likelihood with Adam. Each minibatch minimizes the
/// mean per-token NLL.
template <typename Scalar>
MleResult<Scalar> mle_pretrain(const GeneratorParams<Scalar>& init, std::span<const TokenSequence> corpus,
                               const EmbeddingMatrix& emb, const MleOptions& options) {
  if (corpus.empty()) throw Error("generator", "MLE corpus is empty");
  const std::size_t T = corpus[0].size();
  for (const auto& s : corpus) {
    if (s.size() != T) throw Error("generator", "MLE corpus sequences must share a length");
    for (Token tok : s.tokens)
      if (tok >= init.V) throw Error("generator", "token " + std::to_string(tok) + " outside vocabulary");
  }
  MleResult<Scalar> result{init, 0.0, {}};
  if (options.epochs == 0) return result;
  result.initial_loss = mean_nll(init, emb, corpus);
  Adam<Scalar> adam(AdamOptions{options.lr});
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, options.batch);
  std::vector<TokenSequence> mb;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng = make_rng(options.seed, stream_id("generator/mle"), epoch);
    shuffle(order, rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      mb.clear();
      for (std::size_t k = 0; k < n; ++k) mb.push_back(corpus[order[start + k]]);
      const Mat<double> w =
          Mat<double>::Constant(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n * T));
      auto [loss, grad] = weighted_nll_gradient(result.params, emb, std::span<const TokenSequence>(mb), w);
      total += loss * static_cast<double>(n);
      adam.step(result.params, grad);
    }
    // Running mean of the minibatch losses seen during the epoch.
    result.epoch_loss.push_back(total / static_cast<double>(corpus.size()));
  }
  return result;
}

/// Moving-average reward baseline; disabled unless `enabled` is set.
struct RewardBaseline {
  bool enabled = false;
  double decay = 0.9;
  double value = 0.0;
  bool initialized = false;
};

/// One Adam step on -(1/N) sum_n sum_{t free} Q[t][n] log G(y_t | s_t).
/// `q` is T x N; entries at forced positions are ignored.
template <typename Scalar>
double policy_gradient_update(GeneratorParams<Scalar>& params, Adam<Scalar>& adam, std::span<const PolicySample> samples,
                              const Mat<double>& q, const EmbeddingMatrix& emb, RewardBaseline* baseline = nullptr) {
  const std::size_t N = samples.size();
  if (N == 0) return 0.0;
  const std::size_t T = samples[0].tokens.size();
  if (static_cast<std::size_t>(q.rows()) != T || static_cast<std::size_t>(q.cols()) != N) {
    throw Error("generator", "reward table is " + std::to_string(q.rows()) + "x" + std::to_string(q.cols()) +
                                 ", expected " + std::to_string(T) + "x" + std::to_string(N));
  }
  double b = 0.0;
  if (baseline && baseline->enabled) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < T; ++t)
        if (!samples[n].masked[t]) {
          sum += q(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n));
          ++count;
        }
    const double mean = count ? sum / static_cast<double>(count) : 0.0;
    if (!baseline->initialized) {
      baseline->value = mean;
      baseline->initialized = true;
    }
    b = baseline->value;
    baseline->value = baseline->decay * baseline->value + (1 - baseline->decay) * mean;
  }
  Mat<double> w = Mat<double>::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
  std::vector<TokenSequence> seqs;
  seqs.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    if (samples[n].tokens.size() != T || samples[n].masked.size() != T) {
      throw Error("generator", "policy samples must share a length");
    }
    seqs.push_back(samples[n].tokens);
    for (std::size_t t = 0; t < T; ++t) {
      if (!samples[n].masked[t]) {
        w(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) =
            (q(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) - b) / static_cast<double>(N);
      }
    }
  }
  auto [loss, grad] = weighted_nll_gradient(params, emb, std::span<const TokenSequence>(seqs), w);
  adam.step(params, grad);
  return loss;
}

}  // namespace attackgan
