#pragma once

// Flat Monte Carlo completion of partial sequences and the per-position
// action values derived from the discriminator.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "attackgan/generator.hpp"

namespace attackgan {

/// Reward for a complete sequence: the discriminator's benign probability.
using RewardFn = std::function<double(const TokenSequence&)>;

struct RolloutConfig {
  std::size_t M = 16;
  std::uint64_t seed = 1;
};

struct RewardTable {
  std::vector<double> q;  // q[t] = Q(s_t, y_t)
};

namespace detail {

/// Hidden and cell states after each teacher-forced step; column t of hs/cs
/// is the state once y_t has been scored (ready to consume y_t as input).
template <typename Scalar>
struct ForcedStates {
  Mat<Scalar> hs, cs;  // H x T
};

template <typename Scalar>
ForcedStates<Scalar> teacher_forced_states(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb,
                                           std::span<const Token> tokens) {
  const auto H = static_cast<Eigen::Index>(p.H);
  ForcedStates<Scalar> out{Mat<Scalar>(H, static_cast<Eigen::Index>(tokens.size())),
                           Mat<Scalar>(H, static_cast<Eigen::Index>(tokens.size()))};
  LstmColumns<Scalar> lstm{Mat<Scalar>::Zero(H, 1), Mat<Scalar>::Zero(H, 1)};
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Token prev = t ? tokens[t - 1] : 0;
    lstm.step(p, gather_inputs(p, emb, std::span<const Token>(&prev, 1), t == 0));
    out.hs.col(static_cast<Eigen::Index>(t)) = lstm.h.col(0);
    out.cs.col(static_cast<Eigen::Index>(t)) = lstm.c.col(0);
  }
  return out;
}

/// A batch of partial sequences to complete. Columns must be ordered by
/// ascending `fixed_until`, the last position already decided.
template <typename Scalar>
struct CompletionBatch {
  std::vector<std::size_t> fixed_until;
  std::vector<std::vector<Token>> tokens;         // full-length buffers, prefix filled in
  std::vector<const std::vector<bool>*> flags;    // forced positions
  std::vector<const TokenSequence*> templ;        // template tokens
  std::vector<StreamRng> rngs;
  Mat<Scalar> h, c;                               // state after fixed_until
};

template <typename Scalar>
void complete_columns(const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb, CompletionBatch<Scalar>& b,
                      std::size_t T) {
  const std::size_t N = b.tokens.size();
  if (N == 0) return;
  LstmColumns<Scalar> lstm{std::move(b.h), std::move(b.c)};
  std::vector<Token> prev;
  std::vector<Eigen::Index> free_cols;
  std::vector<StreamRng*> free_rngs;
  std::vector<Token> tok;
  std::vector<double> lp;
  std::size_t active = 0;
  for (std::size_t s = 1; s < T; ++s) {
    while (active < N && b.fixed_until[active] < s) ++active;
    if (active == 0) continue;
    prev.resize(active);
    for (std::size_t n = 0; n < active; ++n) prev[n] = b.tokens[n][s - 1];
    lstm.step(p, gather_inputs(p, emb, prev, false));
    free_cols.clear();
    free_rngs.clear();
    for (std::size_t n = 0; n < active; ++n) {
      if ((*b.flags[n])[s]) {
        b.tokens[n][s] = b.templ[n]->tokens[s];
      } else {
        free_cols.push_back(static_cast<Eigen::Index>(n));
        free_rngs.push_back(&b.rngs[n]);
      }
    }
    tok.assign(free_cols.size(), 0);
    lp.assign(free_cols.size(), 0.0);
    sample_columns(p, lstm.h, free_cols, free_rngs, tok, lp);
    for (std::size_t k = 0; k < free_cols.size(); ++k) b.tokens[static_cast<std::size_t>(free_cols[k])][s] = tok[k];
  }
}

inline void check_prefix(std::span<const Token> prefix, const TokenSequence& templ, const std::vector<bool>& flags) {
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    if (flags[t] && prefix[t] != templ.tokens[t]) {
      throw Error("rollout", "prefix violates the constraint mask at position " + std::to_string(t));
    }
  }
}

}  // namespace detail

/// y_{1:t} followed by tokens sampled from the policy, forced positions taken
/// from the mask template.
template <typename Scalar>
TokenSequence mc_complete(std::span<const Token> prefix, const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb,
                          const ConstraintMask& mask, std::size_t T, std::uint64_t seed) {
  if (mask.token_count() != T) throw Error("rollout", "mask length does not match T");
  if (prefix.size() > T) throw Error("rollout", "prefix longer than the sequence");
  const TokenSequence templ = tokenize(mask.templ, emb.granularity);
  const std::vector<bool> flags = mask.token_flags();
  detail::check_prefix(prefix, templ, flags);
  TokenSequence out{std::vector<Token>(prefix.begin(), prefix.end()), emb.granularity};
  if (prefix.size() == T) return out;
  out.tokens.resize(T, 0);
  // Position 0 when nothing is fixed: draw it from the start state first.
  if (prefix.empty()) {
    if (flags[0]) {
      out.tokens[0] = templ.tokens[0];
    } else {
      ConstraintMask m0 = mask;
      const auto first = sample_sequence(p, emb, m0, T, derive_seed(seed, stream_id("rollout/first")));
      out.tokens[0] = first.tokens.tokens[0];
    }
  }
  const std::size_t fixed = std::max<std::size_t>(prefix.size(), 1) - 1;
  const auto states = detail::teacher_forced_states(p, emb, std::span<const Token>(out.tokens.data(), fixed + 1));
  detail::CompletionBatch<Scalar> b;
  b.fixed_until = {fixed};
  b.tokens = {out.tokens};
  b.flags = {&flags};
  b.templ = {&templ};
  b.rngs.push_back(make_stream_rng(seed, stream_id("rollout/complete")));
  b.h = states.hs.col(static_cast<Eigen::Index>(fixed));
  b.c = states.cs.col(static_cast<Eigen::Index>(fixed));
  detail::complete_columns(p, emb, b, T);
  out.tokens = std::move(b.tokens[0]);
  return out;
}

/// Action values for a batch of sampled sequences, returned T x N.
/// q[T-1] is the reward of the sequence itself; for t < T-1, q[t] averages the
/// reward over M completions of y_{0..t}. Completion (n, t, m) draws from a
/// stream keyed by (seed, first_id + n, t, m).
template <typename Scalar>
Mat<double> action_values_batch(std::span<const PolicySample> samples, const GeneratorParams<Scalar>& p,
                                const EmbeddingMatrix& emb, std::span<const ConstraintMask> masks,
                                const RewardFn& reward, const RolloutConfig& config, std::uint64_t first_id = 0) {
  if (config.M == 0) throw Error("rollout", "M must be at least 1");
  if (samples.size() != masks.size()) throw Error("rollout", "one mask per sample is required");
  const std::size_t N = samples.size();
  if (N == 0) return {};
  const std::size_t T = samples[0].tokens.size();
  const std::size_t M = config.M;
  std::vector<TokenSequence> templ(N);
  std::vector<std::vector<bool>> flags(N);
  for (std::size_t n = 0; n < N; ++n) {
    if (samples[n].tokens.size() != T || masks[n].token_count() != T) {
      throw Error("rollout", "samples and masks must share a length");
    }
    templ[n] = tokenize(masks[n].templ, emb.granularity);
    flags[n] = masks[n].token_flags();
  }
  Mat<double> q(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
  for (std::size_t n = 0; n < N; ++n) q(static_cast<Eigen::Index>(T - 1), static_cast<Eigen::Index>(n)) = reward(samples[n].tokens);
  if (T == 1) return q;

  detail::CompletionBatch<Scalar> b;
  const std::size_t cols = N * (T - 1) * M;
  const auto H = static_cast<Eigen::Index>(p.H);
  b.h.resize(H, static_cast<Eigen::Index>(cols));
  b.c.resize(H, static_cast<Eigen::Index>(cols));
  b.fixed_until.reserve(cols);
  b.tokens.reserve(cols);
  b.rngs.reserve(cols);
  std::vector<detail::ForcedStates<Scalar>> states;
  states.reserve(N);
  for (std::size_t n = 0; n < N; ++n) states.push_back(detail::teacher_forced_states(p, emb, samples[n].tokens.tokens));
  Eigen::Index col = 0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t m = 0; m < M; ++m, ++col) {
        b.fixed_until.push_back(t);
        b.tokens.push_back(samples[n].tokens.tokens);
        b.flags.push_back(&flags[n]);
        b.templ.push_back(&templ[n]);
        b.rngs.push_back(make_stream_rng(config.seed, stream_id("rollout"), first_id + n, t, m));
        b.h.col(col) = states[n].hs.col(static_cast<Eigen::Index>(t));
        b.c.col(col) = states[n].cs.col(static_cast<Eigen::Index>(t));
      }
    }
  }
  detail::complete_columns(p, emb, b, T);
  TokenSequence seq{{}, emb.granularity};
  std::size_t k = 0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      double sum = 0.0;
      for (std::size_t m = 0; m < M; ++m, ++k) {
        seq.tokens = std::move(b.tokens[k]);
        sum += reward(seq);
      }
      q(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) = sum / static_cast<double>(M);
    }
  }
  return q;
}

template <typename Scalar>
RewardTable action_values(const PolicySample& sample, const GeneratorParams<Scalar>& p, const EmbeddingMatrix& emb,
                          const ConstraintMask& mask, const RewardFn& reward, const RolloutConfig& config,
                          std::uint64_t sample_id = 0) {
  const Mat<double> q = action_values_batch(std::span<const PolicySample>(&sample, 1), p, emb,
                                            std::span<const ConstraintMask>(&mask, 1), reward, config, sample_id);
  RewardTable table;
  table.q.assign(q.data(), q.data() + q.size());
  return table;
}

/// Exact expectations by enumerating every completion with its policy
/// probability. Exponential in the free suffix length; meant for tiny
/// instances in tests.
template <typename Scalar>
RewardTable exact_action_values(const PolicySample& sample, const GeneratorParams<Scalar>& p,
                                const EmbeddingMatrix& emb, const ConstraintMask& mask, const RewardFn& reward,
                                std::size_t max_completions = 1'000'000) {
  const std::size_t T = sample.tokens.size();
  const TokenSequence templ = tokenize(mask.templ, emb.granularity);
  const std::vector<bool> flags = mask.token_flags();
  RewardTable table;
  table.q.assign(T, 0.0);
  table.q[T - 1] = reward(sample.tokens);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    double budget = 1.0;
    for (std::size_t s = t + 1; s < T; ++s)
      if (!flags[s]) budget *= static_cast<double>(p.V);
    if (budget > static_cast<double>(max_completions)) throw Error("rollout", "exact enumeration too large");

    GeneratorState<Scalar> state = initial_state(p);
    for (std::size_t s = 0; s <= t; ++s) {
      auto [next, logits] = lstm_step(p, state, step_input(p, emb, state.prefix));
      next.prefix.push_back(sample.tokens.tokens[s]);
      state = std::move(next);
    }
    std::function<double(const GeneratorState<Scalar>&, double)> expand = [&](const GeneratorState<Scalar>& st,
                                                                               double prob) -> double {
      if (st.prefix.size() == T) return prob * reward(TokenSequence{st.prefix, emb.granularity});
      const std::size_t pos = st.prefix.size();
      auto [next, logits] = lstm_step(p, st, step_input(p, emb, st.prefix));
      double total = 0.0;
      if (flags[pos]) {
        next.prefix.push_back(templ.tokens[pos]);
        return expand(next, prob);
      }
      const Vec<double> dist = softmax(logits);
      for (std::size_t v = 0; v < p.V; ++v) {
        GeneratorState<Scalar> child = next;
        child.prefix.push_back(static_cast<Token>(v));
        total += expand(child, prob * dist(static_cast<Eigen::Index>(v)));
      }
      return total;
    };
    table.q[t] = expand(state, 1.0);
  }
  return table;
}

}  // namespace attackgan
