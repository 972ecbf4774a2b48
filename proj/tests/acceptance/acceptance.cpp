// Acceptance driver: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance <work-dir> [--only N,N,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "attackgan/attackgan.hpp"

using namespace attackgan;

namespace {

#ifndef ATTACKGAN_CONFIG_DIR
#define ATTACKGAN_CONFIG_DIR "configs"
#endif

fs::path g_work;
std::set<int> g_only;
int g_failures = 0;

struct Verdict {
  bool pass;
  std::string detail;
};

void criterion(int n, const std::string& name, const std::function<Verdict()>& body) {
  if (!g_only.empty() && !g_only.count(n)) return;
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v{false, ""};
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!v.pass) ++g_failures;
  std::printf("%s criterion %d: %s [%s] (%.1fs)\n", v.pass ? "PASS" : "FAIL", n, name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

EmbeddingMatrix toy_embedding(std::size_t V, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  EmbeddingMatrix e;
  e.table.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < e.table.size(); ++i) e.table.data()[i] = u(rng);
  return e;
}

TokenSequence seq_of(std::vector<Token> t) { return TokenSequence{std::move(t), Granularity::one_byte}; }

ConstraintMask open_mask(std::size_t T) {
  NormalizedPacket p;
  p.bytes.assign(T, 0);
  return build_mask(p, std::vector<std::size_t>{}, Granularity::one_byte);
}

// ---------------------------------------------------------------------------
// Scalar-loop reference policy in double, written against the parameter
// layout only (gate rows: forget, input, cell, output).

struct ScalarLstm {
  const GeneratorParams<double>& p;
  const EmbeddingMatrix& emb;

  void step(std::vector<double>& h, std::vector<double>& c, const std::vector<double>& x) const {
    const std::size_t H = p.H, d = p.d;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> hn(H), cn(H);
    for (std::size_t k = 0; k < H; ++k) {
      double z[4];
      for (std::size_t g = 0; g < 4; ++g) {
        const auto row = static_cast<Eigen::Index>(g * H + k);
        double acc = p.gate_bias(row, 0);
        for (std::size_t j = 0; j < d; ++j) acc += p.gates(row, static_cast<Eigen::Index>(j)) * x[j];
        for (std::size_t j = 0; j < H; ++j) acc += p.gates(row, static_cast<Eigen::Index>(d + j)) * h[j];
        z[g] = acc;
      }
      cn[k] = sig(z[0]) * c[k] + sig(z[1]) * std::tanh(z[2]);
      hn[k] = sig(z[3]) * std::tanh(cn[k]);
    }
    h = hn;
    c = cn;
  }

  std::vector<double> logits(const std::vector<double>& h) const {
    std::vector<double> z(p.V);
    for (std::size_t v = 0; v < p.V; ++v) {
      double acc = p.out_bias(static_cast<Eigen::Index>(v), 0);
      for (std::size_t k = 0; k < p.H; ++k) acc += p.out_weight(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)) * h[k];
      z[v] = acc;
    }
    return z;
  }

  /// Per-step probabilities of each observed token.
  std::vector<double> step_probs(const std::vector<Token>& tokens) const {
    std::vector<double> h(p.H, 0.0), c(p.H, 0.0), x(p.d);
    for (std::size_t j = 0; j < p.d; ++j) x[j] = p.start(static_cast<Eigen::Index>(j), 0);
    std::vector<double> out;
    for (Token tok : tokens) {
      step(h, c, x);
      const auto z = logits(h);
      double mx = z[0];
      for (double v : z) mx = std::max(mx, v);
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - mx);
      out.push_back(std::exp(z[tok] - mx) / sum);
      for (std::size_t j = 0; j < p.d; ++j) x[j] = emb.table(static_cast<Eigen::Index>(tok), static_cast<Eigen::Index>(j));
    }
    return out;
  }

  double prob(const std::vector<Token>& tokens) const {
    double pr = 1.0;
    for (double v : step_probs(tokens)) pr *= v;
    return pr;
  }
};

void perturb(GeneratorParams<double>& p, const std::string& name, Eigen::Index i, double delta) {
  for (auto& [n, t] : p.named_tensors())
    if (n == name) t->data()[i] += delta;
}

double rel(const Mat<double>& a, const Mat<double>& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12}); }

/// Worst relative error between an analytic gradient and central differences of `objective`.
double worst_fd_error(const GeneratorParams<double>& p, const GeneratorParams<double>& grad,
                      const std::function<double(const GeneratorParams<double>&)>& objective, double sign) {
  const double h = 1e-6;
  double worst = 0.0;
  for (const auto& [name, g] : grad.named_tensors()) {
    Mat<double> fd(g->rows(), g->cols());
    for (Eigen::Index i = 0; i < g->size(); ++i) {
      auto up = p, down = p;
      perturb(up, name, i, h);
      perturb(down, name, i, -h);
      fd.data()[i] = sign * (objective(up) - objective(down)) / (2 * h);
    }
    worst = std::max(worst, rel(*g, fd));
  }
  return worst;
}

Config load_config(const std::string& file) {
  Config c;
  c.merge_file(fs::path(ATTACKGAN_CONFIG_DIR) / file);
  return c;
}

void log_line(const std::string& s) { std::cerr << "  " << s << "\n"; }

RunHooks quiet_hooks() {
  RunHooks h;
  h.log = log_line;
  return h;
}

// ---------------------------------------------------------------------------

Verdict lstm_exactness() {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> g(0.0, 0.8);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    auto p = init_generator<double>(7, 4, 6, 1000 + static_cast<std::uint64_t>(draw));
    for (auto& [name, t] : p.named_tensors())
      for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = g(rng);
    const EmbeddingMatrix emb = toy_embedding(7, 4, static_cast<std::uint64_t>(draw));
    GeneratorState<double> s = initial_state(p);
    std::vector<double> h(6), c(6), x(4);
    for (std::size_t k = 0; k < 6; ++k) {
      s.h(static_cast<Eigen::Index>(k)) = h[k] = g(rng);
      s.c(static_cast<Eigen::Index>(k)) = c[k] = g(rng);
    }
    Vec<double> xv(4);
    for (std::size_t k = 0; k < 4; ++k) xv(static_cast<Eigen::Index>(k)) = x[k] = g(rng);
    const auto [next, logits] = lstm_step(p, s, xv);
    const ScalarLstm ref{p, emb};
    ref.step(h, c, x);
    const auto z = ref.logits(h);
    for (std::size_t k = 0; k < 6; ++k) {
      worst = std::max(worst, std::abs(next.h(static_cast<Eigen::Index>(k)) - h[k]));
      worst = std::max(worst, std::abs(next.c(static_cast<Eigen::Index>(k)) - c[k]));
    }
    for (std::size_t v = 0; v < 7; ++v) worst = std::max(worst, std::abs(logits(static_cast<Eigen::Index>(v)) - z[v]));
  }
  return {worst <= 1e-12, fmt("100 draws, max |diff| %.3g <= 1e-12", worst)};
}

Verdict action_value_exactness() {
  std::ostringstream detail;
  bool ok = true;

  // t == T: the terminal value is the detector score itself.
  {
    const auto p = init_generator<float>(8, 4, 5, 3);
    const auto emb = toy_embedding(8, 4, 1);
    const auto disc = init_discriminator<float>(4, {2, 3}, 6, 7);
    const DiscriminatorScorer<float> scorer(disc, emb);
    std::vector<ConstraintMask> masks(16, open_mask(6));
    const auto samples = sample_batch(p, emb, std::span<const ConstraintMask>(masks), 2);
    const Mat<double> q = action_values_batch(std::span<const PolicySample>(samples), p, emb,
                                              std::span<const ConstraintMask>(masks), RewardFn(std::cref(scorer)),
                                              RolloutConfig{4, 9});
    std::size_t mismatches = 0;
    for (std::size_t n = 0; n < samples.size(); ++n)
      mismatches += q(5, static_cast<Eigen::Index>(n)) != discriminate(disc, samples[n].tokens, emb);
    ok &= mismatches == 0;
    detail << "terminal mismatches " << mismatches << "/16";
  }

  // t < T on V=2, T=2 against enumeration with the scalar reference policy.
  const auto p = init_generator<double>(2, 3, 4, 31);
  const auto emb = toy_embedding(2, 3, 3);
  const auto mask = open_mask(2);
  const auto disc = init_discriminator<double>(3, {1, 2}, 4, 5);
  auto reward = [&](const TokenSequence& s) { return discriminate(disc, s, emb); };
  const ScalarLstm ref{p, emb};
  double exact_err = 0.0, worst_ratio = 0.0;
  for (Token y1 = 0; y1 < 2; ++y1) {
    double oracle = 0.0;
    for (Token y2 = 0; y2 < 2; ++y2) oracle += ref.step_probs({y1, y2})[1] * reward(seq_of({y1, y2}));
    PolicySample sample{seq_of({y1, 0}), {0.0, 0.0}, {false, false}};
    const auto exact = exact_action_values(sample, p, emb, mask, reward);
    exact_err = std::max(exact_err, std::abs(exact.q[0] - oracle));
    for (std::size_t M : {16u, 64u, 256u}) {
      for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto mc = action_values(sample, p, emb, mask, reward, RolloutConfig{M, seed});
        worst_ratio = std::max(worst_ratio, std::abs(mc.q[0] - oracle) / (4.0 / std::sqrt(static_cast<double>(M))));
      }
    }
  }
  ok &= exact_err <= 1e-10 && worst_ratio <= 1.0;
  detail << "; exact |diff| " << exact_err << " <= 1e-10; sampled M in {16,64,256} x 20 seeds, worst |err|/(4/sqrt M) "
         << worst_ratio << " <= 1";
  return {ok, detail.str()};
}

Verdict gradient_fidelity() {
  std::ostringstream detail;

  // Policy gradient: the expected update the trainer applies (weights G(y) Q
  // at every step, Q from the enumerating rollout) against central
  // differences of J = sum_y G(y) R(y). Enumerating every y means both
  // perturbed evaluations see exactly the same outcomes.
  const std::size_t V = 3;
  const auto emb = toy_embedding(V, 3, 6);
  const auto p = init_generator<double>(V, 3, 4, 19);
  const double R[3][3] = {{0.1, 0.8, 0.3}, {0.6, 0.2, 0.9}, {0.4, 0.5, 0.05}};
  auto reward = [&](const TokenSequence& s) { return R[s.tokens[0]][s.tokens[1]]; };
  const auto mask = open_mask(2);
  std::vector<TokenSequence> seqs;
  Mat<double> w(2, 9);
  const ScalarLstm ref{p, emb};
  for (Token a = 0; a < V; ++a) {
    for (Token b = 0; b < V; ++b) {
      const PolicySample s{seq_of({a, b}), {0.0, 0.0}, {false, false}};
      const auto q = exact_action_values(s, p, emb, mask, reward);
      const double g = ref.prob({a, b});
      const auto col = static_cast<Eigen::Index>(seqs.size());
      w(0, col) = g * q.q[0];
      w(1, col) = g * q.q[1];
      seqs.push_back(s.tokens);
    }
  }
  auto J = [&](const GeneratorParams<double>& q) {
    const ScalarLstm r{q, emb};
    double j = 0.0;
    for (Token a = 0; a < V; ++a)
      for (Token b = 0; b < V; ++b) j += r.prob({a, b}) * R[a][b];
    return j;
  };
  const auto pg = weighted_nll_gradient(p, emb, std::span<const TokenSequence>(seqs), w).second;
  const double pg_err = worst_fd_error(p, pg, J, -1.0);

  // MLE: teacher-forced NLL of a small corpus.
  const auto emb5 = toy_embedding(5, 3, 3);
  const auto p5 = init_generator<double>(5, 3, 4, 13);
  const std::vector<TokenSequence> corpus{seq_of({1, 4, 0, 2}), seq_of({3, 3, 2, 1}), seq_of({0, 1, 1, 4})};
  const Mat<double> ones = Mat<double>::Ones(4, 3);
  auto nll = [&](const GeneratorParams<double>& q) {
    const ScalarLstm r{q, emb5};
    double s = 0.0;
    for (const auto& x : corpus)
      for (double v : r.step_probs(x.tokens)) s -= std::log(v);
    return s;
  };
  const auto mle = weighted_nll_gradient(p5, emb5, std::span<const TokenSequence>(corpus), ones).second;
  const double mle_err = worst_fd_error(p5, mle, nll, 1.0);

  // Detector loss.
  const auto embd = toy_embedding(12, 4, 8);
  const auto d = init_discriminator<double>(4, {2, 3}, 5, 6);
  std::mt19937_64 rng(3);
  std::vector<TokenSequence> X, Y;
  for (int i = 0; i < 3; ++i) {
    TokenSequence x = seq_of(std::vector<Token>(6)), y = seq_of(std::vector<Token>(6));
    for (auto& t : x.tokens) t = static_cast<Token>(rng() % 12);
    for (auto& t : y.tokens) t = static_cast<Token>(rng() % 12);
    X.push_back(x);
    Y.push_back(y);
  }
  const auto sx = std::span<const TokenSequence>(X), sy = std::span<const TokenSequence>(Y);
  auto oracle_loss = [&](const DiscriminatorParams<double>& q) {
    double s = 0.0;
    for (const auto& x : X) s -= std::log(discriminate(q, x, embd));
    for (const auto& y : Y) s -= std::log(1.0 - discriminate(q, y, embd));
    return s;
  };
  const auto dgrad = discriminator_loss_gradient(d, sx, sy, embd).second;
  double d_err = 0.0;
  const double h = 1e-6;
  const auto gt = dgrad.named_tensors();
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const Mat<double>& g = *gt[k].second;
    Mat<double> fd(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      auto up = d, down = d;
      up.named_tensors()[k].second->data()[i] += h;
      down.named_tensors()[k].second->data()[i] -= h;
      fd.data()[i] = (oracle_loss(up) - oracle_loss(down)) / (2 * h);
    }
    d_err = std::max(d_err, rel(g, fd));
  }

  detail << "policy " << pg_err << " < 1e-3; detector " << d_err << " < 1e-4; mle " << mle_err << " < 1e-4";
  return {pg_err < 1e-3 && d_err < 1e-4 && mle_err < 1e-4, detail.str()};
}

Verdict mape_identities() {
  std::ostringstream detail;
  std::mt19937_64 rng(17);
  const auto emb = toy_embedding(40, 6, 4);
  const auto stats = normalization_stats(emb);
  auto random_seq = [&](std::size_t T) {
    TokenSequence s = seq_of(std::vector<Token>(T));
    for (auto& t : s.tokens) t = static_cast<Token>(rng() % 40);
    return s;
  };
  double self = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto x = random_seq(24);
    self = std::max(self, mape(x, x, emb, stats));
  }

  // Normalized norms: token 0 -> 2, token 1 -> 1.
  EmbeddingMatrix hand;
  hand.table.resize(3, 4);
  hand.table.row(0).setConstant(1.0f);
  hand.table.row(1).setConstant(0.5f);
  hand.table.row(2).setZero();
  const double half = mape(seq_of({0}), seq_of({1}), hand, normalization_stats(hand));

  const Mat<double> base = emb.table.cast<double>();
  const auto base_stats = normalization_stats(base);
  double drift = 0.0;
  for (double scale : {3.5, 0.01, 1000.0, 7.0 / 3.0}) {
    const Mat<double> scaled = base * scale;
    const auto scaled_stats = normalization_stats(scaled);
    for (int i = 0; i < 50; ++i) {
      const auto x = random_seq(24), y = random_seq(24);
      drift = std::max(drift, std::abs(mape(x, y, scaled, scaled_stats) - mape(x, y, base, base_stats)));
    }
  }
  detail << "max mape(x,x) " << self << " == 0; handcrafted " << half << " == 50; scale drift " << drift << " < 1e-8";
  return {self == 0.0 && half == 50.0 && drift < 1e-8, detail.str()};
}

Verdict split_counts() {
  LabeledDataset ds;
  NormalizedPacket b, m;
  b.bytes.assign(4, 0);
  m.bytes.assign(4, 1);
  b.label = Label::benign;
  m.label = Label::malicious;
  ds.packets.assign(40000, b);
  ds.packets.insert(ds.packets.end(), 18532, m);
  const auto [train, test] = split_dataset(ds, 0.75, 12345);
  const std::size_t tm = train.count(Label::malicious), sm = test.count(Label::malicious);
  const std::size_t tb = train.count(Label::benign), sb = test.count(Label::benign);
  std::ostringstream d;
  d << "malicious " << tm << "/" << sm << " (want 13899/4633), benign " << tb << "/" << sb << " (want 30000/10000)";
  return {tm == 13899 && sm == 4633 && tb == 30000 && sb == 10000, d.str()};
}

// ---------------------------------------------------------------------------
// Desk-scale runs, shared between criteria.

struct DeskRuns {
  std::optional<RunResult> dt_mu8, svm_mu8, svm_mu32, one_byte, two_byte;
  std::size_t packets = 0, violations = 0, wrong_mu = 0;
};

DeskRuns g_desk;

RunResult desk_run(const std::string& config_file, const std::string& name, RunHooks hooks = quiet_hooks()) {
  std::cerr << "[" << name << "] " << config_file << "\n";
  const fs::path out = g_work / name;
  fs::remove_all(out);
  return run_experiment(load_config(config_file), out, false, std::move(hooks));
}

void ensure_dt_mu8() {
  if (g_desk.dt_mu8) return;
  RunHooks hooks = quiet_hooks();
  hooks.on_generated = [](std::span<const NormalizedPacket> pk, std::span<const ConstraintMask> masks) {
    for (std::size_t i = 0; i < pk.size(); ++i) {
      ++g_desk.packets;
      g_desk.wrong_mu += masks[i].fixed_byte_positions.size() != 8;
      for (std::size_t pos : masks[i].fixed_byte_positions) {
        if (pk[i].bytes.at(pos) != masks[i].templ.bytes.at(pos)) {
          ++g_desk.violations;
          break;
        }
      }
    }
  };
  g_desk.dt_mu8 = desk_run("desk_dt_mu8.json", "dt_mu8", hooks);
}

Verdict constraint_guarantee() {
  ensure_dt_mu8();
  std::ostringstream d;
  d << g_desk.packets << " packets (need >= 10000), " << g_desk.violations << " violating (need 0), " << g_desk.wrong_mu
    << " masks with mu != 8; run reports " << g_desk.dt_mu8->mask_violations;
  return {g_desk.packets >= 10000 && g_desk.violations == 0 && g_desk.wrong_mu == 0 && g_desk.dt_mu8->mask_violations == 0,
          d.str()};
}

Verdict desk_trend() {
  ensure_dt_mu8();
  const auto& r = *g_desk.dt_mu8;
  const auto& h = r.history;
  if (h.size() != 30) return {false, "expected 30 epochs, got " + std::to_string(h.size())};
  const MetricRecord& best = h.at(r.best_epoch - 1);
  std::ostringstream d;
  d << "AFR epoch 1 " << h.front().afr << ", best epoch " << r.best_epoch << " AFR " << best.afr << " (need <= "
    << 0.5 * h.front().afr << "), ASIR at best " << best.asir << " > 0, final AFR " << h.back().afr;
  return {best.afr <= 0.5 * h.front().afr && best.asir > 0.0, d.str()};
}

Verdict mu_monotonicity() {
  if (!g_desk.svm_mu8) g_desk.svm_mu8 = desk_run("desk_svm_mu8.json", "svm_mu8");
  if (!g_desk.svm_mu32) g_desk.svm_mu32 = desk_run("desk_svm_mu32.json", "svm_mu32");
  const double a8 = g_desk.svm_mu8->history.back().afr, a32 = g_desk.svm_mu32->history.back().afr;
  return {a32 >= a8, fmt("SVM final AFR mu=32 %.4f >= mu=8 %.4f", a32, a8)};
}

Verdict granularity_ordering() {
  if (!g_desk.one_byte) g_desk.one_byte = desk_run("desk_dt_mu8_one_byte_matched.json", "one_byte_matched");
  if (!g_desk.two_byte) g_desk.two_byte = desk_run("desk_dt_mu8_two_byte_matched.json", "two_byte_matched");
  const double one = g_desk.one_byte->history.back().asir, two = g_desk.two_byte->history.back().asir;
  return {one >= two, fmt("final ASIR one-byte %.4f >= two-byte %.4f", one, two)};
}

Verdict determinism_and_resume() {
  Config c = load_config("desk_dt_mu8.json");
  c.set("train.epochs", 4);
  const fs::path a = g_work / "det_a", b = g_work / "det_b", r = g_work / "det_resume";
  for (const auto& dir : {a, b, r}) fs::remove_all(dir);
  run_experiment(c, a, false, quiet_hooks());
  run_experiment(c, b, false, quiet_hooks());
  Config half = c;
  half.set("train.epochs", 2);
  run_experiment(half, r, false, quiet_hooks());
  run_experiment(c, r, true, quiet_hooks());
  auto same = [](const fs::path& x, const fs::path& y) { return read_text_file(x, "acceptance") == read_text_file(y, "acceptance"); };
  const bool csv_ab = same(a / "metrics.csv", b / "metrics.csv");
  const bool csv_ar = same(a / "metrics.csv", r / "metrics.csv");
  bool ckpt = true;
  for (const char* f : {"generator_final.ckpt", "discriminator_final.ckpt", "generator_best.ckpt"}) ckpt &= same(a / f, r / f);
  std::ostringstream d;
  d << "repeat csv identical " << csv_ab << ", 2+resume->4 csv identical " << csv_ar << ", checkpoints identical " << ckpt;
  return {csv_ab && csv_ar && ckpt, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_runs";
  for (int i = 2; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream ss(argv[i + 1]);
      for (std::string tok; std::getline(ss, tok, ',');) g_only.insert(std::stoi(tok));
    }
  }
  fs::create_directories(g_work);

  criterion(1, "LSTM step matches scalar reference", lstm_exactness);
  criterion(2, "action values: terminal exact, enumeration 1e-10, sampled 4/sqrt(M)", action_value_exactness);
  criterion(3, "gradients match finite differences", gradient_fidelity);
  criterion(4, "masked bytes preserved over a full desk run", constraint_guarantee);
  criterion(5, "MAPE identities", mape_identities);
  criterion(6, "desk DT mu=8 AFR trend", desk_trend);
  criterion(7, "SVM AFR non-decreasing in mu", mu_monotonicity);
  criterion(8, "one-byte ASIR >= two-byte ASIR", granularity_ordering);
  criterion(9, "stratified split counts", split_counts);
  criterion(10, "determinism and resume", determinism_and_resume);

  std::printf("%s: %d criterion failures\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
