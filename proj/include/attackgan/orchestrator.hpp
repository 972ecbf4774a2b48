#pragma once

// Adversarial training driver: pretraining (NIDS, generator, discriminator),
// the alternating generator/discriminator epochs, evaluation, checkpointing
// and resume.

#include <chrono>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attackgan/config.hpp"
#include "attackgan/dataset.hpp"
#include "attackgan/discriminator.hpp"
#include "attackgan/embedding.hpp"
#include "attackgan/generator.hpp"
#include "attackgan/manifest.hpp"
#include "attackgan/metrics.hpp"
#include "attackgan/nids.hpp"
#include "attackgan/rollout.hpp"

namespace attackgan {

namespace fs = std::filesystem;

struct RunFiles {
  fs::path dir;
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path metrics() const { return dir / "metrics.csv"; }
  fs::path embedding() const { return dir / "embedding.ckpt"; }
  fs::path nids() const { return dir / "nids.ckpt"; }
  fs::path generator_pretrained() const { return dir / "generator_pretrained.ckpt"; }
  fs::path state() const { return dir / "state.ckpt"; }
  fs::path generator_best() const { return dir / "generator_best.ckpt"; }
  fs::path generator_final() const { return dir / "generator_final.ckpt"; }
  fs::path discriminator_final() const { return dir / "discriminator_final.ckpt"; }
};

/// Split corpus with the per-class views the training loop draws from.
struct PreparedData {
  LabeledDataset all, train, test;
  std::vector<NormalizedPacket> benign_train, malicious_train, malicious_test;
  std::string input_hash;
  std::string provenance;
};

inline std::vector<std::size_t> signature_positions(const RunConfig& cfg) {
  std::vector<std::size_t> pos(cfg.synth_signature_count);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = cfg.synth_signature_start + i;
  return pos;
}

inline SynthSpec synth_spec(const RunConfig& cfg) {
  SynthSpec spec;
  spec.n_benign = cfg.synth_n_benign;
  spec.n_malicious = cfg.synth_n_malicious;
  spec.packet_length = cfg.P;
  spec.signature_positions = signature_positions(cfg);
  spec.benign_range = {static_cast<Byte>(cfg.synth_benign_lo), static_cast<Byte>(cfg.synth_benign_hi)};
  spec.malicious_range = {static_cast<Byte>(cfg.synth_malicious_lo), static_cast<Byte>(cfg.synth_malicious_hi)};
  spec.noise_seed = cfg.synth_noise_seed;
  return spec;
}

inline PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData data;
  if (cfg.data_path.empty()) {
    data.all = synthesize_corpus(synth_spec(cfg));
    data.provenance = "synthetic corpus, noise seed " + std::to_string(cfg.synth_noise_seed);
  } else {
    data.all = load_dataset(cfg.data_path);
    data.provenance = "dataset " + cfg.data_path;
    if (data.all.packet_length() != cfg.P) {
      for (auto& p : data.all.packets) p = normalize_packet(p, cfg.P);
    }
  }
  if (data.all.count(Label::benign) < 2 || data.all.count(Label::malicious) < 2) {
    throw Error("orchestrator", "dataset needs at least two benign and two malicious packets");
  }
  data.input_hash = git_blob_hash(serialize_dataset(data.all));
  auto [train, test] = split_dataset(data.all, cfg.train_fraction, derive_seed(cfg.seed, stream_id("split")));
  data.train = std::move(train);
  data.test = std::move(test);
  data.benign_train = data.train.with_label(Label::benign);
  data.malicious_train = data.train.with_label(Label::malicious);
  data.malicious_test = data.test.with_label(Label::malicious);
  return data;
}

inline std::vector<TokenSequence> tokenize_all(std::span<const NormalizedPacket> packets, Granularity g) {
  std::vector<TokenSequence> out;
  out.reserve(packets.size());
  for (const auto& p : packets) out.push_back(tokenize(p, g));
  return out;
}

/// Everything the adversarial loop mutates. Resuming from a saved RunState
/// at epoch e reproduces later epochs exactly.
struct RunState {
  std::size_t epoch = 0;
  GeneratorParams<float> gen;
  GeneratorParams<float> rollout_gen;  // policy used for completions when rollout.lag > 0
  DiscriminatorParams<float> disc;
  Adam<float> gen_adam;
  Adam<float> disc_adam;
  RewardBaseline baseline;
  std::vector<MetricRecord> history;
  std::vector<double> disc_loss_history;  // mean per-sample discriminator loss, one entry per epoch
  std::size_t best_epoch = 0;
  double best_afr = std::numeric_limits<double>::infinity();
  GeneratorParams<float> best_gen;
  std::size_t generated_packets = 0;
  std::size_t mask_violations = 0;
  std::size_t skipped_d_steps = 0;
};

inline void save_state(const fs::path& path, const RunState& s) {
  Checkpoint ckpt("orchestrator");
  ckpt.add_scalar("state/epoch", static_cast<double>(s.epoch));
  save_generator(ckpt, s.gen, "gen");
  save_generator(ckpt, s.rollout_gen, "rollout_gen");
  save_generator(ckpt, s.best_gen, "best_gen");
  save_discriminator(ckpt, s.disc, "disc");
  s.gen_adam.save(ckpt, "gen_adam", s.gen);
  s.disc_adam.save(ckpt, "disc_adam", s.disc);
  ckpt.add_text("state/baseline",
                std::string(s.baseline.initialized ? "1 " : "0 ") + exact_double(s.baseline.value));
  ckpt.add_text("state/best", std::to_string(s.best_epoch) + " " + exact_double(s.best_afr));
  std::string losses;
  for (double v : s.disc_loss_history) losses += exact_double(v) + " ";
  ckpt.add_text("state/disc_loss_history", losses);
  ckpt.add_text("state/counters", std::to_string(s.generated_packets) + " " + std::to_string(s.mask_violations) + " " +
                                      std::to_string(s.skipped_d_steps));
  ckpt.add_text("state/metrics_csv", format_metric_csv(s.history));
  ckpt.save(path);
}

inline RunState load_state(const fs::path& path, const RunConfig& cfg) {
  const Checkpoint ckpt = Checkpoint::load(path);
  RunState s;
  s.epoch = static_cast<std::size_t>(ckpt.get_scalar("state/epoch"));
  s.gen = load_generator<float>(ckpt, "gen");
  s.rollout_gen = load_generator<float>(ckpt, "rollout_gen");
  s.best_gen = load_generator<float>(ckpt, "best_gen");
  s.disc = load_discriminator<float>(ckpt, "disc");
  s.gen_adam = Adam<float>(AdamOptions{cfg.pg_lr});
  s.gen_adam.load(ckpt, "gen_adam", s.gen);
  s.disc_adam = Adam<float>(AdamOptions{cfg.disc_lr});
  s.disc_adam.load(ckpt, "disc_adam", s.disc);
  s.baseline.enabled = cfg.baseline;
  {
    std::istringstream in(ckpt.get_text("state/baseline"));
    int init = 0;
    in >> init >> s.baseline.value;
    s.baseline.initialized = init != 0;
  }
  {
    std::istringstream in(ckpt.get_text("state/best"));
    std::string afr_text;
    in >> s.best_epoch >> afr_text;
    s.best_afr = std::strtod(afr_text.c_str(), nullptr);
  }
  {
    std::istringstream in(ckpt.get_text("state/disc_loss_history"));
    for (std::string v; in >> v;) s.disc_loss_history.push_back(std::strtod(v.c_str(), nullptr));
  }
  {
    std::istringstream in(ckpt.get_text("state/counters"));
    in >> s.generated_packets >> s.mask_violations >> s.skipped_d_steps;
  }
  s.history = parse_metric_csv(ckpt.get_text("state/metrics_csv"));
  if (s.history.size() != s.epoch) throw Error("orchestrator", "state checkpoint history does not match its epoch");
  return s;
}

/// Optional observers, mainly for tests and progress output.
struct RunHooks {
  std::function<void(const std::string&)> log;
  /// Every batch of generated packets together with the masks they were drawn under.
  std::function<void(std::span<const NormalizedPacket>, std::span<const ConstraintMask>)> on_generated;
  std::function<void(const MetricRecord&)> on_epoch;
};

/// Frozen artifacts of the pretraining phase plus the evaluation baseline.
struct Pretrained {
  EmbeddingMatrix emb;
  std::optional<NidsModel> nids;
  ClassifierMetrics nids_test;
  double asr_original = 0.0;
  double mle_initial_loss = 0.0;
  std::vector<double> mle_epoch_loss;
  std::vector<double> disc_pretrain_loss;
};

/// Read-only context shared by every epoch.
struct RunContext {
  RunConfig cfg;
  PreparedData data;
  Pretrained pre;
  NormalizationStats stats;
  RunHooks hooks;
};

namespace detail {

inline void log(const RunContext& ctx, const std::string& msg) {
  if (ctx.hooks.log) ctx.hooks.log(msg);
}

inline std::vector<ConstraintMask> draw_masks(const RunContext& ctx, std::span<const NormalizedPacket> pool,
                                              std::size_t count, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<ConstraintMask> masks;
  masks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    masks.push_back(build_mask(pool[uniform_index(rng, pool.size())], ctx.cfg.mask_positions, ctx.cfg.granularity));
  }
  return masks;
}

/// Detokenizes samples, checks every mask and reports the batch to the hook.
inline std::vector<NormalizedPacket> materialize(const RunContext& ctx, RunState& st,
                                                 std::span<const PolicySample> samples,
                                                 std::span<const ConstraintMask> masks) {
  std::vector<NormalizedPacket> packets;
  packets.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    packets.push_back(detokenize(samples[i].tokens, ctx.cfg.P));
    ++st.generated_packets;
    if (!satisfies_mask(packets.back(), masks[i])) ++st.mask_violations;
  }
  if (ctx.hooks.on_generated) ctx.hooks.on_generated(packets, masks);
  return packets;
}

struct LabeledSets {
  std::vector<TokenSequence> benign;     // predicted benign by the NIDS
  std::vector<TokenSequence> malicious;  // predicted malicious by the NIDS
};

/// Generated packets plus a sample of real benign traffic, split by the
/// NIDS verdict into the discriminator's benign and malicious sets.
inline LabeledSets nids_labeled_sets(const RunContext& ctx, RunState& st, const GeneratorParams<float>& gen,
                                     std::uint64_t seed) {
  const auto masks = draw_masks(ctx, ctx.data.malicious_train, ctx.cfg.adv_batch, derive_seed(seed, stream_id("templates")));
  const auto samples = sample_batch(gen, ctx.pre.emb, masks, derive_seed(seed, stream_id("sample")));
  std::vector<NormalizedPacket> combined = materialize(ctx, st, samples, masks);
  Rng rng = make_rng(seed, stream_id("benign"));
  const auto& benign = ctx.data.benign_train;
  for (std::size_t i = 0; i < ctx.cfg.benign_batch; ++i) combined.push_back(benign[uniform_index(rng, benign.size())]);
  const auto verdict = ctx.pre.nids->predict_packets(combined);
  LabeledSets sets;
  for (std::size_t i = 0; i < combined.size(); ++i) {
    (verdict[i] == Label::benign ? sets.benign : sets.malicious).push_back(tokenize(combined[i], ctx.cfg.granularity));
  }
  return sets;
}

inline DiscriminatorTrainOptions disc_options(const RunConfig& cfg, std::size_t epochs, std::uint64_t seed) {
  DiscriminatorTrainOptions o;
  o.epochs = epochs;
  o.batch = cfg.disc_batch;
  o.lr = cfg.disc_lr;
  o.dropout = cfg.disc_dropout;
  o.seed = seed;
  return o;
}

}  // namespace detail

/// AFR, ASR, ASIR and MAPE of the current generator on a fresh batch drawn
/// with templates from the malicious test packets.
inline MetricRecord evaluate_generator(const RunContext& ctx, RunState& st, const GeneratorParams<float>& gen,
                                       std::size_t epoch, std::uint64_t seed) {
  const auto masks = detail::draw_masks(ctx, ctx.data.malicious_test, ctx.cfg.eval_batch,
                                        derive_seed(seed, stream_id("templates")));
  const auto samples = sample_batch(gen, ctx.pre.emb, masks, derive_seed(seed, stream_id("sample")));
  const auto packets = detail::materialize(ctx, st, samples, masks);
  const auto verdict = ctx.pre.nids->predict_packets(packets);
  MetricRecord r;
  r.epoch = epoch;
  r.nids_kind = ctx.cfg.nids;
  r.mu = ctx.cfg.mu;
  r.embedding_mode = ctx.cfg.granularity;
  r.afr = afr(verdict);
  r.asr = asr_from_afr(r.afr);
  r.asir = round_percent(asir(r.asr, ctx.pre.asr_original));
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    total += mape(tokenize(masks[i].templ, ctx.cfg.granularity), samples[i].tokens, ctx.pre.emb, ctx.stats);
  }
  r.mape = round_percent(total / static_cast<double>(samples.size()));
  return r;
}

/// Pretraining: NIDS, generator MLE, a first adversarial batch and
/// discriminator pretraining on NIDS-labeled sets.
inline RunState pretrain_phase(RunContext& ctx, const RunFiles* files = nullptr) {
  const RunConfig& cfg = ctx.cfg;
  const Granularity g = cfg.granularity;
  auto& pre = ctx.pre;

  if (!cfg.emb_checkpoint.empty()) {
    pre.emb = EmbeddingMatrix::load(Checkpoint::load(cfg.emb_checkpoint));
    if (pre.emb.granularity != g) throw Error("embedding", "embedding checkpoint granularity does not match config");
  } else {
    detail::log(ctx, "training skip-gram embeddings");
    const auto corpus = tokenize_all(ctx.data.train.packets, g);
    SkipGramOptions so;
    so.dim = cfg.emb_dim;
    so.window = cfg.emb_window;
    so.epochs = cfg.emb_epochs;
    so.lr = cfg.emb_lr;
    so.negatives = cfg.emb_negatives;
    so.seed = derive_seed(cfg.seed, stream_id("embedding"));
    pre.emb = to_embedding(train_skipgram<float>(corpus, g, so).model);
  }
  ctx.stats = normalization_stats(pre.emb);

  if (!cfg.nids_checkpoint.empty()) {
    pre.nids = NidsModel::load(Checkpoint::load(cfg.nids_checkpoint), default_extractor().id, cfg.P);
    if (std::string(to_string(pre.nids->kind())) != cfg.nids) {
      throw Error("nids", "NIDS checkpoint holds a " + std::string(to_string(pre.nids->kind())) + " model, config asks for " +
                              cfg.nids);
    }
  } else {
    detail::log(ctx, "training " + cfg.nids + " NIDS");
    NidsOptions no;
    no.mlp_hidden = cfg.nids_mlp_hidden;
    no.mlp_epochs = cfg.nids_mlp_epochs;
    no.svm_c = cfg.nids_svm_c;
    no.lr_c = cfg.nids_lr_c;
    pre.nids = train_nids(nids_kind_from_string(cfg.nids), ctx.data.train, derive_seed(cfg.seed, stream_id("nids")), no).model;
  }
  pre.nids_test = evaluate_nids(*pre.nids, ctx.data.test);
  pre.asr_original = asr(pre.nids->predict_packets(ctx.data.malicious_test));

  if (files) {
    Checkpoint e("embedding");
    pre.emb.save(e);
    e.save(files->embedding());
    Checkpoint n("nids");
    pre.nids->save(n);
    n.save(files->nids());
  }

  detail::log(ctx, "MLE pretraining of the generator");
  RunState st;
  const auto init = init_generator<float>(vocab_size(g), pre.emb.dim(), cfg.gen_hidden,
                                          derive_seed(cfg.seed, stream_id("generator")));
  const auto mal_tokens = tokenize_all(ctx.data.malicious_train, g);
  MleOptions mo;
  mo.epochs = cfg.mle_epochs;
  mo.batch = cfg.mle_batch;
  mo.lr = cfg.mle_lr;
  mo.seed = derive_seed(cfg.seed, stream_id("mle"));
  auto mle = mle_pretrain<float>(init, mal_tokens, pre.emb, mo);
  pre.mle_initial_loss = mle.initial_loss;
  pre.mle_epoch_loss = mle.epoch_loss;
  st.gen = std::move(mle.params);
  st.rollout_gen = st.gen;
  st.best_gen = st.gen;
  st.gen_adam = Adam<float>(AdamOptions{cfg.pg_lr});
  st.baseline.enabled = cfg.baseline;
  if (files) {
    Checkpoint c("generator");
    save_generator(c, st.gen);
    c.save(files->generator_pretrained());
  }

  detail::log(ctx, "discriminator pretraining");
  st.disc = init_discriminator<float>(pre.emb.dim(), cfg.disc_windows, cfg.disc_filters,
                                      derive_seed(cfg.seed, stream_id("discriminator")));
  st.disc_adam = Adam<float>(AdamOptions{cfg.disc_lr});
  if (cfg.disc_pretrain_epochs > 0) {
    const std::uint64_t seed = derive_seed(cfg.seed, stream_id("pretrain/disc"));
    const auto sets = detail::nids_labeled_sets(ctx, st, st.gen, seed);
    if (sets.benign.empty() || sets.malicious.empty()) {
      ++st.skipped_d_steps;
    } else {
      const auto res = train_discriminator(st.disc, st.disc_adam, std::span<const TokenSequence>(sets.benign),
                                           std::span<const TokenSequence>(sets.malicious), pre.emb,
                                           detail::disc_options(cfg, cfg.disc_pretrain_epochs, derive_seed(seed, stream_id("train"))));
      pre.disc_pretrain_loss = res.loss_trace;
    }
  }
  return st;
}

/// Seeds of epoch e depend only on (run seed, e), never on earlier calls.
inline std::uint64_t epoch_seed(const RunConfig& cfg, std::size_t epoch, std::string_view purpose, std::size_t step = 0) {
  return derive_seed(cfg.seed, stream_id("epoch"), epoch, stream_id(purpose), step);
}

/// One adversarial epoch (generator steps, then discriminator steps), followed by evaluation. Works on a
/// copy and returns it; the caller's state is untouched if anything throws.
inline RunState adversarial_epoch(const RunContext& ctx, const RunState& in) {
  const RunConfig& cfg = ctx.cfg;
  RunState st = in;
  const std::size_t e = st.epoch + 1;
  const auto& emb = ctx.pre.emb;

  for (std::size_t g = 0; g < cfg.g_steps; ++g) {
    const std::uint64_t seed = epoch_seed(cfg, e, "g-step", g);
    const auto masks = detail::draw_masks(ctx, ctx.data.malicious_train, cfg.pg_batch, derive_seed(seed, stream_id("templates")));
    const auto samples = sample_batch(st.gen, emb, masks, derive_seed(seed, stream_id("sample")));
    detail::materialize(ctx, st, samples, masks);
    const DiscriminatorScorer<float> scorer(st.disc, emb);
    const RolloutConfig rc{cfg.rollout_M, derive_seed(seed, stream_id("rollout"))};
    const auto& policy = cfg.rollout_lag > 0 ? st.rollout_gen : st.gen;
    const Mat<double> q = action_values_batch(std::span<const PolicySample>(samples), policy, emb,
                                              std::span<const ConstraintMask>(masks), RewardFn(std::cref(scorer)), rc);
    policy_gradient_update(st.gen, st.gen_adam, std::span<const PolicySample>(samples), q, emb, &st.baseline);
  }

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t k = 0; k < cfg.d_steps; ++k) {
    const std::uint64_t seed = epoch_seed(cfg, e, "d-step", k);
    const auto sets = detail::nids_labeled_sets(ctx, st, st.gen, seed);
    if (sets.benign.empty() || sets.malicious.empty()) {
      ++st.skipped_d_steps;
      continue;
    }
    const auto res = train_discriminator(st.disc, st.disc_adam, std::span<const TokenSequence>(sets.benign),
                                         std::span<const TokenSequence>(sets.malicious), emb,
                                         detail::disc_options(cfg, cfg.disc_k, derive_seed(seed, stream_id("train"))));
    loss_sum += res.loss_trace.back() / static_cast<double>(sets.benign.size() + sets.malicious.size());
    ++loss_count;
  }
  st.disc_loss_history.push_back(loss_count ? loss_sum / static_cast<double>(loss_count)
                                            : std::numeric_limits<double>::quiet_NaN());
  if (cfg.rollout_lag > 0 && e % cfg.rollout_lag == 0) st.rollout_gen = st.gen;

  RunState& out = st;
  MetricRecord rec = evaluate_generator(ctx, out, out.gen, e, epoch_seed(cfg, e, "eval"));
  if (rec.afr < out.best_afr) {
    out.best_afr = rec.afr;
    out.best_epoch = e;
    out.best_gen = out.gen;
  }
  out.history.push_back(rec);
  out.epoch = e;
  return out;
}

/// Discriminator-loss plateau: relative change below 1e-3 for the last three epochs.
inline bool disc_loss_plateaued(const std::vector<double>& h) {
  if (h.size() < 4) return false;
  for (std::size_t i = h.size() - 3; i < h.size(); ++i) {
    const double prev = h[i - 1];
    if (!std::isfinite(prev) || !std::isfinite(h[i]) || prev == 0) return false;
    if (std::abs(h[i] - prev) / std::abs(prev) >= 1e-3) return false;
  }
  return true;
}

struct RunResult {
  std::vector<MetricRecord> history;
  std::size_t best_epoch = 0;
  double best_afr = 0.0;
  double asr_original = 0.0;
  ClassifierMetrics nids_test;
  std::size_t generated_packets = 0;
  std::size_t mask_violations = 0;
  bool early_stopped = false;
};

namespace detail {

inline nlohmann::json metrics_json(const ClassifierMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"tp", m.true_positive},  {"fp", m.false_positive},   {"tn", m.true_negative},
          {"fn", m.false_negative}};
}

inline nlohmann::json seeds_json(const RunConfig& cfg) {
  return {{"run", cfg.seed},
          {"split", derive_seed(cfg.seed, stream_id("split"))},
          {"embedding", derive_seed(cfg.seed, stream_id("embedding"))},
          {"nids", derive_seed(cfg.seed, stream_id("nids"))},
          {"generator", derive_seed(cfg.seed, stream_id("generator"))},
          {"mle", derive_seed(cfg.seed, stream_id("mle"))},
          {"discriminator", derive_seed(cfg.seed, stream_id("discriminator"))},
          {"synth_noise", cfg.synth_noise_seed}};
}

}  // namespace detail

/// Runs pretraining and the adversarial epochs, writing CSV, checkpoints and
/// the manifest under `out`. With `resume`, continues from the saved state
/// and keeps the first e CSV rows verbatim.
inline RunResult run_experiment(const Config& config, const fs::path& out, bool resume = false, RunHooks hooks = {}) {
  const RunConfig cfg = resolve_config(config);
  RunFiles files{out};
  fs::create_directories(out);
  nlohmann::json manifest;
  std::vector<double> timings;
  if (resume) {
    if (!fs::exists(files.manifest()) || !fs::exists(files.state())) {
      throw Error("orchestrator", "nothing to resume in " + out.string());
    }
    manifest = read_json_file(files.manifest(), "orchestrator");
    if (manifest.contains("epoch_timings")) timings = manifest["epoch_timings"].get<std::vector<double>>();
  }
  manifest["config"] = config.values();
  manifest["seeds"] = detail::seeds_json(cfg);
  manifest["versions"] = version_info();
  manifest["status"] = "RUNNING";
  auto flush_manifest = [&] { write_text_file(files.manifest(), manifest.dump(2) + "\n", "orchestrator"); };

  RunContext ctx;
  ctx.cfg = cfg;
  ctx.hooks = std::move(hooks);
  RunState state;
  try {
    ctx.data = prepare_data(cfg);
    manifest["input_hash"] = ctx.data.input_hash;
    manifest["provenance"] = ctx.data.provenance;
    flush_manifest();
    if (resume) {
      ctx.pre.emb = EmbeddingMatrix::load(Checkpoint::load(files.embedding()));
      ctx.stats = normalization_stats(ctx.pre.emb);
      ctx.pre.nids = NidsModel::load(Checkpoint::load(files.nids()), default_extractor().id, cfg.P);
      ctx.pre.nids_test = evaluate_nids(*ctx.pre.nids, ctx.data.test);
      ctx.pre.asr_original = asr(ctx.pre.nids->predict_packets(ctx.data.malicious_test));
      state = load_state(files.state(), cfg);
      if (timings.size() > state.epoch) timings.resize(state.epoch);
      detail::log(ctx, "resuming after epoch " + std::to_string(state.epoch));
    } else {
      state = pretrain_phase(ctx, &files);
      manifest["pretrain"] = {{"nids_test", detail::metrics_json(ctx.pre.nids_test)},
                              {"mle_initial_loss", ctx.pre.mle_initial_loss},
                              {"mle_epoch_loss", ctx.pre.mle_epoch_loss},
                              {"disc_pretrain_loss", ctx.pre.disc_pretrain_loss}};
      save_state(files.state(), state);
      write_text_file(files.metrics(), format_metric_csv({}), "orchestrator");
    }
    manifest["asr_original"] = ctx.pre.asr_original;
    manifest["nids_test"] = detail::metrics_json(ctx.pre.nids_test);

    bool early = false;
    while (state.epoch < cfg.epochs) {
      const auto t0 = std::chrono::steady_clock::now();
      state = adversarial_epoch(ctx, state);
      timings.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      write_text_file(files.metrics(), format_metric_csv(state.history), "orchestrator");
      save_state(files.state(), state);
      {
        Checkpoint c("generator");
        save_generator(c, state.best_gen);
        c.save(files.generator_best());
      }
      manifest["epoch_timings"] = timings;
      manifest["completed_epochs"] = state.epoch;
      manifest["best_epoch"] = state.best_epoch;
      manifest["best_afr"] = state.best_afr;
      flush_manifest();
      const MetricRecord& r = state.history.back();
      if (ctx.hooks.on_epoch) ctx.hooks.on_epoch(r);
      char line[160];
      std::snprintf(line, sizeof line, "epoch %zu: afr %.2f%% asir %.2f%% mape %.2f%% (%.1fs)", r.epoch, r.afr, r.asir,
                    r.mape, timings.back());
      detail::log(ctx, line);
      if (cfg.early_stop && disc_loss_plateaued(state.disc_loss_history)) {
        early = true;
        detail::log(ctx, "discriminator loss plateaued; stopping early");
        break;
      }
    }
    {
      Checkpoint c("generator");
      save_generator(c, state.gen);
      c.save(files.generator_final());
      Checkpoint d("discriminator");
      save_discriminator(d, state.disc);
      d.save(files.discriminator_final());
    }
    manifest["early_stopped"] = early;
    manifest["packets"] = {{"generated", state.generated_packets},
                           {"mask_violations", state.mask_violations},
                           {"skipped_d_steps", state.skipped_d_steps}};
    manifest["status"] = "COMPLETED";
    flush_manifest();
    RunResult result;
    result.history = state.history;
    result.best_epoch = state.best_epoch;
    result.best_afr = state.best_afr;
    result.asr_original = ctx.pre.asr_original;
    result.nids_test = ctx.pre.nids_test;
    result.generated_packets = state.generated_packets;
    result.mask_violations = state.mask_violations;
    result.early_stopped = early;
    return result;
  } catch (const std::exception& ex) {
    manifest["status"] = "FAILED";
    manifest["error"] = ex.what();
    try {
      flush_manifest();
    } catch (...) {
    }
    throw;
  }
}

}  // namespace attackgan
