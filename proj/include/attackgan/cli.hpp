#pragma once

// Command-line front end. dispatch() returns 0 on success, 1 on usage or
// configuration errors, 2 on runtime failures.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attackgan/orchestrator.hpp"
#include "attackgan/pcap.hpp"
#include "attackgan/report.hpp"

namespace attackgan {

struct CliStreams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = ".";
};

inline void add_common(CLI::App* cmd, CommonArgs& a, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", a.config, "JSON config file (a run manifest also works)");
    cmd->add_option("--set", a.overrides, "key=value override, repeatable")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  }
  cmd->add_option("--out", a.out, "output directory");
}

/// Config from defaults, then ATTACKGAN_SEED, then the file, then --set.
inline Config build_config(const CommonArgs& a) {
  Config c;
  if (const char* env = std::getenv("ATTACKGAN_SEED"); env && *env) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (*end != '\0' || v < 0) throw ConfigError(std::string("ATTACKGAN_SEED must be a non-negative integer, got '") + env + "'");
    c.set("seed", v);
  }
  if (!a.config.empty()) c.merge_file(a.config);
  for (const auto& o : a.overrides) c.set_override(o);
  return c;
}

inline nlohmann::json base_manifest(const std::string& verb, const Config& c) {
  return {{"command", verb}, {"config", c.values()}, {"versions", version_info()}, {"status", "COMPLETED"}};
}

inline void write_manifest(const fs::path& dir, const nlohmann::json& m) {
  fs::create_directories(dir);
  write_text_file(dir / "manifest.json", m.dump(2) + "\n", "cli");
}

inline EmbeddingMatrix train_embedding(const RunConfig& cfg, const PreparedData& data) {
  SkipGramOptions so;
  so.dim = cfg.emb_dim;
  so.window = cfg.emb_window;
  so.epochs = cfg.emb_epochs;
  so.lr = cfg.emb_lr;
  so.negatives = cfg.emb_negatives;
  so.seed = derive_seed(cfg.seed, stream_id("embedding"));
  return to_embedding(train_skipgram<float>(tokenize_all(data.train.packets, cfg.granularity), cfg.granularity, so).model);
}

}  // namespace detail

inline int dispatch(const std::vector<std::string>& args, CliStreams io = {}) {
  CLI::App app{"Constrained adversarial packet generation against a black-box NIDS", "attackgan"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  detail::CommonArgs common;
  auto* synth = app.add_subcommand("synth", "write a synthetic labeled corpus to OUT/dataset.atkd");
  detail::add_common(synth, common);

  std::vector<std::string> benign_pcaps, malicious_pcaps;
  std::size_t strip = 0;
  auto* ingest = app.add_subcommand("ingest", "read pcap files into OUT/dataset.atkd");
  detail::add_common(ingest, common);
  ingest->add_option("--benign", benign_pcaps, "pcap files of benign traffic");
  ingest->add_option("--malicious", malicious_pcaps, "pcap files of malicious traffic");
  ingest->add_option("--strip", strip, "leading bytes to drop from every frame");

  auto* pre_emb = app.add_subcommand("pretrain-embeddings", "train skip-gram embeddings to OUT/embedding.ckpt");
  detail::add_common(pre_emb, common);
  auto* pre_nids = app.add_subcommand("pretrain-nids", "train the black-box NIDS to OUT/nids.ckpt");
  detail::add_common(pre_nids, common);

  bool resume = false;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "pretrain and run adversarial training under OUT");
  detail::add_common(train, common);
  train->add_flag("--resume", resume, "continue from OUT/state.ckpt");
  train->add_flag("--quiet", quiet, "no per-epoch progress output");

  std::string generator_path;
  auto* evaluate = app.add_subcommand("evaluate", "score a generator checkpoint against the NIDS of a run");
  detail::add_common(evaluate, common);
  evaluate->add_option("--generator", generator_path, "generator checkpoint (default OUT/generator_best.ckpt)");

  std::vector<std::string> run_dirs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "plots and summary.csv from run directories");
  rep->add_option("runs", run_dirs, "run directories or metric CSV files")->required();
  rep->add_option("--out", report_out, "output directory (default: the first run directory)");

  std::vector<std::string> argv_copy(args.rbegin(), args.rend());
  try {
    app.parse(argv_copy);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    io.out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string verb = cmd->get_name();
  const fs::path out = common.out;
  try {
    if (cmd == rep) {
      const fs::path first = run_dirs.front();
      const fs::path dest = !report_out.empty() ? fs::path(report_out) : fs::is_directory(first) ? first : first.parent_path();
      const auto res = report(std::vector<fs::path>(run_dirs.begin(), run_dirs.end()), dest);
      io.out << "wrote " << res.plots.size() << " plots and " << res.summary.string() << "\n";
      return 0;
    }

    const Config config = detail::build_config(common);
    const RunConfig cfg = resolve_config(config);
    auto manifest = detail::base_manifest(verb, config);

    if (cmd == synth) {
      const auto ds = synthesize_corpus(synth_spec(cfg));
      fs::create_directories(out);
      save_dataset(out / "dataset.atkd", ds, "synthetic corpus, noise seed " + std::to_string(cfg.synth_noise_seed));
      manifest["outputs"] = {"dataset.atkd"};
      manifest["input_hash"] = git_blob_hash(serialize_dataset(ds));
      manifest["counts"] = {{"benign", ds.count(Label::benign)}, {"malicious", ds.count(Label::malicious)}};
      detail::write_manifest(out, manifest);
      io.out << "wrote " << ds.size() << " packets to " << (out / "dataset.atkd").string() << "\n";
    } else if (cmd == ingest) {
      if (benign_pcaps.empty() && malicious_pcaps.empty()) throw ConfigError("ingest needs --benign and/or --malicious pcap files");
      LabeledDataset ds;
      std::string provenance;
      for (const auto& [files, label] : {std::pair{&benign_pcaps, Label::benign}, std::pair{&malicious_pcaps, Label::malicious}}) {
        for (const auto& f : *files) {
          for (const auto& raw : read_pcap(f, strip, label)) ds.packets.push_back(normalize_packet(raw, cfg.P));
          provenance += (provenance.empty() ? "" : ", ") + std::string(label == Label::benign ? "benign " : "malicious ") +
                        fs::path(f).filename().string();
        }
      }
      fs::create_directories(out);
      save_dataset(out / "dataset.atkd", ds, "pcap: " + provenance);
      manifest["outputs"] = {"dataset.atkd"};
      manifest["input_hash"] = git_blob_hash(serialize_dataset(ds));
      manifest["counts"] = {{"benign", ds.count(Label::benign)}, {"malicious", ds.count(Label::malicious)}};
      detail::write_manifest(out, manifest);
      io.out << "wrote " << ds.size() << " packets to " << (out / "dataset.atkd").string() << "\n";
    } else if (cmd == pre_emb) {
      const auto data = prepare_data(cfg);
      const auto emb = detail::train_embedding(cfg, data);
      Checkpoint c("embedding");
      emb.save(c);
      fs::create_directories(out);
      c.save(out / "embedding.ckpt");
      manifest["input_hash"] = data.input_hash;
      manifest["outputs"] = {"embedding.ckpt"};
      detail::write_manifest(out, manifest);
      io.out << "embedding " << emb.vocab() << "x" << emb.dim() << " written to " << (out / "embedding.ckpt").string() << "\n";
    } else if (cmd == pre_nids) {
      const auto data = prepare_data(cfg);
      NidsOptions no;
      no.mlp_hidden = cfg.nids_mlp_hidden;
      no.mlp_epochs = cfg.nids_mlp_epochs;
      no.svm_c = cfg.nids_svm_c;
      no.lr_c = cfg.nids_lr_c;
      const auto rep_n = train_nids(nids_kind_from_string(cfg.nids), data.train, derive_seed(cfg.seed, stream_id("nids")), no);
      const auto test = evaluate_nids(rep_n.model, data.test);
      Checkpoint c("nids");
      rep_n.model.save(c);
      fs::create_directories(out);
      c.save(out / "nids.ckpt");
      manifest["input_hash"] = data.input_hash;
      manifest["outputs"] = {"nids.ckpt"};
      manifest["nids_train"] = detail::metrics_json(rep_n.train_metrics);
      manifest["nids_test"] = detail::metrics_json(test);
      detail::write_manifest(out, manifest);
      char line[160];
      std::snprintf(line, sizeof line, "%s test accuracy %.4f precision %.4f recall %.4f", cfg.nids.c_str(), test.accuracy,
                    test.precision, test.recall);
      io.out << line << "\n";
    } else if (cmd == train) {
      RunHooks hooks;
      if (!quiet) hooks.log = [&io](const std::string& s) { io.err << s << "\n"; };
      const auto res = run_experiment(config, out, resume, hooks);
      char line[200];
      std::snprintf(line, sizeof line, "completed %zu epochs; best epoch %zu afr %.2f%%; original asr %.2f%%; mask violations %zu/%zu",
                    res.history.size(), res.best_epoch, res.best_afr, res.asr_original, res.mask_violations,
                    res.generated_packets);
      io.out << line << "\n";
    } else if (cmd == evaluate) {
      const fs::path gen_path = generator_path.empty() ? out / "generator_best.ckpt" : fs::path(generator_path);
      RunContext ctx;
      ctx.cfg = cfg;
      ctx.data = prepare_data(cfg);
      ctx.pre.emb = EmbeddingMatrix::load(Checkpoint::load(out / "embedding.ckpt"));
      ctx.stats = normalization_stats(ctx.pre.emb);
      ctx.pre.nids = NidsModel::load(Checkpoint::load(out / "nids.ckpt"), default_extractor().id, cfg.P);
      ctx.pre.asr_original = asr(ctx.pre.nids->predict_packets(ctx.data.malicious_test));
      const auto gen = load_generator<float>(Checkpoint::load(gen_path));
      RunState st;
      const auto rec = evaluate_generator(ctx, st, gen, 0, derive_seed(cfg.seed, stream_id("evaluate")));
      nlohmann::json ev = {{"generator", gen_path.string()},       {"afr", rec.afr},   {"asr", rec.asr},
                           {"asir", rec.asir},                     {"mape", rec.mape}, {"asr_original", ctx.pre.asr_original},
                           {"mask_violations", st.mask_violations}, {"packets", st.generated_packets}};
      write_text_file(out / "evaluation.json", ev.dump(2) + "\n", "cli");
      io.out << kMetricCsvHeader << "\n" << format_metric_row(rec) << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    io.err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    io.err << "error in " << e.module() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    io.err << "error in " << verb << ": " << e.what() << "\n";
    return 2;
  }
}

inline int dispatch(int argc, char** argv, CliStreams io = {}) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, io);
}

}  // namespace attackgan
