#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "beamsim/harness.hpp"

namespace fs = std::filesystem;
using namespace beamsim;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "beamsim-out";
  std::string preset = "miso-sd";
  std::string scale = "desk";
};

ExperimentSpec load_spec(const Common& c) {
  ExperimentSpec spec = make_preset(c.preset, parse_scale(c.scale));
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError("cannot open config file " + c.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + c.config + ": " + e.what());
    }
    apply_config(spec, j);
  }
  if (c.seed) spec.seeds = {*c.seed};
  spec.validate();
  return spec;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void log(const std::string& msg) { std::cerr << "[beamsim] " << msg << '\n'; }

int cmd_generate(const Common& c, int count) {
  ExperimentSpec spec = load_spec(c);
  if (count > 0) spec.test_size = count;
  json manifest{{"kind", "generate"}, {"spec", spec_to_json(spec)}, {"files", json::array()}};
  for (auto seed : spec.seeds) {
    for (double snr : spec.eval_snr_db) {
      const auto set = make_test_set(spec, snr, seed);
      std::vector<ChannelSample> samples;
      for (const auto& inst : set) samples.push_back(inst.sample);
      const std::string stem = "testset-seed" + std::to_string(seed) + "-snr" +
                               std::to_string(static_cast<int>(std::lround(snr)));
      const fs::path file = fs::path(c.out) / (stem + ".bin");
      fs::create_directories(file.parent_path());
      write_channel_batch(file, samples);
      json entry{{"file", file.filename().string()}, {"seed", seed}, {"snr_db", snr},
                 {"size", set.size()}, {"hash", test_set_hash(set)}};
      if (spec.hybrid) {
        // One record per sample, block 0 holding the analog matrix.
        std::vector<ChannelSample> analog;
        for (const auto& inst : set) {
          analog.push_back(assemble_sample({inst.analog}, {1.0}, {CMatrix::Zero(inst.analog.rows(),
                                                                               inst.analog.cols())}));
        }
        const fs::path afile = fs::path(c.out) / (stem + "-analog.bin");
        write_channel_batch(afile, analog);
        entry["analog_file"] = afile.filename().string();
      }
      manifest["files"].push_back(entry);
      std::cout << file.string() << ' ' << entry["hash"].get<std::string>() << '\n';
    }
  }
  write_text(fs::path(c.out) / "generate.json", manifest.dump(2) + "\n");
  return 0;
}

int cmd_train(const Common& c, const std::string& baseline_name, std::optional<int> q_t) {
  const ExperimentSpec spec = load_spec(c);
  const Baseline b = parse_baseline(baseline_name);
  if (b == Baseline::kMmse) throw ConfigError("the mmse baseline has nothing to train");
  const std::uint64_t seed = spec.seeds.front();
  TrainConfig cfg = baseline_train_config(spec, b, seed);
  if (q_t && b != Baseline::kKdEdnQ0) cfg.q_t = *q_t;
  const fs::path out(c.out);
  fs::create_directories(out);
  ModelStore store(out, false);
  const fs::path ckpt = store.checkpoint_path(spec, b, cfg.q_t, seed);
  EpochCallback on_epoch = [&](const EpochMetrics& m, const EdnNetworks& nets) {
    if (cfg.checkpoint_every > 0 && (m.epoch + 1) % cfg.checkpoint_every == 0) {
      CheckpointMeta meta;
      meta.seed = seed;
      meta.kd_epoch = static_cast<std::uint64_t>(m.epoch + 1);
      meta.alpha = m.alpha;
      const fs::path p = out / "checkpoints" / ("epoch-" + std::to_string(m.epoch + 1) + ".ckpt");
      fs::create_directories(p.parent_path());
      write_checkpoint(p, nets, meta);
    }
    if ((m.epoch + 1) % 50 == 0 || m.epoch + 1 == cfg.epochs) {
      log("epoch " + std::to_string(m.epoch + 1) + " alpha " + std::to_string(m.alpha) +
          " rate " + std::to_string(m.sum_rate));
    }
  };
  const TrainedModel model =
      run_algorithm1(cfg, spec.arch, spec.system.K, spec.system.M, spec.channel_cols(),
                     spec.system.P, make_source(spec), spec.feedback, on_epoch);
  fs::create_directories(ckpt.parent_path());
  write_checkpoint(ckpt, model.nets, model.meta);
  write_text(out / "metrics.csv", metrics_csv(model.history));
  write_text(out / "timing.csv", timing_csv(model.history));
  std::string chan = "epoch,loss\n";
  for (std::size_t e = 0; e < model.chandec_curve.loss.size(); ++e) {
    chan += std::to_string(e) + ',' + json(model.chandec_curve.loss[e]).dump() + '\n';
  }
  write_text(out / "chandec_loss.csv", chan);
  json manifest{{"kind", "train"},
                {"spec", spec_to_json(spec)},
                {"baseline", to_string(b)},
                {"seed", seed},
                {"q_t", cfg.q_t},
                {"checkpoint", fs::relative(ckpt, out).string()}};
  write_text(out / "train.json", manifest.dump(2) + "\n");
  std::cout << ckpt.string() << '\n';
  return 0;
}

int cmd_sweep(const Common& c, bool eval_only, bool q_sweep) {
  const ExperimentSpec spec = load_spec(c);
  const fs::path out(c.out);
  ModelStore store(out, eval_only, log);
  const ResultTable t = q_sweep ? sweep_q(spec, store) : sweep_snr(spec, store);
  const std::string stem = q_sweep ? "sweep_q" : (eval_only ? "eval" : "sweep_snr");
  const std::string csv = q_sweep ? t.q_csv() : t.snr_csv();
  write_text(out / (stem + ".csv"), csv);
  write_text(out / (stem + ".json"), t.manifest.dump(2) + "\n");
  std::cout << csv;
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const auto suites = run_gradcheck(c.seed.value_or(0));
  bool ok = true;
  for (const auto& s : suites) {
    std::printf("%-44s worst %.3e  tol %.0e  %s\n", s.name.c_str(), s.worst_error, s.tolerance,
                s.passed() ? "PASS" : "FAIL");
    ok = ok && s.passed();
  }
  std::printf("%s\n", ok ? "all oracle suites passed" : "oracle suite failure");
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder-decoder beamforming simulator"};
  app.require_subcommand(1);
  Common c;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Random seed (replaces the seed list)");
    sub->add_option("--out", c.out, "Output directory")->capture_default_str();
    sub->add_option("--preset", c.preset,
                    "miso-sc|miso-sd|mimo-sc|mimo-sd|hybrid-ff|hybrid-nf")
        ->capture_default_str();
    sub->add_option("--scale", c.scale, "desk|paper")->capture_default_str();
  };

  auto* gen = app.add_subcommand("generate", "Write hashed channel test sets");
  add_common(gen);
  int count = 0;
  gen->add_option("--count", count, "Samples per SNR level (default: test_size)");

  auto* train = app.add_subcommand("train", "Run the two-stage training");
  add_common(train);
  std::string baseline = "kd-edn";
  train->add_option("--baseline", baseline, "kd-edn|unsupervised|supervised|kd-edn-q0")
      ->capture_default_str();
  std::optional<int> q_t;
  train->add_option("--q-t", q_t, "Override the training refinement depth");

  auto* eval = app.add_subcommand("eval", "Evaluate saved checkpoints over the SNR grid");
  add_common(eval);
  auto* snr = app.add_subcommand("sweep-snr", "Sum rate versus SNR for every baseline");
  add_common(snr);
  auto* sq = app.add_subcommand("sweep-q", "Sum rate versus refinement depth");
  add_common(sq);
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference oracle suites");
  add_common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) c.seed = seed;
  }

  try {
    if (*gen) return cmd_generate(c, count);
    if (*train) return cmd_train(c, baseline, q_t);
    if (*eval) return cmd_sweep(c, true, false);
    if (*snr) return cmd_sweep(c, false, false);
    if (*sq) return cmd_sweep(c, false, true);
    if (*gc) return cmd_gradcheck(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UnsupportedError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DegenerateError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
