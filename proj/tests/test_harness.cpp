#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "beamsim/harness.hpp"
#include "beamsim/rate.hpp"

using namespace beamsim;
using json = nlohmann::json;

namespace {

ExperimentSpec tiny_spec() {
  ExperimentSpec s = make_preset("miso-sd", Scale::kDesk);
  s.system.N = 4;
  s.system.K = 2;
  s.arch.encoder_hidden = {8};
  s.arch.beamdec_hidden = {8};
  s.arch.chandec_hidden = {8};
  s.arch.d_latent = 4;
  s.train.batch = 4;
  s.train.epochs = 2;
  s.train.chandec_epochs = 2;
  s.test_size = 6;
  s.threads = 1;
  return s;
}

std::filesystem::path temp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("paper-scale presets") {
  const auto miso = make_preset("miso-sd", Scale::kPaper);
  CHECK(miso.system.N == 64);
  CHECK(miso.system.K == 16);
  CHECK(miso.system.M == 1);
  CHECK(miso.geometry.psi == doctest::Approx(kPi / 16).epsilon(1e-15));
  const auto sc = make_preset("miso-sc", Scale::kPaper);
  CHECK(sc.geometry.kind == GeometryKind::kSingleCell);
  CHECK(sc.geometry.phi == doctest::Approx(kPi / 2).epsilon(1e-15));
  const auto mimo = make_preset("mimo-sd", Scale::kPaper);
  CHECK(mimo.system.K == 4);
  CHECK(mimo.system.M == 4);
  CHECK(mimo.geometry.psi == doctest::Approx(kPi / 4).epsilon(1e-15));
  const auto ff = make_preset("hybrid-ff", Scale::kPaper);
  CHECK(ff.hybrid);
  CHECK(ff.system.N == 64);
  CHECK(ff.hybrid_cfg.N_RF == 16);
  const auto nf = make_preset("hybrid-nf", Scale::kPaper);
  CHECK(nf.nearfield);
  CHECK(nf.hybrid_cfg.lambda == 3e-3);
  CHECK(nf.hybrid_cfg.S == 16);
  CHECK(nf.hybrid_cfg.n_sub == 4);
  CHECK(nf.hybrid_cfg.r_c == 3.0);
  CHECK(nf.hybrid_cfg.sigma_r * nf.hybrid_cfg.sigma_r == 1.0);
  for (const auto& name : preset_names()) {
    CHECK_NOTHROW(make_preset(name, Scale::kPaper).validate());
    CHECK_NOTHROW(make_preset(name, Scale::kDesk).validate());
  }
}

TEST_CASE("desk preset matches the desk scale") {
  const auto s = make_preset("miso-sd", Scale::kDesk);
  CHECK(s.system.N == 16);
  CHECK(s.system.K == 4);
  CHECK(s.system.M == 1);
  CHECK(s.arch.d_latent == 16);
  CHECK(s.train.batch == 64);
  CHECK(s.train.epochs == 300);
}

TEST_CASE("unknown preset lists the valid names") {
  try {
    make_preset("miso-xx", Scale::kDesk);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& n : preset_names()) CHECK(msg.find(n) != std::string::npos);
  }
}

TEST_CASE("config sections") {
  ExperimentSpec s = make_preset("miso-sd", Scale::kDesk);
  apply_config(s, json::parse(R"({"system": {"K": 3}, "train": {"optimizer": "adam", "epochs": 7},
                                  "feedback": {"mode": "quantizer", "bits": 6},
                                  "eval": {"baselines": ["mmse"], "seeds": [4, 5]}})"));
  CHECK(s.system.K == 3);
  CHECK(s.train.optimizer == OptimizerKind::kAdam);
  CHECK(s.train.epochs == 7);
  CHECK(s.feedback.mode == FeedbackMode::kUniformQuantizer);
  CHECK(s.feedback.bits == 6);
  CHECK(s.baselines.size() == 1);
  CHECK(s.seeds == std::vector<std::uint64_t>{4, 5});

  // Round trip through the manifest form.
  ExperimentSpec t = make_preset("mimo-sc", Scale::kPaper);
  json j = spec_to_json(s);
  j.erase("preset");
  j.erase("scale");
  apply_config(t, j);
  j = spec_to_json(s);
  json jt = spec_to_json(t);
  jt["preset"] = j["preset"];
  jt["scale"] = j["scale"];
  CHECK(jt == j);

  CHECK_THROWS_AS(apply_config(s, json::parse(R"({"system": {"Q": 1}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(s, json::parse(R"({"network": {}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(s, json::parse(R"({"eval": {"baselines": []}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(s, json::parse(R"({"eval": {"snr_db": []}})")), ConfigError);
  CHECK_THROWS_AS(apply_config(s, json::parse(R"({"system": {"N": "x"}})")), ConfigError);
}

TEST_CASE("test sets are reproducible and hashed") {
  const ExperimentSpec s = tiny_spec();
  const auto a = make_test_set(s, 10.0, 1);
  const auto b = make_test_set(s, 10.0, 1);
  const auto c = make_test_set(s, 10.0, 2);
  const auto d = make_test_set(s, 15.0, 1);
  CHECK(a.size() == 6);
  CHECK(test_set_hash(a) == test_set_hash(b));
  CHECK(test_set_hash(a) != test_set_hash(c));
  CHECK(test_set_hash(a) != test_set_hash(d));
  CHECK(a[0].sample.sigma2[0] == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("hybrid sources carry the analog matrix") {
  auto ff = make_preset("hybrid-ff", Scale::kDesk);
  ff.test_size = 3;
  for (const auto& inst : make_test_set(ff, 10.0, 1)) {
    CHECK(inst.hybrid());
    CHECK(inst.bf_rows() == ff.hybrid_cfg.N_RF);
  }
  auto nf = make_preset("hybrid-nf", Scale::kDesk);
  nf.test_size = 3;
  for (const auto& inst : make_test_set(nf, 10.0, 1)) {
    CHECK(inst.analog.rows() == 64);
    CHECK(inst.analog.cols() == nf.hybrid_cfg.N_RF);
  }
}

TEST_CASE("mmse baseline with a perfect single-user channel reaches capacity") {
  Rng rng(3);
  const CMatrix h = complex_gaussian_matrix(1, 6, 1.0, rng);
  const double P = 2.0;
  Instance inst{assemble_sample({h}, {1.0}, {CMatrix::Zero(1, 6)}), CMatrix{}};
  const EvalOutcome out = run_baseline_mmse({inst}, 0, 1e-3, P);
  const double cap = std::log2(1.0 + h.squaredNorm() * P);
  CHECK(out.rates[0][0] == doctest::Approx(cap).epsilon(1e-12));
  CHECK(out.max_w0_power_error <= 1e-12);
  // Ascent from MRT only rescales the beam; with projection the iterates stay put.
  const CMatrix W0 = mmse_beamformer(inst.sample.H_tilde, P);
  const auto trace = refine(W0, inst.sample.H_tilde, 1e-3, 5, {.project = true, .power_budget = P});
  for (const auto& W : trace.iterates) {
    CHECK(relative_error(W, W0) <= 1e-12);
    CHECK(sum_rate(inst.sample.H, W) == doctest::Approx(cap).epsilon(1e-12));
  }
  const auto free = refine(W0, inst.sample.H_tilde, 1e-3, 5);
  const cd c = (W0.adjoint() * free.final())(0, 0);
  CHECK(std::abs(c) / (W0.norm() * free.final().norm()) >= 1.0 - 1e-12);
}

TEST_CASE("mmse baseline reports the rate on the true channel") {
  const ExperimentSpec s = tiny_spec();
  const auto set = make_test_set(s, 10.0, 1);
  const EvalOutcome out = run_baseline_mmse(set, 0, 1e-3, 1.0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const CMatrix W = mmse_beamformer(set[i].sample.H_tilde, 1.0);
    CHECK(out.rates[i][0] == sum_rate(set[i].sample.H, W));
    CHECK(out.rates[i].size() == 1);
  }
}

TEST_CASE("evaluation is independent of the worker count") {
  ExperimentSpec s = tiny_spec();
  const TrainConfig cfg = baseline_train_config(s, Baseline::kKdEdn, 1);
  const TrainedModel m = run_algorithm1(cfg, s.arch, s.system.K, s.system.M, s.channel_cols(),
                                        s.system.P, make_source(s), s.feedback);
  const auto set = make_test_set(s, 10.0, 1);
  const EvalOutcome a = evaluate_model(m.nets, m.meta, set, s.feedback, 3, 1e-3, 1.0, 9, 1);
  const EvalOutcome b = evaluate_model(m.nets, m.meta, set, s.feedback, 3, 1e-3, 1.0, 9, 3);
  CHECK(a.rates == b.rates);
  CHECK(a.final_power == b.final_power);
  CHECK(a.max_w0_power_error <= 1e-9);
  CHECK(a.rates[0].size() == 4);

  // Q_i = 0 column is the decoder output itself.
  const EvalOutcome z = evaluate_model(m.nets, m.meta, set, s.feedback, 0, 1e-3, 1.0, 9, 1);
  for (std::size_t i = 0; i < set.size(); ++i) CHECK(z.rates[i][0] == a.rates[i][0]);

  CheckpointMeta untrained;
  CHECK_THROWS_AS(evaluate_model(m.nets, untrained, set, s.feedback, 0, 1e-3, 1.0, 9, 1), StateError);
}

TEST_CASE("thread cap from the environment") {
  setenv("BEAMSIM_THREADS", "1", 1);
  CHECK(resolve_threads(8) == 1);
  setenv("BEAMSIM_THREADS", "3", 1);
  CHECK(resolve_threads(8) == 3);
  CHECK(resolve_threads(2) == 2);
  unsetenv("BEAMSIM_THREADS");
  CHECK(resolve_threads(5) == 5);
}

TEST_CASE("sweep_snr with the mmse baseline only") {
  ExperimentSpec s = tiny_spec();
  s.baselines = {Baseline::kMmse};
  s.test_size = 50;
  s.train.q_i = 0;
  ModelStore store(temp_dir("beamsim_mmse_only"), true);
  const ResultTable t = sweep_snr(s, store);
  REQUIRE(t.rows.size() == 4);
  for (std::size_t i = 1; i < t.rows.size(); ++i) CHECK(t.rows[i].mean_rate >= t.rows[i - 1].mean_rate);
  const std::string csv = t.snr_csv();
  CHECK(csv.rfind("baseline,snr_db,mean_rate,std_rate,n_samples,seconds\n", 0) == 0);
  CHECK(t.manifest["test_sets"].size() == 4);
  CHECK(t.manifest["power_audit"].size() == 4);
  CHECK(t.manifest["power_audit"][0].contains("final_power_mean"));

  s.baselines.clear();
  CHECK_THROWS_AS(sweep_snr(s, store), ConfigError);
}

TEST_CASE("eval-only mode names the missing checkpoint") {
  ExperimentSpec s = tiny_spec();
  s.baselines = {Baseline::kKdEdn};
  const auto dir = temp_dir("beamsim_eval_only");
  ModelStore store(dir, true);
  const std::string expected = store.checkpoint_path(s, Baseline::kKdEdn, 5, 1).string();
  try {
    sweep_snr(s, store);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(expected) != std::string::npos);
  }
}

TEST_CASE("model store trains once, then loads the checkpoint") {
  ExperimentSpec s = tiny_spec();
  s.baselines = {Baseline::kKdEdn, Baseline::kKdEdnQ0};
  const auto dir = temp_dir("beamsim_store");
  ResultTable first;
  {
    ModelStore store(dir, false);
    first = sweep_snr(s, store);
  }
  CHECK(std::filesystem::exists(dir / "models" / "kd-edn-qt5-snr5to20x4-seed1.ckpt"));
  CHECK(std::filesystem::exists(dir / "models" / "kd-edn-q0-qt0-snr5to20x4-seed1.ckpt"));
  ModelStore again(dir, true);
  const ResultTable second = sweep_snr(s, again);
  REQUIRE(first.rows.size() == second.rows.size());
  for (std::size_t i = 0; i < first.rows.size(); ++i) {
    CHECK(first.rows[i].mean_rate == second.rows[i].mean_rate);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep_q curves") {
  ExperimentSpec s = tiny_spec();
  s.q_t_list = {0, 2};
  s.q_i_max = 3;
  const auto dir = temp_dir("beamsim_sweep_q");
  ModelStore store(dir, false);
  const ResultTable t = sweep_q(s, store);
  // Two trained curves and the MMSE-initialized one, Q_i = 0..3 each.
  CHECK(t.rows.size() == 12);
  CHECK(t.rows.back().baseline == "mmse");
  CHECK(t.q_csv().rfind("baseline,snr_db,q_t,q_i,", 0) == 0);
  for (const auto& r : t.rows) {
    CHECK(r.monotone_fraction >= 0.0);
    CHECK(r.monotone_fraction <= 1.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics stream excludes wall time") {
  std::vector<EpochMetrics> h(2);
  h[0].epoch = 0;
  h[0].seconds = 1.5;
  h[1].epoch = 1;
  h[1].alpha = 0.01;
  const std::string m = metrics_csv(h);
  CHECK(m.rfind("epoch,alpha,mean_unsup_loss,mean_sup_loss,mean_sum_rate\n", 0) == 0);
  CHECK(m.find("1.5") == std::string::npos);
  CHECK(timing_csv(h).find("1.500000") != std::string::npos);
}

TEST_CASE("gradcheck suites pass") {
  for (const auto& s : run_gradcheck(0)) {
    INFO(s.name);
    CHECK(s.passed());
  }
}
