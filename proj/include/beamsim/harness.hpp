#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamsim/channel.hpp"
#include "beamsim/feedback.hpp"
#include "beamsim/hybrid.hpp"
#include "beamsim/nets.hpp"
#include "beamsim/training.hpp"

namespace beamsim {

enum class Scale { kDesk, kPaper };

enum class Baseline { kKdEdn, kUnsupervised, kSupervised, kKdEdnQ0, kMmse };

std::string to_string(Baseline b);
Baseline parse_baseline(const std::string& s);
Scale parse_scale(const std::string& s);
const std::vector<std::string>& preset_names();

struct ExperimentSpec {
  std::string preset = "miso-sd";
  Scale scale = Scale::kDesk;
  SystemConfig system;
  GeometryScenario geometry;
  PathParams paths;
  bool hybrid = false;
  bool nearfield = false;
  HybridConfig hybrid_cfg;
  TrainConfig train;
  NetArchitecture arch;
  FeedbackChannelModel feedback;
  // Training SNR mixture.
  double train_snr_lo = 5.0;
  double train_snr_hi = 20.0;
  int train_snr_levels = 4;
  std::vector<double> eval_snr_db{5.0, 10.0, 15.0, 20.0};
  int test_size = 200;
  std::vector<std::uint64_t> seeds{1};
  std::vector<Baseline> baselines{Baseline::kKdEdn, Baseline::kUnsupervised, Baseline::kSupervised,
                                  Baseline::kKdEdnQ0, Baseline::kMmse};
  std::vector<int> q_t_list{0, 5, 10};
  int q_i_max = 10;
  double sweep_q_snr_db = 15.0;
  // Train the sweep_q models at sweep_q_snr_db only instead of the mixture.
  bool sweep_q_fixed_snr = true;
  int threads = 0;  // 0: BEAMSIM_THREADS or hardware concurrency

  void validate() const;
  /// Shape of the digital beamformer: rows x cols.
  int bf_rows() const;
  int bf_cols() const { return system.K * system.M; }
  /// Per-user channel block width seen by the encoder (N, or N_RF in hybrid mode).
  int channel_cols() const { return bf_rows(); }
};

/// Throws ConfigError naming the valid presets for an unknown name.
ExperimentSpec make_preset(const std::string& name, Scale scale);

/// Applies the sections {system, geometry, hybrid, train, feedback, eval} of a JSON
/// config on top of spec. Unknown keys are rejected.
void apply_config(ExperimentSpec& spec, const nlohmann::json& config);
nlohmann::json spec_to_json(const ExperimentSpec& spec);

int resolve_threads(int requested);

/// Far-field analog matrix of a hybrid far-field spec (empty otherwise).
CMatrix farfield_analog(const ExperimentSpec& spec);

/// Draws instances at a fixed noise variance, or from the training SNR mixture.
InstanceSource make_source(const ExperimentSpec& spec, std::optional<double> sigma2 = std::nullopt);

std::vector<Instance> make_test_set(const ExperimentSpec& spec, double snr_db, std::uint64_t seed);

/// FNV-1a over the raw bytes of every channel, error and analog matrix.
std::string test_set_hash(const std::vector<Instance>& set);

TrainConfig baseline_train_config(const ExperimentSpec& spec, Baseline b, std::uint64_t seed);
int baseline_q_i(const ExperimentSpec& spec, Baseline b);

struct EvalOutcome {
  // rates[i][q]: sum rate of test sample i after q refinement steps, on the true channel.
  std::vector<std::vector<double>> rates;
  double max_w0_power_error = 0.0;  // max | ||W_0||^2 - P | (||W^a W_0||^2 in hybrid mode)
  std::vector<double> final_power;   // per sample, after refinement

  std::vector<double> at(int q) const;
  double mean_at(int q) const;
  /// Fraction of samples whose rate never decreases along q = 0..max.
  double monotone_fraction() const;
};

/// Rates reported on the true channel for every refinement depth 0..q_i.
EvalOutcome evaluate_model(const EdnNetworks& nets, const CheckpointMeta& meta,
                           const std::vector<Instance>& test, const FeedbackChannelModel& feedback,
                           int q_i, double eta_ga, double P, std::uint64_t seed, int threads = 1);

/// W_0 = MMSE(H_tilde), q_i ascent steps on H_tilde, rate on the true H.
EvalOutcome run_baseline_mmse(const std::vector<Instance>& test, int q_i, double eta_ga, double P,
                              int threads = 1);

/// Loads checkpoints from dir, training and saving missing ones unless eval_only.
class ModelStore {
 public:
  ModelStore(std::filesystem::path dir, bool eval_only,
             std::function<void(const std::string&)> log = {});
  /// <dir>/models/<baseline>-qt<Q_t>-<training SNR tag>-seed<seed>.ckpt
  static std::filesystem::path checkpoint_name(const ExperimentSpec& spec, Baseline b, int q_t,
                                               std::uint64_t seed);
  std::filesystem::path checkpoint_path(const ExperimentSpec& spec, Baseline b, int q_t,
                                        std::uint64_t seed) const;
  const TrainedModel& get(const ExperimentSpec& spec, Baseline b, std::uint64_t seed,
                          std::optional<int> q_t = std::nullopt);

 private:
  std::filesystem::path dir_;
  bool eval_only_;
  std::function<void(const std::string&)> log_;
  std::vector<std::pair<std::string, TrainedModel>> cache_;
};

struct ResultRow {
  std::string baseline;
  double snr_db = 0.0;
  int q_t = 0;
  int q_i = 0;
  double mean_rate = 0.0;
  double std_rate = 0.0;  // over seeds
  int n_samples = 0;
  double seconds = 0.0;
  double monotone_fraction = 1.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  nlohmann::json manifest;

  std::string snr_csv() const;
  std::string q_csv() const;
};

ResultTable sweep_snr(const ExperimentSpec& spec, ModelStore& store);
ResultTable sweep_q(const ExperimentSpec& spec, ModelStore& store);

/// Metrics stream without timing (timing goes to a separate file).
std::string metrics_csv(const std::vector<EpochMetrics>& history);
std::string timing_csv(const std::vector<EpochMetrics>& history);

struct GradcheckSuite {
  std::string name;
  double worst_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst_error <= tolerance; }
};

/// Finite-difference oracle suites over the analytical gradients.
std::vector<GradcheckSuite> run_gradcheck(std::uint64_t seed);

}  // namespace beamsim
