#include "beamsim/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>
#include <thread>

#include "beamsim/rate.hpp"

namespace beamsim {

using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string geometry_name(GeometryKind k) {
  return k == GeometryKind::kSingleCell ? "single-cell" : "spatial-division";
}

GeometryKind parse_geometry(const std::string& s) {
  if (s == "single-cell") return GeometryKind::kSingleCell;
  if (s == "spatial-division") return GeometryKind::kSpatialDivision;
  throw ConfigError("geometry.kind must be single-cell or spatial-division, got '" + s + "'");
}

std::string feedback_name(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::kAdditiveGaussian: return "gaussian";
    case FeedbackMode::kUniformQuantizer: return "quantizer";
    case FeedbackMode::kQuantizerPlusGaussian: return "quantizer+gaussian";
  }
  return "gaussian";
}

FeedbackMode parse_feedback(const std::string& s) {
  if (s == "gaussian") return FeedbackMode::kAdditiveGaussian;
  if (s == "quantizer") return FeedbackMode::kUniformQuantizer;
  if (s == "quantizer+gaussian") return FeedbackMode::kQuantizerPlusGaussian;
  throw ConfigError("feedback.mode must be gaussian, quantizer or quantizer+gaussian, got '" + s +
                    "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("train.optimizer must be sgd or adam, got '" + s + "'");
}

// Reads known keys of one config section and rejects anything else.
class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (root.contains(name)) {
      if (!root.at(name).is_object()) {
        throw ConfigError(std::string("config section '") + name + "' must be an object");
      }
      j_ = &root.at(name);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (j_ == nullptr || !j_->contains(key)) return;
    seen_.insert(key);
    try {
      out = j_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    if (j_ == nullptr || !j_->contains(key)) return;
    seen_.insert(key);
    if (j_->at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    try {
      v = j_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
    out = v;
  }

  void finish() const {
    if (j_ == nullptr) return;
    for (const auto& item : j_->items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("unknown config key '" + name_ + "." + item.key() + "'");
      }
    }
  }

 private:
  std::string name_;
  const json* j_ = nullptr;
  std::set<std::string> seen_;
};

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv_matrix(std::uint64_t h, const CMatrix& m) {
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  h = fnv1a(h, shape, sizeof shape);
  return fnv1a(h, m.data(), sizeof(cd) * static_cast<std::size_t>(m.size()));
}

double emitted_power(const CMatrix& W, const Instance& inst) {
  return inst.hybrid() ? (inst.analog * W).squaredNorm() : W.squaredNorm();
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; results are written by index.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json power_summary(const EvalOutcome& out) {
  const auto [lo, hi] = std::minmax_element(out.final_power.begin(), out.final_power.end());
  return json{{"max_w0_power_error", out.max_w0_power_error},
              {"final_power_min", out.final_power.empty() ? 0.0 : *lo},
              {"final_power_max", out.final_power.empty() ? 0.0 : *hi},
              {"final_power_mean", mean_of(out.final_power)}};
}

}  // namespace

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::kKdEdn: return "kd-edn";
    case Baseline::kUnsupervised: return "unsupervised";
    case Baseline::kSupervised: return "supervised";
    case Baseline::kKdEdnQ0: return "kd-edn-q0";
    case Baseline::kMmse: return "mmse";
  }
  return "kd-edn";
}

Baseline parse_baseline(const std::string& s) {
  for (Baseline b : {Baseline::kKdEdn, Baseline::kUnsupervised, Baseline::kSupervised,
                     Baseline::kKdEdnQ0, Baseline::kMmse}) {
    if (to_string(b) == s) return b;
  }
  throw ConfigError("unknown baseline '" + s +
                    "' (valid: kd-edn, unsupervised, supervised, kd-edn-q0, mmse)");
}

Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::kDesk;
  if (s == "paper") return Scale::kPaper;
  throw ConfigError("unknown scale '" + s + "' (valid: desk, paper)");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"miso-sc", "miso-sd",   "mimo-sc",
                                              "mimo-sd", "hybrid-ff", "hybrid-nf"};
  return names;
}

int ExperimentSpec::bf_rows() const { return hybrid ? hybrid_cfg.N_RF : system.N; }

void ExperimentSpec::validate() const {
  try {
    system.validate();
    geometry.validate(system.K);
    train.validate();
    feedback.validate();
    if (hybrid) hybrid_cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (baselines.empty()) throw ConfigError("experiment needs at least one baseline");
  if (eval_snr_db.empty()) throw ConfigError("evaluation SNR grid is empty");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (test_size < 1) throw ConfigError("test_size must be positive");
  if (q_i_max < 0) throw ConfigError("q_i_max must be nonnegative");
  if (q_t_list.empty()) throw ConfigError("q_t list is empty");
  for (int q : q_t_list) {
    if (q < 0) throw ConfigError("q_t values must be nonnegative");
  }
  if (train_snr_levels < 1 || train_snr_hi < train_snr_lo) {
    throw ConfigError("training SNR mixture needs lo <= hi and at least one level");
  }
  if (nearfield && !hybrid) throw ConfigError("near-field requires hybrid mode");
  if (nearfield) {
    if (system.M != 1) throw ConfigError("near-field presets are MISO (M = 1)");
    if (system.N != hybrid_cfg.antennas()) {
      throw ConfigError("near-field: system.N must equal hybrid.S * hybrid.n_sub");
    }
    if (hybrid_cfg.N_RF != system.K) {
      throw ConfigError("near-field: hybrid.N_RF must equal system.K");
    }
  }
  if (hybrid && hybrid_cfg.N_RF < system.K * system.M) {
    throw ConfigError("hybrid.N_RF must be at least K * M");
  }
}

ExperimentSpec make_preset(const std::string& name, Scale scale) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (valid: " + list + ")");
  }
  ExperimentSpec s;
  s.preset = name;
  s.scale = scale;
  const bool paper = scale == Scale::kPaper;
  const bool mimo = name.rfind("mimo", 0) == 0;
  s.geometry.kind = name.ends_with("-sc") ? GeometryKind::kSingleCell
                                          : GeometryKind::kSpatialDivision;
  s.geometry.phi = kPi / 2.0;
  s.geometry.psi = mimo ? kPi / 4.0 : kPi / 16.0;

  if (paper) {
    s.system.N = 64;
    s.system.K = mimo ? 4 : 16;
    s.system.M = mimo ? 4 : 1;
    s.arch = NetArchitecture{};
    s.arch.d_latent = mimo ? 64 : 32;
    s.train.batch = 128;
    s.train.lr = 1e-4;
    s.train.epochs = 1000;
    s.train.chandec_epochs = 1000;
    s.train.chandec_lr = 1e-4;
  } else {
    s.system.N = 16;
    s.system.K = 4;
    s.system.M = mimo ? 2 : 1;
    s.arch.encoder_hidden = {128, 64};
    s.arch.beamdec_hidden = {256, 256};
    s.arch.chandec_hidden = {64, 128};
    s.arch.d_latent = 16;
    s.train.batch = 64;
    s.train.lr = 1e-3;
    s.train.epochs = 300;
    s.train.chandec_epochs = 300;
    s.train.chandec_lr = 1e-3;
  }

  if (name == "hybrid-ff" || name == "hybrid-nf") {
    s.hybrid = true;
    s.nearfield = name == "hybrid-nf";
    s.system.M = 1;
    s.system.N = 64;
    s.system.K = paper ? 16 : 4;
    s.hybrid_cfg.N_RF = s.system.K;
    s.hybrid_cfg.S = 16;
    s.hybrid_cfg.n_sub = 4;
    s.hybrid_cfg.lambda = 3e-3;
    s.hybrid_cfg.r_c = 3.0;
    s.hybrid_cfg.sigma_r = 1.0;
    if (!paper && !s.nearfield) s.system.N = 16;
  }

  s.train.q_t = 5;
  s.train.q_i = 10;
  s.train.eta_ga = 1e-3;
  s.train.sigma2_h = 0.1;
  s.feedback.mode = FeedbackMode::kAdditiveGaussian;
  s.feedback.sigma2_z = 0.1;
  s.q_t_list = {0, 5, 10};
  s.q_i_max = 10;
  return s;
}

void apply_config(ExperimentSpec& spec, const json& config) {
  if (!config.is_object()) throw ConfigError("config root must be a JSON object");
  static const std::set<std::string> sections{"system", "geometry", "hybrid",
                                              "train",  "feedback", "eval"};
  for (const auto& item : config.items()) {
    if (!sections.count(item.key())) {
      throw ConfigError("unknown config section '" + item.key() +
                        "' (valid: system, geometry, hybrid, train, feedback, eval)");
    }
  }
  {
    Section s(config, "system");
    s.get("N", spec.system.N);
    s.get("M", spec.system.M);
    s.get("K", spec.system.K);
    s.get("P", spec.system.P);
    s.get("d_over_lambda", spec.system.d_over_lambda);
    s.finish();
  }
  {
    Section s(config, "geometry");
    std::string kind = geometry_name(spec.geometry.kind);
    s.get("kind", kind);
    spec.geometry.kind = parse_geometry(kind);
    s.get("phi", spec.geometry.phi);
    s.get("psi", spec.geometry.psi);
    s.get("L", spec.paths.L);
    s.get("sigma_aod", spec.paths.sigma_aod);
    s.get("sigma_aoa", spec.paths.sigma_aoa);
    s.finish();
  }
  {
    Section s(config, "hybrid");
    s.get("enabled", spec.hybrid);
    s.get("nearfield", spec.nearfield);
    s.get("N_RF", spec.hybrid_cfg.N_RF);
    s.get("S", spec.hybrid_cfg.S);
    s.get("n_sub", spec.hybrid_cfg.n_sub);
    s.get("lambda", spec.hybrid_cfg.lambda);
    s.get("d", spec.hybrid_cfg.d);
    s.get("r_c", spec.hybrid_cfg.r_c);
    s.get("sigma_r", spec.hybrid_cfg.sigma_r);
    s.get("r_min", spec.hybrid_cfg.r_min);
    s.finish();
  }
  {
    Section s(config, "train");
    auto& t = spec.train;
    s.get("batch", t.batch);
    s.get("lr", t.lr);
    s.get("n_en", t.n_en);
    s.get("n_de", t.n_de);
    s.get("q_t", t.q_t);
    s.get("q_i", t.q_i);
    s.get("eta_ga", t.eta_ga);
    s.get("alpha_step", t.alpha_step);
    s.get("alpha_every", t.alpha_every);
    s.get_optional("fixed_alpha", t.fixed_alpha);
    s.get("epochs", t.epochs);
    s.get("sigma2_h", t.sigma2_h);
    std::string opt = t.optimizer == OptimizerKind::kAdam ? "adam" : "sgd";
    s.get("optimizer", opt);
    t.optimizer = parse_optimizer(opt);
    s.get("chandec_epochs", t.chandec_epochs);
    s.get("chandec_steps", t.chandec_steps);
    s.get("chandec_lr", t.chandec_lr);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("snr_lo_db", spec.train_snr_lo);
    s.get("snr_hi_db", spec.train_snr_hi);
    s.get("snr_levels", spec.train_snr_levels);
    s.get("d_latent", spec.arch.d_latent);
    s.get("encoder_hidden", spec.arch.encoder_hidden);
    s.get("beamdec_hidden", spec.arch.beamdec_hidden);
    s.get("chandec_hidden", spec.arch.chandec_hidden);
    s.get("dropout", spec.arch.dropout);
    s.get("leaky_slope", spec.arch.leaky_slope);
    s.finish();
  }
  {
    Section s(config, "feedback");
    std::string mode = feedback_name(spec.feedback.mode);
    s.get("mode", mode);
    spec.feedback.mode = parse_feedback(mode);
    s.get("sigma2_z", spec.feedback.sigma2_z);
    s.get("bits", spec.feedback.bits);
    s.get("complex_split", spec.feedback.complex_split);
    s.finish();
  }
  {
    Section s(config, "eval");
    s.get("snr_db", spec.eval_snr_db);
    s.get("test_size", spec.test_size);
    s.get("seeds", spec.seeds);
    std::vector<std::string> names;
    for (Baseline b : spec.baselines) names.push_back(to_string(b));
    s.get("baselines", names);
    spec.baselines.clear();
    for (const auto& n : names) spec.baselines.push_back(parse_baseline(n));
    s.get("q_t_list", spec.q_t_list);
    s.get("q_i_max", spec.q_i_max);
    s.get("sweep_q_snr_db", spec.sweep_q_snr_db);
    s.get("sweep_q_fixed_snr", spec.sweep_q_fixed_snr);
    s.get("threads", spec.threads);
    s.finish();
  }
  spec.validate();
}

json spec_to_json(const ExperimentSpec& spec) {
  json j;
  j["preset"] = spec.preset;
  j["scale"] = spec.scale == Scale::kDesk ? "desk" : "paper";
  j["system"] = {{"N", spec.system.N},
                 {"M", spec.system.M},
                 {"K", spec.system.K},
                 {"P", spec.system.P},
                 {"d_over_lambda", spec.system.d_over_lambda}};
  j["geometry"] = {{"kind", geometry_name(spec.geometry.kind)},
                   {"phi", spec.geometry.phi},
                   {"psi", spec.geometry.psi},
                   {"L", spec.paths.L},
                   {"sigma_aod", spec.paths.sigma_aod},
                   {"sigma_aoa", spec.paths.sigma_aoa}};
  j["hybrid"] = {{"enabled", spec.hybrid},
                 {"nearfield", spec.nearfield},
                 {"N_RF", spec.hybrid_cfg.N_RF},
                 {"S", spec.hybrid_cfg.S},
                 {"n_sub", spec.hybrid_cfg.n_sub},
                 {"lambda", spec.hybrid_cfg.lambda},
                 {"d", spec.hybrid_cfg.d},
                 {"r_c", spec.hybrid_cfg.r_c},
                 {"sigma_r", spec.hybrid_cfg.sigma_r},
                 {"r_min", spec.hybrid_cfg.r_min}};
  const auto& t = spec.train;
  j["train"] = {{"batch", t.batch},
                {"lr", t.lr},
                {"n_en", t.n_en},
                {"n_de", t.n_de},
                {"q_t", t.q_t},
                {"q_i", t.q_i},
                {"eta_ga", t.eta_ga},
                {"alpha_step", t.alpha_step},
                {"alpha_every", t.alpha_every},
                {"fixed_alpha", t.fixed_alpha ? json(*t.fixed_alpha) : json(nullptr)},
                {"epochs", t.epochs},
                {"sigma2_h", t.sigma2_h},
                {"optimizer", t.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
                {"chandec_epochs", t.chandec_epochs},
                {"chandec_steps", t.chandec_steps},
                {"chandec_lr", t.chandec_lr},
                {"checkpoint_every", t.checkpoint_every},
                {"snr_lo_db", spec.train_snr_lo},
                {"snr_hi_db", spec.train_snr_hi},
                {"snr_levels", spec.train_snr_levels},
                {"d_latent", spec.arch.d_latent},
                {"encoder_hidden", spec.arch.encoder_hidden},
                {"beamdec_hidden", spec.arch.beamdec_hidden},
                {"chandec_hidden", spec.arch.chandec_hidden},
                {"dropout", spec.arch.dropout},
                {"leaky_slope", spec.arch.leaky_slope}};
  j["feedback"] = {{"mode", feedback_name(spec.feedback.mode)},
                   {"sigma2_z", spec.feedback.sigma2_z},
                   {"bits", spec.feedback.bits},
                   {"complex_split", spec.feedback.complex_split}};
  std::vector<std::string> names;
  for (Baseline b : spec.baselines) names.push_back(to_string(b));
  j["eval"] = {{"snr_db", spec.eval_snr_db},   {"test_size", spec.test_size},
               {"seeds", spec.seeds},          {"baselines", names},
               {"q_t_list", spec.q_t_list},    {"q_i_max", spec.q_i_max},
               {"sweep_q_snr_db", spec.sweep_q_snr_db}, {"sweep_q_fixed_snr", spec.sweep_q_fixed_snr},
               {"threads", spec.threads}};
  return j;
}

int resolve_threads(int requested) {
  int n = requested > 0 ? requested
                        : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("BEAMSIM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(1, n);
}

CMatrix farfield_analog(const ExperimentSpec& spec) {
  if (!spec.hybrid || spec.nearfield) return {};
  return analog_farfield(spec.geometry, spec.system.N, spec.hybrid_cfg.N_RF, spec.system.K,
                         spec.system.M, spec.system.d_over_lambda);
}

InstanceSource make_source(const ExperimentSpec& spec, std::optional<double> sigma2) {
  spec.validate();
  const NoiseVarianceSet mix =
      make_snr_mixture(spec.train_snr_lo, spec.train_snr_hi, spec.train_snr_levels);
  auto noise = [mix, sigma2](Rng& rng) { return sigma2 ? *sigma2 : mix.draw(rng); };
  const double s2h = spec.train.sigma2_h;
  if (!spec.hybrid) {
    return [spec, noise, s2h](Rng& rng) {
      const double s2 = noise(rng);
      return Instance{draw_farfield_sample(spec.system, spec.geometry, spec.paths, s2, s2h, rng),
                      CMatrix{}};
    };
  }
  if (spec.nearfield) {
    return [spec, noise, s2h](Rng& rng) {
      const double s2 = noise(rng);
      HybridDraw d = draw_hybrid_nearfield(spec.system, spec.geometry, spec.hybrid_cfg, s2, s2h, rng);
      return Instance{std::move(d.sample), std::move(d.analog)};
    };
  }
  const CMatrix Wa = farfield_analog(spec);
  return [spec, noise, s2h, Wa](Rng& rng) {
    const double s2 = noise(rng);
    HybridDraw d = draw_hybrid_farfield(spec.system, spec.geometry, spec.paths, Wa, s2, s2h, rng);
    return Instance{std::move(d.sample), std::move(d.analog)};
  };
}

std::vector<Instance> make_test_set(const ExperimentSpec& spec, double snr_db, std::uint64_t seed) {
  const InstanceSource source = make_source(spec, snr_db_to_sigma2(snr_db));
  const std::uint64_t base =
      derive_seed(derive_seed(seed, 0x7e57), static_cast<std::uint64_t>(std::llround(snr_db * 1000.0)));
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(spec.test_size));
  for (int i = 0; i < spec.test_size; ++i) {
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
    out.push_back(source(rng));
  }
  return out;
}

std::string test_set_hash(const std::vector<Instance>& set) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& inst : set) {
    const auto& s = inst.sample;
    for (int k = 0; k < s.K(); ++k) {
      h = fnv_matrix(h, s.H[k]);
      h = fnv_matrix(h, s.delta_H[k]);
      h = fnv1a(h, &s.sigma2[static_cast<std::size_t>(k)], sizeof(double));
    }
    h = fnv_matrix(h, inst.analog);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig baseline_train_config(const ExperimentSpec& spec, Baseline b, std::uint64_t seed) {
  TrainConfig cfg = spec.train;
  cfg.seed = seed;
  switch (b) {
    case Baseline::kKdEdn:
      break;
    case Baseline::kUnsupervised:
      cfg.fixed_alpha = 1.0;
      break;
    case Baseline::kSupervised:
      cfg.fixed_alpha = 0.0;
      break;
    case Baseline::kKdEdnQ0:
      cfg.q_t = 0;
      cfg.q_i = 0;
      break;
    case Baseline::kMmse:
      throw InvalidArgument("the mmse baseline is not trained");
  }
  return cfg;
}

int baseline_q_i(const ExperimentSpec& spec, Baseline b) {
  return b == Baseline::kKdEdnQ0 ? 0 : spec.train.q_i;
}

std::vector<double> EvalOutcome::at(int q) const {
  std::vector<double> v;
  v.reserve(rates.size());
  for (const auto& r : rates) v.push_back(r.at(static_cast<std::size_t>(q)));
  return v;
}

double EvalOutcome::mean_at(int q) const { return mean_of(at(q)); }

double EvalOutcome::monotone_fraction() const {
  if (rates.empty()) return 1.0;
  int ok = 0;
  for (const auto& r : rates) {
    bool mono = true;
    for (std::size_t q = 1; q < r.size(); ++q) mono = mono && r[q] >= r[q - 1];
    ok += mono ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(rates.size());
}

EvalOutcome evaluate_model(const EdnNetworks& nets, const CheckpointMeta& meta,
                           const std::vector<Instance>& test, const FeedbackChannelModel& feedback,
                           int q_i, double eta_ga, double P, std::uint64_t seed, int threads) {
  require_trained(meta, q_i);
  const int n = static_cast<int>(test.size());
  EvalOutcome out;
  out.rates.assign(static_cast<std::size_t>(n), {});
  out.final_power.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> w0_err(static_cast<std::size_t>(n), 0.0);
  parallel_for(n, threads, [&](int i) {
    const auto& inst = test[static_cast<std::size_t>(i)];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const InferenceResult r = infer_beamformer(nets, inst, feedback, q_i, eta_ga, P, rng);
    auto& row = out.rates[static_cast<std::size_t>(i)];
    for (const auto& W : r.trace.iterates) {
      const double R = sum_rate(inst.sample.H, W);
      if (!std::isfinite(R)) throw NumericFailure("non-finite sum rate during evaluation");
      row.push_back(R);
    }
    w0_err[static_cast<std::size_t>(i)] = std::abs(emitted_power(r.W0, inst) - P);
    out.final_power[static_cast<std::size_t>(i)] = emitted_power(r.trace.final(), inst);
  });
  for (double e : w0_err) out.max_w0_power_error = std::max(out.max_w0_power_error, e);
  return out;
}

EvalOutcome run_baseline_mmse(const std::vector<Instance>& test, int q_i, double eta_ga, double P,
                              int threads) {
  const int n = static_cast<int>(test.size());
  EvalOutcome out;
  out.rates.assign(static_cast<std::size_t>(n), {});
  out.final_power.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> w0_err(static_cast<std::size_t>(n), 0.0);
  parallel_for(n, threads, [&](int i) {
    const auto& inst = test[static_cast<std::size_t>(i)];
    const auto& Ht = inst.sample.H_tilde;
    const CMatrix W0 = inst.hybrid() ? hybrid_mmse(Ht, inst.analog, P) : mmse_beamformer(Ht, P);
    const RefinementTrace trace = refine(W0, Ht, eta_ga, q_i);
    auto& row = out.rates[static_cast<std::size_t>(i)];
    for (const auto& W : trace.iterates) row.push_back(sum_rate(inst.sample.H, W));
    w0_err[static_cast<std::size_t>(i)] = std::abs(emitted_power(W0, inst) - P);
    out.final_power[static_cast<std::size_t>(i)] = emitted_power(trace.final(), inst);
  });
  for (double e : w0_err) out.max_w0_power_error = std::max(out.max_w0_power_error, e);
  return out;
}

ModelStore::ModelStore(std::filesystem::path dir, bool eval_only,
                       std::function<void(const std::string&)> log)
    : dir_(std::move(dir)), eval_only_(eval_only), log_(std::move(log)) {}

std::filesystem::path ModelStore::checkpoint_name(const ExperimentSpec& spec, Baseline b, int q_t,
                                                  std::uint64_t seed) {
  auto db = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return std::string(buf);
  };
  std::string snr = "snr" + db(spec.train_snr_lo);
  if (spec.train_snr_levels > 1 && spec.train_snr_hi > spec.train_snr_lo) {
    snr += "to" + db(spec.train_snr_hi) + "x" + std::to_string(spec.train_snr_levels);
  }
  return to_string(b) + "-qt" + std::to_string(q_t) + "-" + snr + "-seed" + std::to_string(seed) +
         ".ckpt";
}

std::filesystem::path ModelStore::checkpoint_path(const ExperimentSpec& spec, Baseline b, int q_t,
                                                  std::uint64_t seed) const {
  return dir_ / "models" / checkpoint_name(spec, b, q_t, seed);
}

const TrainedModel& ModelStore::get(const ExperimentSpec& spec, Baseline b, std::uint64_t seed,
                                    std::optional<int> q_t) {
  TrainConfig cfg = baseline_train_config(spec, b, seed);
  if (q_t && b != Baseline::kKdEdnQ0) cfg.q_t = *q_t;
  const auto path = checkpoint_path(spec, b, cfg.q_t, seed);
  const std::string key = path.string();
  for (const auto& [k, m] : cache_) {
    if (k == key) return m;
  }
  TrainedModel model;
  if (std::filesystem::exists(path)) {
    model.nets = make_networks(spec.system.K, spec.system.M, spec.channel_cols(), spec.arch,
                               derive_seed(seed, 1));
    model.meta = read_checkpoint(path, model.nets);
    if (log_) log_("loaded " + key);
  } else if (eval_only_) {
    throw ConfigError("missing checkpoint: expected " + key);
  } else {
    if (log_) log_("training " + to_string(b) + " (Q_t=" + std::to_string(cfg.q_t) + ", seed " +
                   std::to_string(seed) + ")");
    model = run_algorithm1(cfg, spec.arch, spec.system.K, spec.system.M, spec.channel_cols(),
                           spec.system.P, make_source(spec), spec.feedback);
    std::filesystem::create_directories(path.parent_path());
    write_checkpoint(path, model.nets, model.meta);
  }
  cache_.emplace_back(key, std::move(model));
  return cache_.back().second;
}

std::string ResultTable::snr_csv() const {
  std::ostringstream os;
  os << "baseline,snr_db,mean_rate,std_rate,n_samples,seconds\n";
  for (const auto& r : rows) {
    os << r.baseline << ',' << fmt(r.snr_db) << ',' << fmt(r.mean_rate) << ',' << fmt(r.std_rate)
       << ',' << r.n_samples << ',' << fmt_short(r.seconds) << '\n';
  }
  return os.str();
}

std::string ResultTable::q_csv() const {
  std::ostringstream os;
  os << "baseline,snr_db,q_t,q_i,mean_rate,std_rate,n_samples,seconds,monotone_fraction\n";
  for (const auto& r : rows) {
    os << r.baseline << ',' << fmt(r.snr_db) << ',' << r.q_t << ',' << r.q_i << ','
       << fmt(r.mean_rate) << ',' << fmt(r.std_rate) << ',' << r.n_samples << ','
       << fmt_short(r.seconds) << ',' << fmt(r.monotone_fraction) << '\n';
  }
  return os.str();
}

namespace {

json base_manifest(const ExperimentSpec& spec, const char* kind) {
  return json{{"kind", kind},
              {"tool", "beamsim"},
              {"version", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"spec", spec_to_json(spec)},
              {"seeds", spec.seeds},
              {"test_sets", json::array()},
              {"power_audit", json::array()}};
}

EvalOutcome evaluate_baseline(const ExperimentSpec& spec, ModelStore& store, Baseline b,
                              std::uint64_t seed, const std::vector<Instance>& test, int q_i,
                              std::optional<int> q_t, int threads) {
  if (b == Baseline::kMmse) {
    return run_baseline_mmse(test, q_i, spec.train.eta_ga, spec.system.P, threads);
  }
  const TrainedModel& m = store.get(spec, b, seed, q_t);
  return evaluate_model(m.nets, m.meta, test, spec.feedback, q_i, spec.train.eta_ga,
                        spec.system.P, derive_seed(seed, 0xe7a1), threads);
}

}  // namespace

ResultTable sweep_snr(const ExperimentSpec& spec, ModelStore& store) {
  spec.validate();
  const int threads = resolve_threads(spec.threads);
  ResultTable table;
  table.manifest = base_manifest(spec, "sweep-snr");
  // Train (or load) every model before any timed evaluation.
  for (Baseline b : spec.baselines) {
    if (b == Baseline::kMmse) continue;
    for (auto seed : spec.seeds) store.get(spec, b, seed);
  }
  std::vector<std::vector<std::vector<Instance>>> sets;  // [seed][snr]
  for (auto seed : spec.seeds) {
    auto& per_seed = sets.emplace_back();
    for (double snr : spec.eval_snr_db) {
      per_seed.push_back(make_test_set(spec, snr, seed));
      table.manifest["test_sets"].push_back(
          {{"seed", seed}, {"snr_db", snr}, {"size", spec.test_size},
           {"hash", test_set_hash(per_seed.back())}});
    }
  }
  for (Baseline b : spec.baselines) {
    const int q_i = b == Baseline::kMmse ? spec.train.q_i : baseline_q_i(spec, b);
    for (std::size_t si = 0; si < spec.eval_snr_db.size(); ++si) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<double> means;
      for (std::size_t k = 0; k < spec.seeds.size(); ++k) {
        const EvalOutcome out =
            evaluate_baseline(spec, store, b, spec.seeds[k], sets[k][si], q_i, std::nullopt, threads);
        means.push_back(out.mean_at(q_i));
        json audit = power_summary(out);
        audit["baseline"] = to_string(b);
        audit["seed"] = spec.seeds[k];
        audit["snr_db"] = spec.eval_snr_db[si];
        audit["q_i"] = q_i;
        table.manifest["power_audit"].push_back(audit);
      }
      ResultRow row;
      row.baseline = to_string(b);
      row.snr_db = spec.eval_snr_db[si];
      row.q_t = b == Baseline::kMmse ? 0 : baseline_train_config(spec, b, 0).q_t;
      row.q_i = q_i;
      row.mean_rate = mean_of(means);
      row.std_rate = std_of(means);
      row.n_samples = spec.test_size;
      row.seconds = seconds_since(t0);
      table.rows.push_back(row);
    }
  }
  return table;
}

ResultTable sweep_q(const ExperimentSpec& spec_in, ModelStore& store) {
  spec_in.validate();
  ExperimentSpec spec = spec_in;
  if (spec.sweep_q_fixed_snr) {
    spec.train_snr_lo = spec.train_snr_hi = spec.sweep_q_snr_db;
    spec.train_snr_levels = 1;
  }
  const int threads = resolve_threads(spec.threads);
  ResultTable table;
  table.manifest = base_manifest(spec, "sweep-q");
  table.manifest["snr_db"] = spec.sweep_q_snr_db;
  for (int q_t : spec.q_t_list) {
    for (auto seed : spec.seeds) store.get(spec, Baseline::kKdEdn, seed, q_t);
  }
  std::vector<std::vector<Instance>> sets;
  for (auto seed : spec.seeds) {
    sets.push_back(make_test_set(spec, spec.sweep_q_snr_db, seed));
    table.manifest["test_sets"].push_back({{"seed", seed},
                                           {"snr_db", spec.sweep_q_snr_db},
                                           {"size", spec.test_size},
                                           {"hash", test_set_hash(sets.back())}});
  }
  struct Curve {
    Baseline b;
    int q_t;
  };
  std::vector<Curve> curves;
  for (int q_t : spec.q_t_list) curves.push_back({Baseline::kKdEdn, q_t});
  curves.push_back({Baseline::kMmse, 0});
  for (const Curve& c : curves) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<EvalOutcome> outs;
    for (std::size_t k = 0; k < spec.seeds.size(); ++k) {
      outs.push_back(evaluate_baseline(spec, store, c.b, spec.seeds[k], sets[k], spec.q_i_max,
                                       c.q_t, threads));
      json audit = power_summary(outs.back());
      audit["baseline"] = to_string(c.b);
      audit["q_t"] = c.q_t;
      audit["seed"] = spec.seeds[k];
      audit["q_i"] = spec.q_i_max;
      table.manifest["power_audit"].push_back(audit);
    }
    const double secs = seconds_since(t0);
    std::vector<double> mono;
    for (const auto& o : outs) mono.push_back(o.monotone_fraction());
    for (int q = 0; q <= spec.q_i_max; ++q) {
      std::vector<double> means;
      for (const auto& o : outs) means.push_back(o.mean_at(q));
      ResultRow row;
      row.baseline = to_string(c.b);
      row.snr_db = spec.sweep_q_snr_db;
      row.q_t = c.q_t;
      row.q_i = q;
      row.mean_rate = mean_of(means);
      row.std_rate = std_of(means);
      row.n_samples = spec.test_size;
      row.seconds = secs;
      row.monotone_fraction = mean_of(mono);
      table.rows.push_back(row);
    }
  }
  return table;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,alpha,mean_unsup_loss,mean_sup_loss,mean_sum_rate\n";
  for (const auto& m : history) {
    os << m.epoch << ',' << fmt(m.alpha) << ',' << fmt(m.unsup_loss) << ',' << fmt(m.sup_loss)
       << ',' << fmt(m.sum_rate) << '\n';
  }
  return os.str();
}

std::string timing_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,seconds\n";
  for (const auto& m : history) os << m.epoch << ',' << fmt_short(m.seconds) << '\n';
  return os.str();
}

namespace {

std::vector<CMatrix> random_blocks(int K, int M, int N, Rng& rng) {
  std::vector<CMatrix> H;
  for (int k = 0; k < K; ++k) H.push_back(complex_gaussian_matrix(M, N, 1.0, rng));
  return H;
}

GradcheckSuite rate_suite(const char* name, int M, Rng& rng) {
  GradcheckSuite s{name, 0.0, 1e-6};
  for (int i = 0; i < 20; ++i) {
    const int N = 2 + static_cast<int>(rng.uniform(0, 7));
    const int K = 1 + static_cast<int>(rng.uniform(0, 3));
    const auto H = random_blocks(K, M, N, rng);
    const CMatrix W = complex_gaussian_matrix(N, K * M, 1.0 / (K * M), rng);
    const CMatrix fd = wirtinger_fd_oracle([&](const CMatrix& x) { return sum_rate(H, x); }, W);
    s.worst_error = std::max(s.worst_error, relative_error(grad_sum_rate(H, W), fd));
  }
  return s;
}

}  // namespace

std::vector<GradcheckSuite> run_gradcheck(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradcheckSuite> out;
  out.push_back(rate_suite("sum-rate gradient (MISO)", 1, rng));
  out.push_back(rate_suite("sum-rate gradient (MIMO)", 2, rng));

  // Unrolled ascent: reverse accumulation against finite differences and the dense Jacobian.
  GradcheckSuite unrolled{"unrolled pullback vs finite differences", 0.0, 1e-5};
  GradcheckSuite dense{"unrolled pullback, dense vs reverse", 0.0, 1e-8};
  for (int M : {1, 2}) {
    for (int Q : {1, 3}) {
      const auto H = random_blocks(2, M, 4, rng);
      const CMatrix W0 = complex_gaussian_matrix(4, 2 * M, 0.25, rng);
      const CMatrix T = complex_gaussian_matrix(4, 2 * M, 0.25, rng);
      const double eta = 0.05;
      auto loss = [&](const CMatrix& W) { return 0.5 * (-sum_rate(H, W)) + 0.5 * (T - W).squaredNorm(); };
      const RefinementTrace tr = refine(W0, H, eta, Q);
      const CMatrix WQ = tr.final();
      const CMatrix g = -0.5 * grad_sum_rate(H, WQ) + (WQ - T);
      const CMatrix rev = unrolled_pullback(H, tr, g);
      const CMatrix fd = wirtinger_fd_oracle(
          [&](const CMatrix& w) { return loss(refine(w, H, eta, Q).final()); }, W0);
      unrolled.worst_error = std::max(unrolled.worst_error, relative_error(rev, fd));
      dense.worst_error =
          std::max(dense.worst_error, relative_error(unrolled_pullback_dense(H, tr, g), rev));
    }
  }
  out.push_back(unrolled);
  out.push_back(dense);

  // Network backward passes (dropout off, batchnorm in train mode).
  GradcheckSuite nets{"network backward vs finite differences", 0.0, 1e-6};
  NetArchitecture arch;
  arch.encoder_hidden = {6, 5};
  arch.beamdec_hidden = {7, 6};
  arch.chandec_hidden = {5, 6};
  arch.d_latent = 3;
  arch.dropout = 0.0;
  EdnNetworks en = make_networks(2, 1, 3, arch, derive_seed(seed, 11));
  for (Mlp* net : {&en.encoder, &en.beamdec, &en.chandec}) {
    const int in = net->spec().layers.front().in;
    const int outd = net->spec().layers.back().out;
    RMatrix x(in, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal(0.0, 1.0);
    RMatrix up(outd, 4);
    for (Eigen::Index i = 0; i < up.size(); ++i) up(i) = rng.normal(0.0, 1.0);
    net->forward(x, Mode::kTrain, &rng);
    MlpGrads g = net->zero_grads();
    net->backward(up, g);
    const RVector flat = net->flat_parameters();
    auto f = [&](const RVector& p) {
      net->set_flat_parameters(p);
      return (net->replay(x).array() * up.array()).sum();
    };
    const RVector fd = fd_gradient(f, flat);
    net->set_flat_parameters(flat);
    nets.worst_error = std::max(nets.worst_error, relative_error(net->flatten(g), fd));
  }
  out.push_back(nets);

  // Power normalization layer, digital and hybrid.
  GradcheckSuite norm{"power normalization backward", 0.0, 1e-6};
  for (bool hybrid : {false, true}) {
    const CMatrix A = complex_gaussian_matrix(6, 3, 1.0, rng);
    const CMatrix* a = hybrid ? &A : nullptr;
    RVector raw(2 * 3 * 2);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw(i) = rng.normal(0.0, 1.0);
    RVector up(raw.size());
    for (Eigen::Index i = 0; i < up.size(); ++i) up(i) = rng.normal(0.0, 1.0);
    const RVector an = normalize_power_backward(raw, up, 1.0, 3, 2, a);
    const RVector fd =
        fd_gradient([&](const RVector& r) { return normalize_power(r, 1.0, 3, 2, a).dot(up); }, raw);
    norm.worst_error = std::max(norm.worst_error, relative_error(an, fd));
  }
  out.push_back(norm);

  // End-to-end KD loss with respect to W_0 and sampled decoder weights.
  GradcheckSuite e2e{"KD loss through the unrolled decoder", 0.0, 1e-5};
  NetArchitecture small;
  small.encoder_hidden = {8};
  small.beamdec_hidden = {8};
  small.chandec_hidden = {8};
  small.d_latent = 4;
  small.dropout = 0.2;
  for (double alpha : {0.0, 0.5, 1.0}) {
    for (int q_t : {0, 1, 3}) {
      EdnNetworks n = make_networks(2, 1, 4, small, derive_seed(seed, 21));
      std::vector<Instance> batch;
      std::vector<CMatrix> teachers;
      for (int b = 0; b < 2; ++b) {
        auto H = random_blocks(2, 1, 4, rng);
        std::vector<CMatrix> dH;
        for (int k = 0; k < 2; ++k) dH.push_back(complex_gaussian_matrix(1, 4, 0.1, rng));
        Instance inst{assemble_sample(H, {1.0, 1.0}, dH), CMatrix{}};
        teachers.push_back(teacher_beamformer(inst, 1.0));
        batch.push_back(std::move(inst));
      }
      FeedbackChannelModel fb;
      fb.sigma2_z = 0.1;
      const double eta = 0.1;
      PipelineState st = forward_pipeline(batch, teachers, n, fb, q_t, eta, 1.0, rng);
      const PipelineGrads g = backward_pipeline(st, n, alpha);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& H = st.batch[b].sample.H;
        const CMatrix& T = st.teachers[b];
        auto f = [&](const CMatrix& W0) {
          const CMatrix W = refine(W0, H, eta, q_t).final();
          return kd_loss(alpha, sum_rate(H, W), (T - W).squaredNorm()) / 2.0;
        };
        e2e.worst_error = std::max(
            e2e.worst_error, relative_error(g.grad_W0[b], wirtinger_fd_oracle(f, st.traces[b].initial())));
      }
      auto loss = [&] {
        RMatrix X(8, 4);
        for (int b = 0; b < 2; ++b)
          for (int k = 0; k < 2; ++k) X.col(b * 2 + k) = realify(st.batch[b].sample.H_tilde[k]);
        const RMatrix zh = n.encoder.infer(X) + st.dz;
        RMatrix zin(8, 2);
        for (int b = 0; b < 2; ++b)
          for (int k = 0; k < 2; ++k) zin.col(b).segment(k * 4, 4) = zh.col(b * 2 + k);
        const RMatrix raw = n.beamdec.replay(zin);
        double total = 0.0;
        for (int b = 0; b < 2; ++b) {
          const CMatrix W0 = complexify(raw.col(b) / raw.col(b).norm(), 4, 2);
          const auto& H = st.batch[b].sample.H;
          const CMatrix W = refine(W0, H, eta, q_t).final();
          total += kd_loss(alpha, sum_rate(H, W), (st.teachers[b] - W).squaredNorm());
        }
        return total / 2.0;
      };
      const RVector flat = n.beamdec.flat_parameters();
      const RVector fd = fd_gradient(
          [&](const RVector& p) {
            n.beamdec.set_flat_parameters(p);
            const double v = loss();
            n.beamdec.set_flat_parameters(flat);
            return v;
          },
          flat);
      e2e.worst_error = std::max(e2e.worst_error, relative_error(n.beamdec.flatten(g.beamdec), fd));
    }
  }
  out.push_back(e2e);
  return out;
}

}  // namespace beamsim
