#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "beamsim/numerics.hpp"

namespace beamsim {

enum class Activation { kIdentity, kLeakyRelu, kTanh };

// Linear -> [batchnorm] -> activation -> [dropout]
struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation activation = Activation::kIdentity;
  double dropout = 0.0;
  bool batchnorm = false;
};

struct MlpSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  double leaky_slope = 0.01;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  int input_dim() const { return layers.front().in; }
  int output_dim() const { return layers.back().out; }
  /// Canonical architecture string stored in checkpoints.
  std::string descriptor() const;
};

struct DenseLayer {
  RMatrix weight;  // out x in
  RVector bias;
  // Batchnorm affine parameters and running statistics (empty when disabled).
  RVector gamma;
  RVector beta;
  RVector running_mean;
  RVector running_var;
};

enum class Mode { kTrain, kEval };

struct MlpGrads {
  std::vector<RMatrix> weight;
  std::vector<RVector> bias;
  std::vector<RVector> gamma;
  std::vector<RVector> beta;

  void set_zero();
  void scale(double s);
  void add(const MlpGrads& other);
  double squared_norm() const;
};

/// Fully-connected network operating on batches stored column-wise
/// (one sample per column).
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::uint64_t seed);

  const MlpSpec& spec() const { return spec_; }
  std::uint64_t init_seed() const { return seed_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Forward pass that records what backward() needs. In training mode dropout
  /// masks are drawn from rng and batchnorm uses batch statistics (and updates
  /// the running ones).
  RMatrix forward(const RMatrix& x, Mode mode, Rng* rng = nullptr);

  /// Inference forward: no dropout, running batchnorm statistics, no side effects.
  RMatrix infer(const RMatrix& x) const;

  /// Re-evaluates the last recorded forward at new input/parameters with the same
  /// dropout masks and batchnorm mode, without touching running statistics.
  RMatrix replay(const RMatrix& x) const;

  /// Accumulates parameter gradients for the recorded forward into grads and
  /// returns the gradient with respect to the input batch.
  RMatrix backward(const RMatrix& upstream, MlpGrads& grads) const;

  bool has_tape() const { return tape_.has_value(); }
  void clear_tape() { tape_.reset(); }

  MlpGrads zero_grads() const;
  std::size_t parameter_count() const;
  RVector flat_parameters() const;
  void set_flat_parameters(const RVector& flat);
  RVector flatten(const MlpGrads& grads) const;

 private:
  struct LayerTape {
    RMatrix input;
    RMatrix xhat;      // normalized pre-activation (batchnorm only)
    RVector inv_std;   // batchnorm only
    RMatrix pre_act;   // input to the activation
    RMatrix post_act;  // output of the activation, before dropout
    RMatrix mask;      // inverted-dropout mask (empty when unused)
    RVector batch_mean;
    RVector batch_var;  // biased
  };
  struct Tape {
    Mode mode = Mode::kEval;
    std::vector<LayerTape> layers;
  };

  RMatrix run(const RMatrix& x, Mode mode, Rng* rng, const Tape* masks, Tape* record) const;

  MlpSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<DenseLayer> layers_;
  std::optional<Tape> tape_;
};

/// Layer widths for the three subnetworks. Hidden widths are configuration.
struct NetArchitecture {
  std::vector<int> encoder_hidden{512, 256};
  std::vector<int> beamdec_hidden{1024, 1024};
  std::vector<int> chandec_hidden{256, 512};
  int d_latent = 32;
  double leaky_slope = 0.01;
  double dropout = 0.2;
};

MlpSpec encoder_spec(int input_dim, const NetArchitecture& arch);
MlpSpec beamdec_spec(int input_dim, int output_dim, const NetArchitecture& arch);
MlpSpec chandec_spec(int output_dim, const NetArchitecture& arch);

struct EdnNetworks {
  Mlp encoder;
  Mlp beamdec;
  Mlp chandec;
};

/// Builds encoder (2*M*cols -> d), beamformer decoder (K*d -> 2*cols*K*M) and
/// channel decoder (d -> 2*M*cols) for per-user blocks of M x cols.
EdnNetworks make_networks(int K, int M, int cols, const NetArchitecture& arch, std::uint64_t seed);

struct LatentVector {
  RVector z;
  int user = 0;
};

/// z_k = G(H_tilde_k) on the realified channel [vec Re; vec Im].
LatentVector encode(const Mlp& encoder, const CMatrix& H_tilde_k, int user = 0);

/// Channel decoder output reshaped into an M x cols complex block.
CMatrix decode_channel(const Mlp& chandec, const RVector& z_hat, int M, int cols);

/// Beamformer decoder in inference mode, normalized to total power P. With an
/// analog matrix the normalization is sqrt(P) * raw / ||A * raw||_F.
CMatrix decode_beamformer(const Mlp& beamdec, const RVector& z_hat_all, double P, int rows,
                          int cols, const CMatrix* analog = nullptr);

/// sqrt(P) * raw / ||A raw||_F (A = identity when analog is null), raw realified.
RVector normalize_power(const RVector& raw, double P, int rows, int cols,
                        const CMatrix* analog = nullptr);

/// Vector-Jacobian product of normalize_power at raw.
RVector normalize_power_backward(const RVector& raw, const RVector& upstream, double P, int rows,
                                 int cols, const CMatrix* analog = nullptr);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Applies param <- param - step(grad). Adam keeps per-parameter moments.
class ParamUpdater {
 public:
  ParamUpdater() = default;
  ParamUpdater(const Mlp& net, OptimizerConfig cfg);
  void step(Mlp& net, const MlpGrads& grads);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  MlpGrads m_;
  MlpGrads v_;
  long t_ = 0;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t kd_epoch = 0;
  double alpha = 0.0;
  bool beamformer_trained = false;
  bool channel_decoder_trained = false;
};

void write_checkpoint(const std::filesystem::path& path, const EdnNetworks& nets,
                      const CheckpointMeta& meta);

/// Loads into nets, whose architecture must match the stored descriptors.
CheckpointMeta read_checkpoint(const std::filesystem::path& path, EdnNetworks& nets);

}  // namespace beamsim
