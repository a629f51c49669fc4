#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "beamsim/channel.hpp"
#include "beamsim/feedback.hpp"
#include "beamsim/nets.hpp"
#include "beamsim/rate.hpp"

namespace beamsim {

struct TrainConfig {
  int batch = 128;
  double lr = 1e-4;
  int n_en = 2;
  int n_de = 8;
  int q_t = 5;
  int q_i = 10;
  double eta_ga = 1e-3;
  double alpha_step = 0.01;
  int alpha_every = 1;  // epochs per alpha increment
  std::optional<double> fixed_alpha;  // overrides the schedule (baselines)
  int epochs = 300;
  double sigma2_h = 0.1;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  // Channel decoder stage.
  int chandec_epochs = 300;
  int chandec_steps = 1;
  double chandec_lr = 1e-4;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const;
};

/// alpha * (-rate) + (1 - alpha) * mse
double kd_loss(double alpha, double rate, double mse);

/// min(1, floor(epoch / alpha_every) * alpha_step), or the fixed value when set.
double alpha_schedule(int epoch, const TrainConfig& cfg);

/// One channel draw. In hybrid mode sample.H holds effective channels and
/// analog is the N x N_RF matrix; otherwise analog is empty.
struct Instance {
  ChannelSample sample;
  CMatrix analog;

  bool hybrid() const { return analog.size() > 0; }
  const CMatrix* analog_ptr() const { return hybrid() ? &analog : nullptr; }
  int bf_rows() const { return sample.cols(); }
  int bf_cols() const { return sample.K() * sample.M(); }
};

using InstanceSource = std::function<Instance(Rng&)>;

/// Same channels, fresh CN(0, sigma2_h) estimation errors.
ChannelSample redraw_errors(const ChannelSample& s, double sigma2_h, Rng& rng);

/// MMSE teacher from the true channels (normalized with the analog matrix in hybrid mode).
CMatrix teacher_beamformer(const Instance& inst, double P);

/// Everything the backward pass needs for one batch.
struct PipelineState {
  std::vector<Instance> batch;  // with the errors used in this step
  std::vector<CMatrix> teachers;
  double P = 1.0;
  int q_t = 0;
  double eta_ga = 0.0;
  RMatrix z;       // d x (B*K), column b*K + k
  RMatrix dz;      // feedback error added to z
  RMatrix raw;     // decoder output before normalization, one column per sample
  std::vector<RefinementTrace> traces;
  std::vector<double> rates;  // R(H, W_Q)
  std::vector<double> mse;    // ||W_teacher - W_Q||^2
};

/// z = G(H_tilde), z_hat = z + dz, W_0 = normalize(F(z_hat)), Q_t ascent steps on the
/// true H. The decoder runs in training mode (dropout masks drawn from rng and kept
/// for the backward pass).
PipelineState forward_pipeline(const std::vector<Instance>& batch,
                               const std::vector<CMatrix>& teachers, EdnNetworks& nets,
                               const FeedbackChannelModel& feedback, int q_t, double eta_ga,
                               double P, Rng& rng);

/// Mean KD loss over the batch.
double pipeline_loss(const PipelineState& st, double alpha);

struct PipelineGrads {
  MlpGrads encoder;
  MlpGrads beamdec;
  std::vector<WirtingerGradient> grad_WQ;
  std::vector<WirtingerGradient> grad_W0;
};

/// Gradient of pipeline_loss. The KD gradient at W_Q is pulled back through the
/// unrolled ascent, the normalization layer and the decoder, then (when
/// with_encoder) through the latent into the encoder.
PipelineGrads backward_pipeline(const PipelineState& st, EdnNetworks& nets, double alpha,
                                bool with_encoder = true, bool with_decoder = true);

struct EpochMetrics {
  int epoch = 0;
  double alpha = 0.0;
  double unsup_loss = 0.0;  // mean -R
  double sup_loss = 0.0;    // mean ||W_teacher - W_Q||^2
  double sum_rate = 0.0;
  double seconds = 0.0;
};

struct Trainer {
  EdnNetworks nets;
  ParamUpdater enc_opt;
  ParamUpdater dec_opt;
  ParamUpdater chan_opt;
};

Trainer make_trainer(EdnNetworks nets, const TrainConfig& cfg);

/// One channel batch; N_en encoder-only steps then N_de decoder-only steps, each with
/// fresh channel-estimation and feedback errors.
EpochMetrics train_epoch(Trainer& tr, const TrainConfig& cfg, double alpha,
                         const InstanceSource& source, const FeedbackChannelModel& feedback,
                         double P, Rng& rng);

/// Mean over the batch of sum_k ||H_k - J(G(H_tilde_k) + dz_k)||_F^2, with its gradient
/// accumulated into grads (channel decoder only).
double chandec_loss_and_grad(const std::vector<Instance>& batch, EdnNetworks& nets,
                             const FeedbackChannelModel& feedback, Rng& rng, MlpGrads* grads);

struct ChannelDecoderCurve {
  std::vector<double> loss;
};

ChannelDecoderCurve train_channel_decoder(Trainer& tr, const TrainConfig& cfg,
                                          const InstanceSource& source,
                                          const FeedbackChannelModel& feedback, Rng& rng);

struct InferenceResult {
  RMatrix z_hat;              // d x K
  CMatrix W0;
  std::vector<CMatrix> H_hat;  // empty when Q_i = 0
  RefinementTrace trace;
};

/// Inference path: z_hat from H_tilde, W_0 from the decoder, then Q_i ascent steps on
/// the reconstructed channel.
InferenceResult infer_beamformer(const EdnNetworks& nets, const Instance& inst,
                                 const FeedbackChannelModel& feedback, int q_i, double eta_ga,
                                 double P, Rng& rng);

struct TrainedModel {
  EdnNetworks nets;
  CheckpointMeta meta;
  std::vector<EpochMetrics> history;
  ChannelDecoderCurve chandec_curve;
};

using EpochCallback = std::function<void(const EpochMetrics&, const EdnNetworks&)>;

/// Stage 1 (encoder + beamformer decoder, KD schedule), then stage 2 (channel decoder).
TrainedModel run_algorithm1(const TrainConfig& cfg, const NetArchitecture& arch, int K, int M,
                            int cols, double P, const InstanceSource& source,
                            const FeedbackChannelModel& feedback,
                            const EpochCallback& on_epoch = {});

/// Throws StateError unless both training stages have run.
void require_trained(const CheckpointMeta& meta, int q_i);

}  // namespace beamsim
