#include "beamsim/training.hpp"

#include <chrono>
#include <string>

namespace beamsim {

void TrainConfig::validate() const {
  if (batch < 1) {
    throw InvalidArgument("TrainConfig: batch must be >= 1");
  }
  if (n_en < 0 || n_de < 0 || q_t < 0 || q_i < 0 || epochs < 0 || chandec_epochs < 0 ||
      chandec_steps < 0 || checkpoint_every < 0) {
    throw InvalidArgument("TrainConfig: counts must be >= 0");
  }
  if (lr < 0.0 || chandec_lr < 0.0 || eta_ga < 0.0 || sigma2_h < 0.0 || alpha_step < 0.0) {
    throw InvalidArgument("TrainConfig: rates and variances must be >= 0");
  }
  if (alpha_every < 1) {
    throw InvalidArgument("TrainConfig: alpha_every must be >= 1");
  }
  if (fixed_alpha && (*fixed_alpha < 0.0 || *fixed_alpha > 1.0)) {
    throw InvalidArgument("TrainConfig: fixed alpha must lie in [0, 1]");
  }
}

double kd_loss(double alpha, double rate, double mse) {
  return alpha * (-rate) + (1.0 - alpha) * mse;
}

double alpha_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) {
    throw InvalidArgument("alpha_schedule: epoch must be >= 0");
  }
  if (cfg.fixed_alpha) {
    return *cfg.fixed_alpha;
  }
  return std::min(1.0, (epoch / cfg.alpha_every) * cfg.alpha_step);
}

ChannelSample redraw_errors(const ChannelSample& s, double sigma2_h, Rng& rng) {
  std::vector<CMatrix> H_bar = s.H_bar;
  std::vector<double> sigma2 = s.sigma2;
  return normalize_and_estimate(std::move(H_bar), std::move(sigma2), sigma2_h, rng);
}

CMatrix teacher_beamformer(const Instance& inst, double P) {
  CMatrix W = mmse_beamformer(inst.sample.H, P);
  if (inst.hybrid()) {
    W = std::sqrt(P) * W / (inst.analog * W).norm();
  }
  return W;
}

namespace {

void check_batch(const std::vector<Instance>& batch) {
  if (batch.empty()) {
    throw InvalidArgument("pipeline: empty batch");
  }
  const auto& f = batch.front();
  for (const auto& inst : batch) {
    if (inst.sample.K() != f.sample.K() || inst.sample.M() != f.sample.M() ||
        inst.sample.cols() != f.sample.cols() || inst.hybrid() != f.hybrid()) {
      throw InvalidArgument("pipeline: batch samples have inconsistent shapes");
    }
  }
}

RMatrix encoder_input(const std::vector<Instance>& batch) {
  const int K = batch.front().sample.K();
  const int dim = 2 * batch.front().sample.M() * batch.front().sample.cols();
  RMatrix X(dim, static_cast<Eigen::Index>(batch.size()) * K);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (int k = 0; k < K; ++k) {
      X.col(static_cast<Eigen::Index>(b) * K + k) = realify(batch[b].sample.H_tilde[k]);
    }
  }
  return X;
}

RMatrix feedback_error(const RMatrix& z, const FeedbackChannelModel& feedback, Rng& rng) {
  RMatrix dz(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const RVector zc = z.col(c);
    dz.col(c) = apply_feedback_error(zc, feedback, rng) - zc;
  }
  return dz;
}

// Concatenates the K latents of each sample into one decoder input column.
RMatrix stack_latents(const RMatrix& z_hat, int K) {
  const Eigen::Index d = z_hat.rows();
  const Eigen::Index B = z_hat.cols() / K;
  RMatrix out(d * K, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      out.col(b).segment(k * d, d) = z_hat.col(b * K + k);
    }
  }
  return out;
}

RMatrix unstack_latents(const RMatrix& stacked, int K) {
  const Eigen::Index d = stacked.rows() / K;
  const Eigen::Index B = stacked.cols();
  RMatrix out(d, B * K);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      out.col(b * K + k) = stacked.col(b).segment(k * d, d);
    }
  }
  return out;
}

}  // namespace

PipelineState forward_pipeline(const std::vector<Instance>& batch,
                               const std::vector<CMatrix>& teachers, EdnNetworks& nets,
                               const FeedbackChannelModel& feedback, int q_t, double eta_ga,
                               double P, Rng& rng) {
  check_batch(batch);
  if (teachers.size() != batch.size()) {
    throw InvalidArgument("forward_pipeline: one teacher per sample required");
  }
  PipelineState st;
  st.batch = batch;
  st.teachers = teachers;
  st.P = P;
  st.q_t = q_t;
  st.eta_ga = eta_ga;
  const int K = batch.front().sample.K();
  const int rows = batch.front().bf_rows();
  const int cols = batch.front().bf_cols();

  st.z = nets.encoder.forward(encoder_input(batch), Mode::kTrain, &rng);
  st.dz = feedback_error(st.z, feedback, rng);
  st.raw = nets.beamdec.forward(stack_latents(st.z + st.dz, K), Mode::kTrain, &rng);
  if (st.raw.rows() != 2 * rows * cols) {
    throw InvalidArgument("forward_pipeline: decoder width does not match beamformer shape");
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& inst = batch[b];
    const RVector u = st.raw.col(static_cast<Eigen::Index>(b));
    const CMatrix W0 = complexify(normalize_power(u, P, rows, cols, inst.analog_ptr()), rows, cols);
    st.traces.push_back(refine(W0, inst.sample.H, eta_ga, q_t));
    const CMatrix& WQ = st.traces.back().final();
    st.rates.push_back(sum_rate(inst.sample.H, WQ));
    st.mse.push_back((teachers[b] - WQ).squaredNorm());
  }
  return st;
}

double pipeline_loss(const PipelineState& st, double alpha) {
  double total = 0.0;
  for (std::size_t b = 0; b < st.rates.size(); ++b) {
    total += kd_loss(alpha, st.rates[b], st.mse[b]);
  }
  return total / static_cast<double>(st.rates.size());
}

PipelineGrads backward_pipeline(const PipelineState& st, EdnNetworks& nets, double alpha,
                                bool with_encoder, bool with_decoder) {
  PipelineGrads out;
  out.encoder = nets.encoder.zero_grads();
  out.beamdec = nets.beamdec.zero_grads();
  if (!with_encoder && !with_decoder) {
    return out;
  }
  const auto B = static_cast<double>(st.batch.size());
  const int K = st.batch.front().sample.K();
  const int rows = st.batch.front().bf_rows();
  const int cols = st.batch.front().bf_cols();
  RMatrix g_raw(st.raw.rows(), st.raw.cols());
  for (std::size_t b = 0; b < st.batch.size(); ++b) {
    const auto& inst = st.batch[b];
    const auto& trace = st.traces[b];
    const CMatrix& WQ = trace.final();
    WirtingerGradient gQ = 2.0 * (1.0 - alpha) * (WQ - st.teachers[b]);
    if (alpha != 0.0) {
      gQ -= alpha * grad_sum_rate(inst.sample.H, WQ);
    }
    gQ /= B;
    WirtingerGradient g0 = trace.steps() > 0 && trace.eta_ga != 0.0
                               ? unrolled_pullback(inst.sample.H, trace, gQ)
                               : gQ;
    const auto bi = static_cast<Eigen::Index>(b);
    g_raw.col(bi) = normalize_power_backward(st.raw.col(bi), realify(g0), st.P, rows, cols,
                                             inst.analog_ptr());
    out.grad_WQ.push_back(std::move(gQ));
    out.grad_W0.push_back(std::move(g0));
  }
  MlpGrads scratch;
  const RMatrix g_zin = nets.beamdec.backward(g_raw, with_decoder ? out.beamdec : scratch);
  if (with_encoder) {
    nets.encoder.backward(unstack_latents(g_zin, K), out.encoder);
  }
  return out;
}

Trainer make_trainer(EdnNetworks nets, const TrainConfig& cfg) {
  OptimizerConfig oc;
  oc.kind = cfg.optimizer;
  oc.lr = cfg.lr;
  OptimizerConfig cc = oc;
  cc.lr = cfg.chandec_lr;
  Trainer tr{std::move(nets), {}, {}, {}};
  tr.enc_opt = ParamUpdater(tr.nets.encoder, oc);
  tr.dec_opt = ParamUpdater(tr.nets.beamdec, oc);
  tr.chan_opt = ParamUpdater(tr.nets.chandec, cc);
  return tr;
}

namespace {

std::vector<Instance> with_fresh_errors(const std::vector<Instance>& base, double sigma2_h,
                                        Rng& rng) {
  std::vector<Instance> out;
  out.reserve(base.size());
  for (const auto& inst : base) {
    out.push_back({redraw_errors(inst.sample, sigma2_h, rng), inst.analog});
  }
  return out;
}

}  // namespace

EpochMetrics train_epoch(Trainer& tr, const TrainConfig& cfg, double alpha,
                         const InstanceSource& source, const FeedbackChannelModel& feedback,
                         double P, Rng& rng) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Instance> base;
  std::vector<CMatrix> teachers;
  for (int b = 0; b < cfg.batch; ++b) {
    base.push_back(source(rng));
    teachers.push_back(teacher_beamformer(base.back(), P));
  }
  EpochMetrics m;
  m.alpha = alpha;
  int steps = 0;
  auto account = [&](const PipelineState& st) {
    const double loss = pipeline_loss(st, alpha);
    if (!std::isfinite(loss)) {
      throw NumericFailure("train_epoch: non-finite loss at alpha " + std::to_string(alpha) +
                           " after " + std::to_string(steps) + " steps");
    }
    for (std::size_t b = 0; b < st.rates.size(); ++b) {
      m.unsup_loss -= st.rates[b] / cfg.batch;
      m.sup_loss += st.mse[b] / cfg.batch;
      m.sum_rate += st.rates[b] / cfg.batch;
    }
    ++steps;
  };
  auto step = [&](bool encoder) {
    auto batch = with_fresh_errors(base, cfg.sigma2_h, rng);
    PipelineState st = forward_pipeline(batch, teachers, tr.nets, feedback, cfg.q_t, cfg.eta_ga, P, rng);
    account(st);
    PipelineGrads g = backward_pipeline(st, tr.nets, alpha, encoder, !encoder);
    if (encoder) {
      tr.enc_opt.step(tr.nets.encoder, g.encoder);
    } else {
      tr.dec_opt.step(tr.nets.beamdec, g.beamdec);
    }
  };
  for (int i = 0; i < cfg.n_en; ++i) step(true);
  for (int i = 0; i < cfg.n_de; ++i) step(false);
  if (steps == 0) {
    auto batch = with_fresh_errors(base, cfg.sigma2_h, rng);
    account(forward_pipeline(batch, teachers, tr.nets, feedback, cfg.q_t, cfg.eta_ga, P, rng));
  }
  m.unsup_loss /= steps;
  m.sup_loss /= steps;
  m.sum_rate /= steps;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

double chandec_loss_and_grad(const std::vector<Instance>& batch, EdnNetworks& nets,
                             const FeedbackChannelModel& feedback, Rng& rng, MlpGrads* grads) {
  check_batch(batch);
  const int K = batch.front().sample.K();
  const RMatrix z = nets.encoder.infer(encoder_input(batch));
  const RMatrix z_hat = z + feedback_error(z, feedback, rng);
  const RMatrix out = grads ? nets.chandec.forward(z_hat, Mode::kTrain, &rng)
                            : nets.chandec.infer(z_hat);
  RMatrix target(out.rows(), out.cols());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (int k = 0; k < K; ++k) {
      target.col(static_cast<Eigen::Index>(b) * K + k) = realify(batch[b].sample.H[k]);
    }
  }
  if (target.rows() != out.rows()) {
    throw InvalidArgument("channel decoder width does not match the channel shape");
  }
  const auto B = static_cast<double>(batch.size());
  const RMatrix diff = out - target;
  if (grads) {
    nets.chandec.backward(2.0 * diff / B, *grads);
  }
  return diff.squaredNorm() / B;
}

ChannelDecoderCurve train_channel_decoder(Trainer& tr, const TrainConfig& cfg,
                                          const InstanceSource& source,
                                          const FeedbackChannelModel& feedback, Rng& rng) {
  cfg.validate();
  ChannelDecoderCurve curve;
  for (int e = 0; e < cfg.chandec_epochs; ++e) {
    std::vector<Instance> base;
    for (int b = 0; b < cfg.batch; ++b) {
      base.push_back(source(rng));
    }
    double total = 0.0;
    for (int s = 0; s < cfg.chandec_steps; ++s) {
      auto batch = with_fresh_errors(base, cfg.sigma2_h, rng);
      MlpGrads g = tr.nets.chandec.zero_grads();
      const double loss = chandec_loss_and_grad(batch, tr.nets, feedback, rng, &g);
      if (!std::isfinite(loss)) {
        throw NumericFailure("train_channel_decoder: non-finite loss at epoch " +
                             std::to_string(e));
      }
      tr.chan_opt.step(tr.nets.chandec, g);
      total += loss;
    }
    curve.loss.push_back(cfg.chandec_steps > 0 ? total / cfg.chandec_steps : 0.0);
  }
  return curve;
}

InferenceResult infer_beamformer(const EdnNetworks& nets, const Instance& inst,
                                 const FeedbackChannelModel& feedback, int q_i, double eta_ga,
                                 double P, Rng& rng) {
  const auto& s = inst.sample;
  const int K = s.K();
  RMatrix X(2 * s.M() * s.cols(), K);
  for (int k = 0; k < K; ++k) {
    X.col(k) = realify(s.H_tilde[k]);
  }
  InferenceResult r;
  const RMatrix z = nets.encoder.infer(X);
  r.z_hat = z + feedback_error(z, feedback, rng);
  const RVector raw = nets.beamdec.infer(stack_latents(r.z_hat, K)).col(0);
  const int rows = inst.bf_rows();
  const int cols = inst.bf_cols();
  r.W0 = complexify(normalize_power(raw, P, rows, cols, inst.analog_ptr()), rows, cols);
  if (q_i > 0) {
    const RMatrix h = nets.chandec.infer(r.z_hat);
    for (int k = 0; k < K; ++k) {
      r.H_hat.push_back(complexify(h.col(k), s.M(), s.cols()));
    }
  }
  r.trace = refine(r.W0, r.H_hat, eta_ga, q_i);
  return r;
}

TrainedModel run_algorithm1(const TrainConfig& cfg, const NetArchitecture& arch, int K, int M,
                            int cols, double P, const InstanceSource& source,
                            const FeedbackChannelModel& feedback, const EpochCallback& on_epoch) {
  cfg.validate();
  Trainer tr = make_trainer(make_networks(K, M, cols, arch, derive_seed(cfg.seed, 1)), cfg);
  Rng rng(derive_seed(cfg.seed, 2));
  TrainedModel out;
  double alpha = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    alpha = alpha_schedule(e, cfg);
    EpochMetrics m = train_epoch(tr, cfg, alpha, source, feedback, P, rng);
    m.epoch = e;
    out.history.push_back(m);
    if (on_epoch) {
      on_epoch(m, tr.nets);
    }
  }
  Rng rng2(derive_seed(cfg.seed, 3));
  out.chandec_curve = train_channel_decoder(tr, cfg, source, feedback, rng2);
  out.nets = std::move(tr.nets);
  out.meta.seed = cfg.seed;
  out.meta.kd_epoch = static_cast<std::uint64_t>(cfg.epochs);
  out.meta.alpha = alpha;
  out.meta.beamformer_trained = true;
  out.meta.channel_decoder_trained = true;
  return out;
}

void require_trained(const CheckpointMeta& meta, int q_i) {
  if (!meta.beamformer_trained) {
    throw StateError("inference requested before the encoder/beamformer stage was trained");
  }
  if (q_i > 0 && !meta.channel_decoder_trained) {
    throw StateError("refinement at inference needs a trained channel decoder");
  }
}

}  // namespace beamsim
