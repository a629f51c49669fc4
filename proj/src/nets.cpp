#include "beamsim/nets.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "beamsim/binary_io.hpp"

namespace beamsim {

namespace {

char activation_code(Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return 'I';
    case Activation::kLeakyRelu:
      return 'L';
    case Activation::kTanh:
      return 'T';
  }
  return '?';
}

RMatrix activate(const RMatrix& y, Activation a, double slope) {
  switch (a) {
    case Activation::kIdentity:
      return y;
    case Activation::kLeakyRelu:
      return y.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    case Activation::kTanh:
      return y.array().tanh().matrix();
  }
  return y;
}

// Elementwise derivative, using the post-activation value where it is cheaper.
RMatrix activation_slope(const RMatrix& pre, const RMatrix& post, Activation a, double slope) {
  switch (a) {
    case Activation::kIdentity:
      return RMatrix::Ones(pre.rows(), pre.cols());
    case Activation::kLeakyRelu:
      return pre.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
    case Activation::kTanh:
      return (1.0 - post.array().square()).matrix();
  }
  return RMatrix::Ones(pre.rows(), pre.cols());
}

// Shortest round-trip decimal form.
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace

void MlpSpec::validate() const {
  if (layers.empty()) {
    throw InvalidArgument("MlpSpec " + name + ": no layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in < 1 || l.out < 1) {
      throw InvalidArgument("MlpSpec " + name + ": layer widths must be positive");
    }
    if (i > 0 && layers[i - 1].out != l.in) {
      throw InvalidArgument("MlpSpec " + name + ": layer " + std::to_string(i) +
                            " input width does not chain");
    }
    if (l.dropout < 0.0 || l.dropout >= 1.0) {
      throw InvalidArgument("MlpSpec " + name + ": dropout rate must lie in [0, 1)");
    }
  }
  if (!(bn_eps > 0.0) || bn_momentum < 0.0 || bn_momentum > 1.0) {
    throw InvalidArgument("MlpSpec " + name + ": bad batchnorm constants");
  }
}

std::string MlpSpec::descriptor() const {
  std::ostringstream os;
  os << name << ":" << layers.front().in;
  for (const auto& l : layers) {
    os << "-" << l.out << activation_code(l.activation);
    if (l.batchnorm) {
      os << "b";
    }
    if (l.dropout > 0.0) {
      os << "d" << num(l.dropout);
    }
  }
  os << ";slope=" << num(leaky_slope) << ";mom=" << num(bn_momentum) << ";eps=" << num(bn_eps);
  return os.str();
}

void MlpGrads::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
  for (auto& g : gamma) g.setZero();
  for (auto& b : beta) b.setZero();
}

void MlpGrads::scale(double s) {
  for (auto& w : weight) w *= s;
  for (auto& b : bias) b *= s;
  for (auto& g : gamma) g *= s;
  for (auto& b : beta) b *= s;
}

void MlpGrads::add(const MlpGrads& o) {
  if (o.weight.size() != weight.size()) {
    throw InvalidArgument("MlpGrads::add: layer count mismatch");
  }
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += o.weight[i];
    bias[i] += o.bias[i];
    gamma[i] += o.gamma[i];
    beta[i] += o.beta[i];
  }
}

double MlpGrads::squared_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    s += weight[i].squaredNorm() + bias[i].squaredNorm() + gamma[i].squaredNorm() +
         beta[i].squaredNorm();
  }
  return s;
}

Mlp::Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  Rng rng(seed);
  layers_.reserve(spec_.layers.size());
  for (const auto& l : spec_.layers) {
    DenseLayer d;
    double bound = 0.0;
    if (l.activation == Activation::kTanh) {
      bound = std::sqrt(6.0 / (l.in + l.out));
    } else if (l.activation == Activation::kLeakyRelu) {
      bound = std::sqrt(6.0 / ((1.0 + spec_.leaky_slope * spec_.leaky_slope) * l.in));
    } else {
      bound = std::sqrt(3.0 / l.in);
    }
    d.weight.resize(l.out, l.in);
    for (Eigen::Index i = 0; i < d.weight.size(); ++i) {
      d.weight.data()[i] = rng.uniform(-bound, bound);
    }
    d.bias = RVector::Zero(l.out);
    if (l.batchnorm) {
      d.gamma = RVector::Ones(l.out);
      d.beta = RVector::Zero(l.out);
      d.running_mean = RVector::Zero(l.out);
      d.running_var = RVector::Ones(l.out);
    }
    layers_.push_back(std::move(d));
  }
}

RMatrix Mlp::run(const RMatrix& x, Mode mode, Rng* rng, const Tape* masks, Tape* record) const {
  if (layers_.empty()) {
    throw StateError("Mlp: network is not initialized");
  }
  if (x.rows() != spec_.input_dim()) {
    throw InvalidArgument("Mlp " + spec_.name + ": expected input dimension " +
                          std::to_string(spec_.input_dim()) + ", got " + std::to_string(x.rows()));
  }
  if (x.cols() < 1) {
    throw InvalidArgument("Mlp " + spec_.name + ": empty batch");
  }
  const bool train = mode == Mode::kTrain;
  if (record) {
    record->mode = mode;
    record->layers.clear();
    record->layers.resize(layers_.size());
  }
  RMatrix h = x;
  const auto B = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& ls = spec_.layers[i];
    const auto& L = layers_[i];
    LayerTape lt;
    lt.input = h;
    RMatrix z = L.weight * h;
    z.colwise() += L.bias;
    if (ls.batchnorm) {
      RVector mean;
      RVector var;
      if (train) {
        mean = z.rowwise().mean();
        var = (z.colwise() - mean).array().square().rowwise().sum().matrix() / B;
      } else {
        mean = L.running_mean;
        var = L.running_var;
      }
      lt.inv_std = (var.array() + spec_.bn_eps).rsqrt().matrix();
      lt.xhat = (z.colwise() - mean).array().colwise() * lt.inv_std.array();
      z = (lt.xhat.array().colwise() * L.gamma.array()).matrix();
      z.colwise() += L.beta;
      lt.batch_mean = std::move(mean);
      lt.batch_var = std::move(var);
    }
    lt.pre_act = z;
    lt.post_act = activate(z, ls.activation, spec_.leaky_slope);
    h = lt.post_act;
    if (train && ls.dropout > 0.0) {
      if (masks) {
        lt.mask = masks->layers[i].mask;
      } else {
        if (!rng) {
          throw InvalidArgument("Mlp " + spec_.name + ": training-mode dropout needs an rng");
        }
        const double keep = 1.0 - ls.dropout;
        lt.mask.resize(h.rows(), h.cols());
        for (Eigen::Index j = 0; j < lt.mask.size(); ++j) {
          lt.mask.data()[j] = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        }
      }
      h = h.cwiseProduct(lt.mask);
    }
    if (record) {
      record->layers[i] = std::move(lt);
    }
  }
  return h;
}

RMatrix Mlp::forward(const RMatrix& x, Mode mode, Rng* rng) {
  Tape t;
  RMatrix out = run(x, mode, rng, nullptr, &t);
  if (mode == Mode::kTrain) {
    const double m = spec_.bn_momentum;
    const auto B = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!spec_.layers[i].batchnorm) {
        continue;
      }
      auto& L = layers_[i];
      const RVector unbiased = B > 1.0 ? RVector(t.layers[i].batch_var * (B / (B - 1.0)))
                                       : t.layers[i].batch_var;
      L.running_mean = (1.0 - m) * L.running_mean + m * t.layers[i].batch_mean;
      L.running_var = (1.0 - m) * L.running_var + m * unbiased;
    }
  }
  tape_ = std::move(t);
  return out;
}

RMatrix Mlp::infer(const RMatrix& x) const { return run(x, Mode::kEval, nullptr, nullptr, nullptr); }

RMatrix Mlp::replay(const RMatrix& x) const {
  if (!tape_) {
    throw StateError("Mlp " + spec_.name + ": replay without a recorded forward");
  }
  if (tape_->layers.front().input.cols() != x.cols()) {
    throw InvalidArgument("Mlp " + spec_.name + ": replay batch size differs from recorded one");
  }
  return run(x, tape_->mode, nullptr, &*tape_, nullptr);
}

RMatrix Mlp::backward(const RMatrix& upstream, MlpGrads& grads) const {
  if (!tape_) {
    throw StateError("Mlp " + spec_.name + ": backward without a recorded forward");
  }
  const auto& tape = *tape_;
  if (upstream.rows() != spec_.output_dim() ||
      upstream.cols() != tape.layers.back().post_act.cols()) {
    throw InvalidArgument("Mlp " + spec_.name + ": upstream gradient shape mismatch");
  }
  if (grads.weight.size() != layers_.size()) {
    grads = zero_grads();
  }
  const bool train = tape.mode == Mode::kTrain;
  RMatrix g = upstream;
  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    const auto& ls = spec_.layers[ii];
    const auto& L = layers_[ii];
    const auto& lt = tape.layers[ii];
    if (lt.mask.size() > 0) {
      g = g.cwiseProduct(lt.mask);
    }
    g = g.cwiseProduct(activation_slope(lt.pre_act, lt.post_act, ls.activation, spec_.leaky_slope));
    if (ls.batchnorm) {
      grads.gamma[ii] += g.cwiseProduct(lt.xhat).rowwise().sum();
      grads.beta[ii] += g.rowwise().sum();
      const RMatrix dxhat = g.array().colwise() * L.gamma.array();
      if (train) {
        const auto B = static_cast<double>(g.cols());
        const RVector s1 = dxhat.rowwise().sum();
        const RVector s2 = dxhat.cwiseProduct(lt.xhat).rowwise().sum();
        RMatrix t = B * dxhat;
        t.colwise() -= s1;
        t -= (lt.xhat.array().colwise() * s2.array()).matrix();
        g = (t.array().colwise() * (lt.inv_std.array() / B)).matrix();
      } else {
        g = (dxhat.array().colwise() * lt.inv_std.array()).matrix();
      }
    }
    grads.weight[ii].noalias() += g * lt.input.transpose();
    grads.bias[ii] += g.rowwise().sum();
    g = L.weight.transpose() * g;
  }
  return g;
}

MlpGrads Mlp::zero_grads() const {
  MlpGrads g;
  for (const auto& L : layers_) {
    g.weight.push_back(RMatrix::Zero(L.weight.rows(), L.weight.cols()));
    g.bias.push_back(RVector::Zero(L.bias.size()));
    g.gamma.push_back(RVector::Zero(L.gamma.size()));
    g.beta.push_back(RVector::Zero(L.beta.size()));
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) {
    n += static_cast<std::size_t>(L.weight.size() + L.bias.size() + L.gamma.size() + L.beta.size());
  }
  return n;
}

namespace {

template <typename F>
void for_each_block(std::vector<DenseLayer>& layers, F&& f) {
  for (auto& L : layers) {
    f(L.weight.data(), L.weight.size());
    f(L.bias.data(), L.bias.size());
    f(L.gamma.data(), L.gamma.size());
    f(L.beta.data(), L.beta.size());
  }
}

}  // namespace

RVector Mlp::flat_parameters() const {
  RVector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  auto& mut = const_cast<std::vector<DenseLayer>&>(layers_);
  for_each_block(mut, [&](double* p, Eigen::Index n) {
    out.segment(pos, n) = Eigen::Map<RVector>(p, n);
    pos += n;
  });
  return out;
}

void Mlp::set_flat_parameters(const RVector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw InvalidArgument("Mlp::set_flat_parameters: wrong length");
  }
  Eigen::Index pos = 0;
  for_each_block(layers_, [&](double* p, Eigen::Index n) {
    Eigen::Map<RVector>(p, n) = flat.segment(pos, n);
    pos += n;
  });
}

RVector Mlp::flatten(const MlpGrads& grads) const {
  RVector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  auto put = [&](const auto& m) {
    out.segment(pos, m.size()) = Eigen::Map<const RVector>(m.data(), m.size());
    pos += m.size();
  };
  for (std::size_t i = 0; i < grads.weight.size(); ++i) {
    put(grads.weight[i]);
    put(grads.bias[i]);
    put(grads.gamma[i]);
    put(grads.beta[i]);
  }
  return out;
}

MlpSpec encoder_spec(int input_dim, const NetArchitecture& arch) {
  MlpSpec s;
  s.name = "encoder";
  s.leaky_slope = arch.leaky_slope;
  int prev = input_dim;
  for (int w : arch.encoder_hidden) {
    s.layers.push_back({prev, w, Activation::kLeakyRelu, 0.0, false});
    prev = w;
  }
  s.layers.push_back({prev, arch.d_latent, Activation::kTanh, 0.0, false});
  return s;
}

MlpSpec beamdec_spec(int input_dim, int output_dim, const NetArchitecture& arch) {
  MlpSpec s;
  s.name = "beamdec";
  s.leaky_slope = arch.leaky_slope;
  int prev = input_dim;
  for (int w : arch.beamdec_hidden) {
    s.layers.push_back({prev, w, Activation::kLeakyRelu, arch.dropout, false});
    prev = w;
  }
  s.layers.push_back({prev, output_dim, Activation::kIdentity, 0.0, false});
  return s;
}

MlpSpec chandec_spec(int output_dim, const NetArchitecture& arch) {
  MlpSpec s;
  s.name = "chandec";
  s.leaky_slope = arch.leaky_slope;
  int prev = arch.d_latent;
  for (int w : arch.chandec_hidden) {
    s.layers.push_back({prev, w, Activation::kLeakyRelu, 0.0, true});
    prev = w;
  }
  s.layers.push_back({prev, output_dim, Activation::kIdentity, 0.0, false});
  return s;
}

EdnNetworks make_networks(int K, int M, int cols, const NetArchitecture& arch, std::uint64_t seed) {
  if (K < 1 || M < 1 || cols < 1 || arch.d_latent < 1) {
    throw InvalidArgument("make_networks: dimensions must be positive");
  }
  const int in = 2 * M * cols;
  return EdnNetworks{
      Mlp(encoder_spec(in, arch), derive_seed(seed, 1)),
      Mlp(beamdec_spec(K * arch.d_latent, 2 * cols * K * M, arch), derive_seed(seed, 2)),
      Mlp(chandec_spec(in, arch), derive_seed(seed, 3)),
  };
}

LatentVector encode(const Mlp& encoder, const CMatrix& H_tilde_k, int user) {
  const RVector x = realify(H_tilde_k);
  if (x.size() != encoder.spec().input_dim()) {
    throw InvalidArgument("encode: channel has " + std::to_string(x.size()) +
                          " real entries, encoder expects " +
                          std::to_string(encoder.spec().input_dim()));
  }
  return {encoder.infer(x).col(0), user};
}

CMatrix decode_channel(const Mlp& chandec, const RVector& z_hat, int M, int cols) {
  if (z_hat.size() != chandec.spec().input_dim()) {
    throw InvalidArgument("decode_channel: latent length mismatch");
  }
  if (2 * M * cols != chandec.spec().output_dim()) {
    throw InvalidArgument("decode_channel: output shape does not match decoder width");
  }
  const RVector out = chandec.infer(z_hat).col(0);
  return complexify(out, M, cols);
}

RVector normalize_power(const RVector& raw, double P, int rows, int cols, const CMatrix* analog) {
  if (raw.size() != 2 * rows * cols) {
    throw InvalidArgument("normalize_power: length does not match shape");
  }
  double n = 0.0;
  if (analog) {
    if (analog->cols() != rows) {
      throw InvalidArgument("normalize_power: analog matrix width must equal digital rows");
    }
    n = (*analog * complexify(raw, rows, cols)).norm();
  } else {
    n = raw.norm();
  }
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateError("degenerate-output: beamformer decoder produced a zero-norm output");
  }
  return std::sqrt(P) * raw / n;
}

RVector normalize_power_backward(const RVector& raw, const RVector& upstream, double P, int rows,
                                 int cols, const CMatrix* analog) {
  if (raw.size() != 2 * rows * cols || upstream.size() != raw.size()) {
    throw InvalidArgument("normalize_power_backward: length does not match shape");
  }
  double n = 0.0;
  RVector dn;
  if (analog) {
    const CMatrix U = complexify(raw, rows, cols);
    n = (*analog * U).norm();
    if (!(n > 0.0)) {
      throw DegenerateError("degenerate-output: zero-norm beamformer");
    }
    dn = realify(analog->adjoint() * (*analog * U)) / n;
  } else {
    n = raw.norm();
    if (!(n > 0.0)) {
      throw DegenerateError("degenerate-output: zero-norm beamformer");
    }
    dn = raw / n;
  }
  return std::sqrt(P) * (upstream / n - dn * (raw.dot(upstream) / (n * n)));
}

CMatrix decode_beamformer(const Mlp& beamdec, const RVector& z_hat_all, double P, int rows,
                          int cols, const CMatrix* analog) {
  if (z_hat_all.size() != beamdec.spec().input_dim()) {
    throw InvalidArgument("decode_beamformer: concatenated latent length mismatch");
  }
  if (2 * rows * cols != beamdec.spec().output_dim()) {
    throw InvalidArgument("decode_beamformer: output shape does not match decoder width");
  }
  const RVector raw = beamdec.infer(z_hat_all).col(0);
  return complexify(normalize_power(raw, P, rows, cols, analog), rows, cols);
}

ParamUpdater::ParamUpdater(const Mlp& net, OptimizerConfig cfg) : cfg_(cfg) {
  if (cfg_.lr < 0.0) {
    throw InvalidArgument("ParamUpdater: learning rate must be >= 0");
  }
  if (cfg_.kind == OptimizerKind::kAdam) {
    m_ = net.zero_grads();
    v_ = net.zero_grads();
  }
}

void ParamUpdater::step(Mlp& net, const MlpGrads& grads) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size()) {
    throw InvalidArgument("ParamUpdater::step: gradient layout does not match network");
  }
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight -= cfg_.lr * grads.weight[i];
      layers[i].bias -= cfg_.lr * grads.bias[i];
      layers[i].gamma -= cfg_.lr * grads.gamma[i];
      layers[i].beta -= cfg_.lr * grads.beta[i];
    }
    return;
  }
  if (m_.weight.size() != layers.size()) {
    m_ = net.zero_grads();
    v_ = net.zero_grads();
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto upd = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    upd(layers[i].weight, m_.weight[i], v_.weight[i], grads.weight[i]);
    upd(layers[i].bias, m_.bias[i], v_.bias[i], grads.bias[i]);
    upd(layers[i].gamma, m_.gamma[i], v_.gamma[i], grads.gamma[i]);
    upd(layers[i].beta, m_.beta[i], v_.beta[i], grads.beta[i]);
  }
}

namespace {

constexpr char kCheckpointMagic[5] = "BSCK";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_vec(std::ostream& os, const double* p, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    io::write_f64(os, p[i]);
  }
}

void read_vec(std::istream& is, double* p, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = io::read_f64(is);
  }
}

void write_net(std::ostream& os, const Mlp& net) {
  io::write_string(os, net.spec().descriptor());
  io::write_u64(os, net.init_seed());
  for (const auto& L : net.layers()) {
    write_vec(os, L.weight.data(), L.weight.size());
    write_vec(os, L.bias.data(), L.bias.size());
    write_vec(os, L.gamma.data(), L.gamma.size());
    write_vec(os, L.beta.data(), L.beta.size());
    write_vec(os, L.running_mean.data(), L.running_mean.size());
    write_vec(os, L.running_var.data(), L.running_var.size());
  }
}

void read_net(std::istream& is, Mlp& net) {
  const std::string desc = io::read_string(is);
  if (desc != net.spec().descriptor()) {
    throw ConfigError("checkpoint architecture mismatch: file has '" + desc + "', expected '" +
                      net.spec().descriptor() + "'");
  }
  const std::uint64_t seed = io::read_u64(is);
  Mlp loaded(net.spec(), seed);
  for (auto& L : loaded.layers()) {
    read_vec(is, L.weight.data(), L.weight.size());
    read_vec(is, L.bias.data(), L.bias.size());
    read_vec(is, L.gamma.data(), L.gamma.size());
    read_vec(is, L.beta.data(), L.beta.size());
    read_vec(is, L.running_mean.data(), L.running_mean.size());
    read_vec(is, L.running_var.data(), L.running_var.size());
    if (L.running_var.size() > 0 && (L.running_var.array() < 0.0).any()) {
      throw FramingError("checkpoint holds a negative batchnorm variance");
    }
  }
  net = std::move(loaded);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const EdnNetworks& nets,
                      const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw ConfigError("cannot open " + path.string() + " for writing");
  }
  io::write_magic(os, kCheckpointMagic);
  io::write_u32(os, kCheckpointVersion);
  io::write_u64(os, meta.seed);
  io::write_u64(os, meta.kd_epoch);
  io::write_f64(os, meta.alpha);
  io::write_u32(os, (meta.beamformer_trained ? 1u : 0u) | (meta.channel_decoder_trained ? 2u : 0u));
  write_net(os, nets.encoder);
  write_net(os, nets.beamdec);
  write_net(os, nets.chandec);
  if (!os) {
    throw ConfigError("write failed for " + path.string());
  }
}

CheckpointMeta read_checkpoint(const std::filesystem::path& path, EdnNetworks& nets) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ConfigError("missing checkpoint: expected " + path.string());
  }
  io::expect_magic(is, kCheckpointMagic);
  const std::uint32_t version = io::read_u32(is);
  if (version != kCheckpointVersion) {
    throw FramingError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointMeta meta;
  meta.seed = io::read_u64(is);
  meta.kd_epoch = io::read_u64(is);
  meta.alpha = io::read_f64(is);
  const std::uint32_t flags = io::read_u32(is);
  meta.beamformer_trained = (flags & 1u) != 0;
  meta.channel_decoder_trained = (flags & 2u) != 0;
  EdnNetworks tmp = nets;
  read_net(is, tmp.encoder);
  read_net(is, tmp.beamdec);
  read_net(is, tmp.chandec);
  nets = std::move(tmp);
  return meta;
}

}  // namespace beamsim
