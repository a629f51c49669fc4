#include "beamsim/feedback.hpp"

#include <string>

namespace beamsim {

void FeedbackChannelModel::validate() const {
  if (!(sigma2_z >= 0.0)) {
    throw InvalidArgument("FeedbackChannelModel: sigma2_z must be >= 0");
  }
  if (mode != FeedbackMode::kAdditiveGaussian && (bits < 1 || bits > kMaxQuantizerBits)) {
    throw InvalidArgument("FeedbackChannelModel: quantizer needs 1 <= B <= " +
                          std::to_string(kMaxQuantizerBits));
  }
}

namespace {

void check_bits(int B) {
  if (B < 1 || B > kMaxQuantizerBits) {
    throw InvalidArgument("quantizer bit width must lie in [1, " +
                          std::to_string(kMaxQuantizerBits) + "]");
  }
}

}  // namespace

QuantizedLatent quantize(const RVector& z, int B) {
  check_bits(B);
  const std::uint64_t levels = std::uint64_t{1} << B;
  QuantizedLatent q;
  q.B = B;
  q.bits.reserve(static_cast<std::size_t>(z.size()) * B);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double v = z(i);
    if (std::isnan(v)) {
      throw NumericFailure("quantize: NaN latent entry");
    }
    if (v < -1.0 || v > 1.0) {
      ++q.saturated;
      v = std::clamp(v, -1.0, 1.0);
    }
    const double cell = std::floor((v + 1.0) / 2.0 * static_cast<double>(levels));
    const std::uint64_t idx = std::min(static_cast<std::uint64_t>(std::max(cell, 0.0)), levels - 1);
    for (int b = B - 1; b >= 0; --b) {
      q.bits.push_back(static_cast<std::uint8_t>((idx >> b) & 1u));
    }
  }
  return q;
}

RVector dequantize(const BitSequence& bits, int B, int d_latent) {
  check_bits(B);
  if (d_latent < 0 || bits.size() != static_cast<std::size_t>(B) * d_latent) {
    throw FramingError("dequantize: expected " + std::to_string(B * d_latent) + " bits, got " +
                       std::to_string(bits.size()));
  }
  const double step = 2.0 / static_cast<double>(std::uint64_t{1} << B);
  RVector z(d_latent);
  std::size_t pos = 0;
  for (int i = 0; i < d_latent; ++i) {
    std::uint64_t idx = 0;
    for (int b = 0; b < B; ++b) {
      if (bits[pos] > 1) {
        throw FramingError("dequantize: bit values must be 0 or 1");
      }
      idx = (idx << 1) | bits[pos++];
    }
    z(i) = -1.0 + (static_cast<double>(idx) + 0.5) * step;
  }
  return z;
}

RVector apply_feedback_error(const RVector& z, const FeedbackChannelModel& model, Rng& rng) {
  model.validate();
  RVector out = z;
  if (model.mode != FeedbackMode::kAdditiveGaussian) {
    out = dequantize(quantize(z, model.bits).bits, model.bits, static_cast<int>(z.size()));
    if (model.mode == FeedbackMode::kUniformQuantizer) {
      return out;
    }
  }
  const double sd = std::sqrt(model.per_entry_variance());
  if (sd > 0.0) {
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out(i) += rng.normal(0.0, sd);
    }
  }
  return out;
}

namespace {

void push_bits(BitSequence& out, std::uint64_t v, int width) {
  for (int b = width - 1; b >= 0; --b) {
    out.push_back(static_cast<std::uint8_t>((v >> b) & 1u));
  }
}

std::uint64_t pull_bits(const BitSequence& in, std::size_t& pos, int width) {
  std::uint64_t v = 0;
  for (int b = 0; b < width; ++b) {
    v = (v << 1) | in[pos++];
  }
  return v;
}

constexpr std::size_t kHeaderBits = 40;

}  // namespace

std::vector<std::uint8_t> encode_frame(const FeedbackFrame& frame) {
  if (frame.payload.size() != static_cast<std::size_t>(frame.B) * frame.d_latent) {
    throw FramingError("encode_frame: payload length is not B * d_latent");
  }
  BitSequence bits;
  bits.reserve(kHeaderBits + frame.payload.size());
  push_bits(bits, frame.user, 16);
  push_bits(bits, frame.d_latent, 16);
  push_bits(bits, frame.B, 8);
  bits.insert(bits.end(), frame.payload.begin(), frame.payload.end());
  std::vector<std::uint8_t> bytes((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) {
      throw FramingError("encode_frame: bit values must be 0 or 1");
    }
    bytes[i / 8] |= static_cast<std::uint8_t>(bits[i] << (7 - i % 8));
  }
  return bytes;
}

FeedbackFrame decode_frame(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() * 8 < kHeaderBits) {
    throw FramingError("decode_frame: truncated header");
  }
  BitSequence bits(bytes.size() * 8);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bits[i] = static_cast<std::uint8_t>((bytes[i / 8] >> (7 - i % 8)) & 1u);
  }
  std::size_t pos = 0;
  FeedbackFrame f;
  f.user = static_cast<std::uint16_t>(pull_bits(bits, pos, 16));
  f.d_latent = static_cast<std::uint16_t>(pull_bits(bits, pos, 16));
  f.B = static_cast<std::uint8_t>(pull_bits(bits, pos, 8));
  const std::size_t n = static_cast<std::size_t>(f.B) * f.d_latent;
  const std::size_t expected_bytes = (kHeaderBits + n + 7) / 8;
  if (bytes.size() != expected_bytes) {
    throw FramingError("decode_frame: expected " + std::to_string(expected_bytes) +
                       " bytes, got " + std::to_string(bytes.size()));
  }
  f.payload.assign(bits.begin() + static_cast<std::ptrdiff_t>(pos),
                   bits.begin() + static_cast<std::ptrdiff_t>(pos + n));
  for (std::size_t i = pos + n; i < bits.size(); ++i) {
    if (bits[i] != 0) {
      throw FramingError("decode_frame: nonzero padding");
    }
  }
  return f;
}

}  // namespace beamsim
