#pragma once

#include <cstdint>
#include <vector>

#include "beamsim/numerics.hpp"

namespace beamsim {

enum class FeedbackMode { kAdditiveGaussian, kUniformQuantizer, kQuantizerPlusGaussian };

struct FeedbackChannelModel {
  FeedbackMode mode = FeedbackMode::kAdditiveGaussian;
  double sigma2_z = 0.0;
  int bits = 8;  // per latent entry, quantizer modes only
  // false: each real entry gets N(0, sigma2_z). true: N(0, sigma2_z / 2), i.e.
  // the real part of a CN(0, sigma2_z) draw.
  bool complex_split = false;

  void validate() const;
  double per_entry_variance() const { return complex_split ? sigma2_z / 2.0 : sigma2_z; }
};

constexpr int kMaxQuantizerBits = 32;

/// One bit per element (0 or 1), most significant bit of each entry first.
using BitSequence = std::vector<std::uint8_t>;

struct QuantizedLatent {
  BitSequence bits;
  int B = 0;
  int saturated = 0;  // entries outside [-1, 1] that were clamped
};

/// Mid-rise uniform quantizer with 2^B cells on [-1, 1].
QuantizedLatent quantize(const RVector& z, int B);

/// Cell midpoints; throws FramingError unless bits.size() == B * d_latent.
RVector dequantize(const BitSequence& bits, int B, int d_latent);

/// z + eps in the additive mode, the quantizer roundtrip otherwise (plus eps
/// in the combined mode).
RVector apply_feedback_error(const RVector& z, const FeedbackChannelModel& model, Rng& rng);

struct FeedbackFrame {
  std::uint16_t user = 0;
  std::uint16_t d_latent = 0;
  std::uint8_t B = 0;
  BitSequence payload;
};

/// Header (user 16 bits, d 16 bits, B 8 bits) then B*d payload bits, packed
/// big-endian into bytes and zero-padded to a byte boundary.
std::vector<std::uint8_t> encode_frame(const FeedbackFrame& frame);
FeedbackFrame decode_frame(const std::vector<std::uint8_t>& bytes);

}  // namespace beamsim
