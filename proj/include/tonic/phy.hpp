#pragma once

// 16QAM physical layer: Gray mapping, flat block-fading channel and exact
// soft demapping.
//
// Bit labelling (b0 b1 b2 b3): b0 b1 select the in-phase level and b2 b3 the
// quadrature level through the per-axis Gray map
//
//   00 -> -3,  01 -> -1,  11 -> +1,  10 -> +3
//
// and the point is scaled by sqrt(P / 10) so the 16-point average energy is P.
// Bits 0000 therefore map to the corner (-3 - 3j) * sqrt(P / 10).
//
// LLR convention: L = log Pr(b = 0 | r) / Pr(b = 1 | r), so L > 0 favours 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tonic/rng.hpp"

namespace tonic {

using Complex = std::complex<double>;

inline constexpr double kLlrClamp = 30.0;

namespace qam16 {

// Gray level for a two-bit pair (first bit is the more significant one).
constexpr std::array<int, 4> kLevelOfPair = {-3, -1, 3, 1};  // 00, 01, 10, 11
constexpr std::array<double, 4> kLevels = {-3.0, -1.0, 1.0, 3.0};

inline double unit_scale() { return 1.0 / std::sqrt(10.0); }

/// Unit-energy constellation point for a 4-bit label (b0 is the MSB).
inline Complex point(unsigned label) {
  const int i = kLevelOfPair[(label >> 2) & 3u];
  const int q = kLevelOfPair[label & 3u];
  return Complex(i, q) * unit_scale();
}

}  // namespace qam16

struct SymbolBlock {
  std::vector<Complex> symbols;
  double power = 1.0;

  double mean_energy() const {
    if (symbols.empty()) return 0.0;
    double e = 0.0;
    for (const auto& s : symbols) e += std::norm(s);
    return e / static_cast<double>(symbols.size());
  }
};

/// Maps bits (values 0/1) four at a time onto the Gray 16QAM constellation,
/// scaled by sqrt(power).
inline SymbolBlock modulate_16qam(std::span<const std::uint8_t> bits, double power = 1.0) {
  if (bits.size() % 4 != 0) throw std::invalid_argument("modulate_16qam: bit count not divisible by 4");
  if (!(power > 0.0)) throw std::invalid_argument("modulate_16qam: power must be positive");
  SymbolBlock block;
  block.power = power;
  block.symbols.reserve(bits.size() / 4);
  const double amp = std::sqrt(power);
  for (std::size_t k = 0; k < bits.size(); k += 4) {
    const unsigned label = (bits[k] & 1u) << 3 | (bits[k + 1] & 1u) << 2 | (bits[k + 2] & 1u) << 1 |
                           (bits[k + 3] & 1u);
    block.symbols.push_back(amp * qam16::point(label));
  }
  return block;
}

enum class ChannelKind { Awgn, Rayleigh, Rician };

inline std::string_view to_string(ChannelKind k) {
  switch (k) {
    case ChannelKind::Awgn: return "awgn";
    case ChannelKind::Rayleigh: return "rayleigh";
    case ChannelKind::Rician: return "rician";
  }
  return "?";
}

inline ChannelKind parse_channel_kind(std::string_view s) {
  if (s == "awgn" || s == "AWGN") return ChannelKind::Awgn;
  if (s == "rayleigh" || s == "Rayleigh") return ChannelKind::Rayleigh;
  if (s == "rician" || s == "Rician") return ChannelKind::Rician;
  throw std::invalid_argument("unknown channel kind: " + std::string(s));
}

inline constexpr double kDefaultRicianK = 5.0;

/// One block-fading realization: r = h s + w with w ~ CN(0, noise_variance).
struct ChannelRealization {
  ChannelKind kind = ChannelKind::Awgn;
  Complex h{1.0, 0.0};
  double noise_variance = 1.0;
  double rician_k = kDefaultRicianK;
};

inline double noise_variance_for_snr(double snr_db, double power = 1.0) {
  return power / std::pow(10.0, snr_db / 10.0);
}

/// Draws h with E|h|^2 = 1: AWGN h = 1, Rayleigh h ~ CN(0, 1), Rician
/// h = sqrt(K/(K+1)) + sqrt(1/(K+1)) CN(0, 1) with a zero-phase line of sight.
inline Complex draw_fading(ChannelKind kind, double rician_k, Rng& rng) {
  switch (kind) {
    case ChannelKind::Awgn: return {1.0, 0.0};
    case ChannelKind::Rayleigh: {
      const double s = std::sqrt(0.5);
      const double re = s * rng.normal();
      const double im = s * rng.normal();
      return {re, im};
    }
    case ChannelKind::Rician: {
      if (!(rician_k >= 0.0)) throw std::invalid_argument("Rician K-factor must be >= 0");
      const double los = std::sqrt(rician_k / (rician_k + 1.0));
      const double s = std::sqrt(0.5 / (rician_k + 1.0));
      const double re = los + s * rng.normal();
      const double im = s * rng.normal();
      return {re, im};
    }
  }
  return {1.0, 0.0};
}

inline ChannelRealization draw_channel(ChannelKind kind, double snr_db, Rng& rng,
                                       double rician_k = kDefaultRicianK, double power = 1.0) {
  ChannelRealization ch;
  ch.kind = kind;
  ch.rician_k = rician_k;
  ch.noise_variance = noise_variance_for_snr(snr_db, power);
  ch.h = draw_fading(kind, rician_k, rng);
  return ch;
}

inline std::vector<Complex> apply_channel(const SymbolBlock& block, const ChannelRealization& ch,
                                          Rng& rng) {
  std::vector<Complex> r(block.symbols.size());
  const double s = std::sqrt(ch.noise_variance / 2.0);
  for (std::size_t j = 0; j < r.size(); ++j) {
    const double re = rng.normal();
    const double im = rng.normal();
    r[j] = ch.h * block.symbols[j] + s * Complex(re, im);
  }
  return r;
}

namespace detail {

// Exact LLRs of the two Gray bits carried by one axis. `y` is the equalized
// axis sample in units of the unit-energy constellation, `gain` equals
// |h|^2 P / sigma^2.
inline void axis_llrs(double y, double gain, double& first, double& second) {
  const double a = qam16::unit_scale();
  std::array<double, 4> metric{};
  for (std::size_t l = 0; l < 4; ++l) {
    const double d = y - qam16::kLevels[l] * a;
    metric[l] = -gain * d * d;
  }
  auto lse2 = [](double u, double v) {
    const double m = std::max(u, v);
    return m + std::log1p(std::exp(-std::abs(u - v)));
  };
  // level index -> pair: 0:-3=00, 1:-1=01, 2:+1=11, 3:+3=10
  first = lse2(metric[0], metric[1]) - lse2(metric[2], metric[3]);
  second = lse2(metric[0], metric[3]) - lse2(metric[1], metric[2]);
}

}  // namespace detail

/// Exact (log-sum-exp) bit LLRs given perfect CSI, clamped to +/-clamp.
/// The metric |r - h s|^2 splits into independent I and Q terms after
/// equalization, so each bit marginalizes over the four levels of its axis,
/// which equals marginalizing over all 16 points.
inline std::vector<double> demap_llr(std::span<const Complex> received, const ChannelRealization& ch,
                                     double power = 1.0, double clamp = kLlrClamp) {
  if (!(ch.noise_variance > 0.0)) throw std::invalid_argument("demap_llr: noise variance must be positive");
  std::vector<double> llr(received.size() * 4, 0.0);
  const double h2 = std::norm(ch.h);
  if (h2 == 0.0) return llr;
  const double gain = h2 * power / ch.noise_variance;
  const double amp = std::sqrt(power);
  for (std::size_t j = 0; j < received.size(); ++j) {
    const Complex y = received[j] / (ch.h * amp);
    detail::axis_llrs(y.real(), gain, llr[4 * j], llr[4 * j + 1]);
    detail::axis_llrs(y.imag(), gain, llr[4 * j + 2], llr[4 * j + 3]);
  }
  for (auto& v : llr) v = std::clamp(v, -clamp, clamp);
  return llr;
}

/// Minimum-distance demapping to bits.
inline std::vector<std::uint8_t> hard_demap(std::span<const Complex> received, const ChannelRealization& ch,
                                            double power = 1.0) {
  std::vector<std::uint8_t> bits;
  bits.reserve(received.size() * 4);
  const double amp = std::sqrt(power);
  for (const auto& r : received) {
    unsigned best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (unsigned label = 0; label < 16; ++label) {
      const double d = std::norm(r - ch.h * amp * qam16::point(label));
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    for (int b = 3; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((best >> b) & 1u));
  }
  return bits;
}

}  // namespace tonic
