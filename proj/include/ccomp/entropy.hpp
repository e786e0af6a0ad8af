#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ccomp/common.hpp"

namespace ccomp {

// Coded alphabet: q in [-64, 63] plus one escape bucket that carries a raw
// 16-bit sign-magnitude payload for out-of-range residuals.
constexpr int kQMin = -64;
constexpr int kQMax = 63;
constexpr int kAlphabet = kQMax - kQMin + 2;  // 129 incl. escape
constexpr int kEscape = kAlphabet - 1;
constexpr int kCdfBits = 16;
constexpr uint32_t kCdfTotal = 1u << kCdfBits;

// Exact unit-bin Gaussian mass at integer q (residual form, zero mean).
double discretized_gaussian_pmf(int q, double sigma);

struct QuantizedCdf {
  // cum[0] = 0, cum[kAlphabet] = 2^16, strictly increasing (every count >= 1)
  std::array<uint32_t, kAlphabet + 1> cum{};

  uint32_t count(int sym) const { return cum[sym + 1] - cum[sym]; }
  uint32_t count_q(int q) const { return count(q - kQMin); }
};

class ScaleTable {
 public:
  static constexpr int kSize = 64;
  static constexpr double kSigmaMin = 0.05;
  static constexpr double kSigmaMax = 20.0;

  ScaleTable();

  double sigma(int index) const { return entries_[static_cast<size_t>(index)]; }
  const std::array<double, kSize>& entries() const { return entries_; }

  // Smallest index whose entry >= sigma; clamped at both ends.
  int sigma_to_index(double sigma) const;

  const QuantizedCdf& cdf(int index) const { return cdfs_[static_cast<size_t>(index)]; }

  // slot -> symbol lookup for O(1) decoding
  uint8_t symbol_at(int index, uint32_t slot) const {
    return slot_lut_[static_cast<size_t>(index)][slot];
  }

  // Canonical bytes folded into the pz fingerprint.
  std::vector<uint8_t> serialize() const;

  // Shifts one interior cumulative boundary by delta (the fragility
  // experiment: a one-count table mismatch must corrupt decoding).
  void perturb_cum(int index, int cum_entry, int delta);

 private:
  std::array<double, kSize> entries_;
  std::vector<QuantizedCdf> cdfs_;
  std::vector<std::vector<uint8_t>> slot_lut_;
};

// Fixed-point CDF over the alphabet for one sigma bucket: counts proportional
// to the discretized Gaussian, escape gets the tail mass, every count >= 1,
// total exactly 2^16.
QuantizedCdf build_cdf(int index, const ScaleTable& table);

// rANS, 32-bit state, byte renormalization, state kept in [2^16, 2^24).
// Symbols are encoded in reverse so decoding is a forward pass.
std::vector<uint8_t> rans_encode(const std::vector<int>& symbols,
                                 const std::vector<int>& cdf_indices, const ScaleTable& table);

std::vector<int> rans_decode(const std::vector<uint8_t>& bytes,
                             const std::vector<int>& cdf_indices, int count,
                             const ScaleTable& table);

// Information content under the quantized tables (escapes cost 16 extra bits).
double estimate_bits(const std::vector<int>& symbols, const std::vector<int>& cdf_indices,
                     const ScaleTable& table);

}  // namespace ccomp
