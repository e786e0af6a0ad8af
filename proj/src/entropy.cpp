#include "ccomp/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccomp/util.hpp"

namespace ccomp {

namespace {

constexpr uint32_t kRansLow = 1u << 16;  // renormalization lower bound

// Escape payload: 16-bit sign-magnitude, coded as two uniform byte symbols.
constexpr int kEscapeMagLimit = 1 << 15;

}  // namespace

double discretized_gaussian_pmf(int q, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("discretized_gaussian_pmf: sigma must be > 0");
  // work on |q| so the erfc difference is between same-scale tail values
  const double a = std::abs(static_cast<double>(q));
  constexpr double inv_sqrt2 = 0.7071067811865476;
  const double lo = (a - 0.5) / sigma * inv_sqrt2;
  const double hi = (a + 0.5) / sigma * inv_sqrt2;
  return 0.5 * (std::erfc(lo) - std::erfc(hi));
}

QuantizedCdf build_cdf(int index, const ScaleTable& table) {
  if (index < 0 || index >= ScaleTable::kSize)
    throw DomainError("build_cdf: index out of range");
  const double sigma = table.sigma(index);

  std::array<double, kAlphabet> mass{};
  double in_range = 0.0;
  for (int q = kQMin; q <= kQMax; ++q) {
    const double m = discretized_gaussian_pmf(q, sigma);
    mass[static_cast<size_t>(q - kQMin)] = m;
    in_range += m;
  }
  mass[kEscape] = std::max(0.0, 1.0 - in_range);

  // Reserve one count per negligible-mass symbol, then split the remaining
  // budget proportionally (largest remainder). Spreading the reservation cost
  // keeps every significant bucket within ~2e-5 relative of its real mass
  // instead of charging it all to the peak.
  std::array<uint32_t, kAlphabet> counts{};
  std::array<double, kAlphabet> frac{};
  int reserved = 0;
  for (int s = 0; s < kAlphabet; ++s)
    if (mass[static_cast<size_t>(s)] * static_cast<double>(kCdfTotal) < 1.0) ++reserved;
  const double budget = static_cast<double>(kCdfTotal - reserved);

  int64_t assigned = 0;
  for (int s = 0; s < kAlphabet; ++s) {
    const double m = mass[static_cast<size_t>(s)] * static_cast<double>(kCdfTotal);
    if (m < 1.0) {
      counts[static_cast<size_t>(s)] = 1;
      frac[static_cast<size_t>(s)] = -1.0;  // never topped up
    } else {
      const double scaled = mass[static_cast<size_t>(s)] * budget;
      counts[static_cast<size_t>(s)] = std::max(1u, static_cast<uint32_t>(scaled));
      frac[static_cast<size_t>(s)] = scaled - std::floor(scaled);
    }
    assigned += counts[static_cast<size_t>(s)];
  }
  int64_t leftover = static_cast<int64_t>(kCdfTotal) - assigned;

  if (leftover > 0) {
    // largest fractional remainders first, deterministic tie-break on index
    std::array<int, kAlphabet> order{};
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (frac[static_cast<size_t>(a)] != frac[static_cast<size_t>(b)])
        return frac[static_cast<size_t>(a)] > frac[static_cast<size_t>(b)];
      return a < b;
    });
    for (int i = 0; leftover > 0; ++i, --leftover)
      ++counts[static_cast<size_t>(order[static_cast<size_t>(i % kAlphabet)])];
  }
  while (leftover < 0) {  // steal from the largest bucket, never below one
    int big = 0;
    for (int t = 1; t < kAlphabet; ++t)
      if (counts[static_cast<size_t>(t)] > counts[static_cast<size_t>(big)]) big = t;
    --counts[static_cast<size_t>(big)];
    ++leftover;
  }

  QuantizedCdf cdf;
  cdf.cum[0] = 0;
  for (int s = 0; s < kAlphabet; ++s)
    cdf.cum[static_cast<size_t>(s) + 1] = cdf.cum[static_cast<size_t>(s)] + counts[static_cast<size_t>(s)];
  return cdf;
}

ScaleTable::ScaleTable() {
  const double lmin = std::log(kSigmaMin), lmax = std::log(kSigmaMax);
  for (int i = 0; i < kSize; ++i)
    entries_[static_cast<size_t>(i)] =
        std::exp(lmin + (lmax - lmin) * static_cast<double>(i) / (kSize - 1));
  entries_[0] = kSigmaMin;
  entries_[kSize - 1] = kSigmaMax;

  cdfs_.reserve(kSize);
  slot_lut_.resize(kSize);
  for (int i = 0; i < kSize; ++i) {
    cdfs_.push_back(build_cdf(i, *this));
    auto& lut = slot_lut_[static_cast<size_t>(i)];
    lut.resize(kCdfTotal);
    const QuantizedCdf& c = cdfs_.back();
    for (int s = 0; s < kAlphabet; ++s)
      std::fill(lut.begin() + c.cum[static_cast<size_t>(s)], lut.begin() + c.cum[static_cast<size_t>(s) + 1],
                static_cast<uint8_t>(s));
  }
}

void ScaleTable::perturb_cum(int index, int cum_entry, int delta) {
  if (index < 0 || index >= kSize) throw DomainError("perturb_cum: bad table index");
  if (cum_entry <= 0 || cum_entry >= kAlphabet)
    throw DomainError("perturb_cum: only interior cumulative entries can shift");
  QuantizedCdf& cdf = cdfs_[static_cast<size_t>(index)];
  cdf.cum[static_cast<size_t>(cum_entry)] =
      static_cast<uint32_t>(static_cast<int64_t>(cdf.cum[static_cast<size_t>(cum_entry)]) + delta);
  auto& lut = slot_lut_[static_cast<size_t>(index)];
  for (int s = 0; s < kAlphabet; ++s)
    std::fill(lut.begin() + cdf.cum[static_cast<size_t>(s)],
              lut.begin() + cdf.cum[static_cast<size_t>(s) + 1], static_cast<uint8_t>(s));
}

int ScaleTable::sigma_to_index(double sigma) const {
  if (std::isnan(sigma)) throw DomainError("sigma_to_index: NaN sigma");
  if (sigma <= entries_[0]) return 0;
  if (sigma > entries_[kSize - 1]) return kSize - 1;
  auto it = std::lower_bound(entries_.begin(), entries_.end(), sigma);
  return static_cast<int>(it - entries_.begin());
}

std::vector<uint8_t> ScaleTable::serialize() const {
  ByteWriter w;
  w.u32(kSize);
  w.u32(kCdfBits);
  for (double e : entries_) w.f64(e);
  for (const auto& c : cdfs_)
    for (uint32_t x : c.cum) w.u32(x);
  return w.bytes;
}

namespace {

struct RansEncoder {
  uint32_t state = kRansLow;
  std::vector<uint8_t> rev;  // bytes emitted in reverse order

  void put(uint32_t cum_start, uint32_t freq) {
    // renormalize so the post-encode state stays below 2^24
    const uint32_t max_state = freq << 8;
    while (state >= max_state) {
      rev.push_back(static_cast<uint8_t>(state & 0xff));
      state >>= 8;
    }
    state = ((state / freq) << kCdfBits) + (state % freq) + cum_start;
  }

  std::vector<uint8_t> finish() {
    std::vector<uint8_t> out(4);
    out[0] = static_cast<uint8_t>(state >> 24);
    out[1] = static_cast<uint8_t>(state >> 16);
    out[2] = static_cast<uint8_t>(state >> 8);
    out[3] = static_cast<uint8_t>(state);
    out.insert(out.end(), rev.rbegin(), rev.rend());
    return out;
  }
};

struct RansDecoder {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  uint32_t state = 0;

  explicit RansDecoder(const std::vector<uint8_t>& b) : buf(b) {
    if (buf.size() < 4) throw DecodeError("rans: stream shorter than flush word");
    state = (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
            (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
    pos = 4;
  }

  uint32_t slot() const { return state & (kCdfTotal - 1); }

  void advance(uint32_t cum_start, uint32_t freq) {
    state = freq * (state >> kCdfBits) + slot() - cum_start;
    while (state < kRansLow) {
      // A mismatched table can demand more bytes than the stream holds; feed
      // zeros so forced decoding degrades to garbage output, never UB.
      const uint8_t byte = pos < buf.size() ? buf[pos++] : 0;
      state = (state << 8) | byte;
    }
  }
};

// uniform byte "CDF": freq 256, cum = b << 8
inline void put_raw_byte(RansEncoder& enc, uint8_t b) {
  enc.put(static_cast<uint32_t>(b) << 8, 256);
}
inline uint8_t get_raw_byte(RansDecoder& dec) {
  const uint8_t b = static_cast<uint8_t>(dec.slot() >> 8);
  dec.advance(static_cast<uint32_t>(b) << 8, 256);
  return b;
}

uint16_t sign_magnitude16(int q) {
  const uint32_t mag = static_cast<uint32_t>(q < 0 ? -static_cast<int64_t>(q) : q);
  if (mag >= kEscapeMagLimit)
    throw EncodeError("rans_encode: symbol " + std::to_string(q) +
                      " exceeds the 16-bit escape range");
  return static_cast<uint16_t>((q < 0 ? 0x8000u : 0u) | mag);
}

}  // namespace

std::vector<uint8_t> rans_encode(const std::vector<int>& symbols,
                                 const std::vector<int>& cdf_indices, const ScaleTable& table) {
  if (symbols.size() != cdf_indices.size())
    throw ContractError("rans_encode: symbols and cdf_indices length mismatch");
  RansEncoder enc;
  for (size_t i = symbols.size(); i-- > 0;) {
    const int q = symbols[i];
    const QuantizedCdf& cdf = table.cdf(cdf_indices[i]);
    if (q < kQMin || q > kQMax) {
      const uint16_t payload = sign_magnitude16(q);
      put_raw_byte(enc, static_cast<uint8_t>(payload & 0xff));
      put_raw_byte(enc, static_cast<uint8_t>(payload >> 8));
      enc.put(cdf.cum[kEscape], cdf.count(kEscape));
    } else {
      const int s = q - kQMin;
      enc.put(cdf.cum[static_cast<size_t>(s)], cdf.count(s));
    }
  }
  return enc.finish();
}

std::vector<int> rans_decode(const std::vector<uint8_t>& bytes,
                             const std::vector<int>& cdf_indices, int count,
                             const ScaleTable& table) {
  if (count < 0 || static_cast<size_t>(count) > cdf_indices.size())
    throw ContractError("rans_decode: count exceeds cdf_indices length");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(count));
  if (count == 0) return out;
  RansDecoder dec(bytes);
  for (int i = 0; i < count; ++i) {
    const int index = cdf_indices[static_cast<size_t>(i)];
    const QuantizedCdf& cdf = table.cdf(index);
    const int s = table.symbol_at(index, dec.slot());
    dec.advance(cdf.cum[static_cast<size_t>(s)], cdf.count(s));
    if (s == kEscape) {
      const uint8_t hi = get_raw_byte(dec);
      const uint8_t lo = get_raw_byte(dec);
      const uint16_t payload = static_cast<uint16_t>((static_cast<uint16_t>(hi) << 8) | lo);
      const int mag = payload & 0x7fff;
      out.push_back((payload & 0x8000) ? -mag : mag);
    } else {
      out.push_back(s + kQMin);
    }
  }
  return out;
}

double estimate_bits(const std::vector<int>& symbols, const std::vector<int>& cdf_indices,
                     const ScaleTable& table) {
  if (symbols.size() != cdf_indices.size())
    throw ContractError("estimate_bits: symbols and cdf_indices length mismatch");
  double bits = 0.0;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const QuantizedCdf& cdf = table.cdf(cdf_indices[i]);
    const int q = symbols[i];
    uint32_t cnt;
    if (q < kQMin || q > kQMax) {
      cnt = cdf.count(kEscape);
      bits += 16.0;
    } else {
      cnt = cdf.count(q - kQMin);
    }
    bits -= std::log2(static_cast<double>(cnt) / static_cast<double>(kCdfTotal));
  }
  return bits;
}

}  // namespace ccomp
