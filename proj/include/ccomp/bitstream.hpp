#pragma once

#include <array>
#include <string>
#include <vector>

#include "ccomp/model.hpp"

namespace ccomp {

// .ccbs container: "CCBS1" | version u8 | pz fingerprint (32B) | lambda as
// f64 bits | height u32 | width u32 | stage count u8 | per-stage payload
// lengths u32 | payloads | CRC32 over all preceding bytes. Little-endian.
struct BitstreamHeader {
  uint8_t version = 1;
  std::array<uint8_t, 32> pz_fingerprint{};
  double lambda = 0.0;
  uint32_t height = 0, width = 0;
  std::vector<uint32_t> payload_lengths;
};

struct EncodedImage {
  BitstreamHeader header;
  std::vector<std::vector<uint8_t>> payloads;

  std::vector<uint8_t> serialize() const;
  static EncodedImage deserialize(const std::vector<uint8_t>& bytes);

  size_t total_bytes() const;
  double bpp() const;
};

EncodedImage encode_image(const Tensor<float>& x, double lambda, const CodecModel<float>& model);

// Fingerprint gate on by default; force=true reproduces the corrupted-output
// failure mode instead of erroring.
DecodedImage<float> decode_image(const EncodedImage& b, const CodecModel<float>& model,
                                 bool force = false);

struct CompatRow {
  std::string name;
  double bpp = 0.0;
  double psnr_old = 0.0;
  double psnr_new = 0.0;
  double delta_psnr = 0.0;
  bool latents_equal = false;
  std::string error;  // non-empty if this item failed to decode
};

struct CompatReport {
  std::vector<CompatRow> rows;
  double mean_bpp = 0.0;
  double mean_psnr_old = 0.0;
  double mean_psnr_new = 0.0;
  double mean_delta = 0.0;
  bool all_latents_equal = false;

  std::string to_csv() const;
};

CompatReport compatibility_report(const std::vector<EncodedImage>& bitstreams,
                                  const CodecModel<float>& old_model,
                                  const CodecModel<float>& new_model,
                                  const std::vector<Tensor<float>>& originals);

}  // namespace ccomp
