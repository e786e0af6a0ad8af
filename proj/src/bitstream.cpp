#include "ccomp/bitstream.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ccomp/evaluation.hpp"
#include "ccomp/util.hpp"

namespace ccomp {

namespace {
constexpr char kMagic[] = "CCBS1";
}

std::vector<uint8_t> EncodedImage::serialize() const {
  ByteWriter w;
  w.raw(kMagic, 5);
  w.u8(header.version);
  w.raw(header.pz_fingerprint.data(), 32);
  w.f64(header.lambda);
  w.u32(header.height);
  w.u32(header.width);
  w.u8(static_cast<uint8_t>(payloads.size()));
  for (const auto& p : payloads) w.u32(static_cast<uint32_t>(p.size()));
  for (const auto& p : payloads) w.raw(p.data(), p.size());
  w.u32(crc32_ieee(w.bytes.data(), w.bytes.size()));
  return w.bytes;
}

EncodedImage EncodedImage::deserialize(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4) throw CorruptionError("bitstream: file too short");
  const uint32_t stored = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                          (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                          (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                          (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32_ieee(bytes.data(), bytes.size() - 4) != stored)
    throw CorruptionError("bitstream: CRC32 mismatch");

  ByteReader r(bytes.data(), bytes.size() - 4);
  EncodedImage out;
  if (r.str(5) != kMagic) throw ParseError("bitstream: bad magic");
  out.header.version = r.u8();
  if (out.header.version != 1)
    throw ParseError("bitstream: unsupported version " + std::to_string(out.header.version));
  r.raw(out.header.pz_fingerprint.data(), 32);
  if (std::all_of(out.header.pz_fingerprint.begin(), out.header.pz_fingerprint.end(),
                  [](uint8_t b) { return b == 0; }))
    throw CorruptionError("bitstream: zero pz fingerprint");
  out.header.lambda = r.f64();
  out.header.height = r.u32();
  out.header.width = r.u32();
  const int stages = r.u8();
  uint64_t payload_total = 0;
  for (int i = 0; i < stages; ++i) {
    out.header.payload_lengths.push_back(r.u32());
    payload_total += out.header.payload_lengths.back();
  }
  if (payload_total != r.remaining())
    throw CorruptionError("bitstream: payload lengths sum to " + std::to_string(payload_total) +
                          " but " + std::to_string(r.remaining()) + " bytes remain before CRC");
  for (int i = 0; i < stages; ++i) {
    std::vector<uint8_t> p(out.header.payload_lengths[static_cast<size_t>(i)]);
    r.raw(p.data(), p.size());
    out.payloads.push_back(std::move(p));
  }
  return out;
}

size_t EncodedImage::total_bytes() const { return serialize().size(); }

double EncodedImage::bpp() const {
  return 8.0 * static_cast<double>(total_bytes()) /
         (static_cast<double>(header.height) * static_cast<double>(header.width));
}

EncodedImage encode_image(const Tensor<float>& x, double lambda,
                          const CodecModel<float>& model) {
  check_rank(x, 4, "encode_image");
  ImageEncoding<float> enc = model.encode_pass(x, lambda);

  for (size_t i = 0; i < enc.symbols.size(); ++i)
    for (size_t k = 0; k < enc.symbols[i].size(); ++k)
      if (std::abs(enc.symbols[i][k]) >= (1 << 15))
        throw EncodeError("encode_image: residual overflow at stage " + std::to_string(i + 1) +
                          " position " + std::to_string(k) + " (|q|=" +
                          std::to_string(std::abs(enc.symbols[i][k])) + " >= 2^15)");

  EncodedImage out;
  out.header.pz_fingerprint = model.pz_fingerprint();
  out.header.lambda = lambda;
  out.header.height = static_cast<uint32_t>(x.dims[1]);
  out.header.width = static_cast<uint32_t>(x.dims[2]);
  for (size_t i = 0; i < enc.symbols.size(); ++i) {
    out.payloads.push_back(rans_encode(enc.symbols[i], enc.indices[i], model.scale_table()));
    out.header.payload_lengths.push_back(static_cast<uint32_t>(out.payloads.back().size()));
  }
  return out;
}

DecodedImage<float> decode_image(const EncodedImage& b, const CodecModel<float>& model,
                                 bool force) {
  if (!force && model.pz_fingerprint() != b.header.pz_fingerprint)
    throw IncompatibilityError(
        "decode_image: entropy-model fingerprint mismatch; this bitstream was written with a "
        "different frozen p_Z (pass force to decode anyway)");
  return model.decode_pass(b.payloads, b.header.lambda, static_cast<int>(b.header.height),
                           static_cast<int>(b.header.width));
}

CompatReport compatibility_report(const std::vector<EncodedImage>& bitstreams,
                                  const CodecModel<float>& old_model,
                                  const CodecModel<float>& new_model,
                                  const std::vector<Tensor<float>>& originals) {
  if (bitstreams.size() != originals.size())
    throw ContractError("compatibility_report: bitstream/original count mismatch");
  CompatReport rep;
  rep.all_latents_equal = true;
  int ok = 0;
  for (size_t i = 0; i < bitstreams.size(); ++i) {
    CompatRow row;
    row.name = "item" + std::to_string(i);
    row.bpp = bitstreams[i].bpp();
    try {
      DecodedImage<float> dold = decode_image(bitstreams[i], old_model);
      DecodedImage<float> dnew = decode_image(bitstreams[i], new_model);
      row.psnr_old = psnr(clamp01(dold.recon), originals[i]);
      row.psnr_new = psnr(clamp01(dnew.recon), originals[i]);
      row.delta_psnr = row.psnr_new - row.psnr_old;
      row.latents_equal = true;
      for (size_t s = 0; s < dold.zhat.size() && row.latents_equal; ++s)
        row.latents_equal = dold.zhat[s].v == dnew.zhat[s].v;
      rep.mean_bpp += row.bpp;
      rep.mean_psnr_old += row.psnr_old;
      rep.mean_psnr_new += row.psnr_new;
      rep.mean_delta += row.delta_psnr;
      rep.all_latents_equal = rep.all_latents_equal && row.latents_equal;
      ++ok;
    } catch (const Error& e) {
      row.error = e.what();
      rep.all_latents_equal = false;
    }
    rep.rows.push_back(std::move(row));
  }
  if (ok > 0) {
    rep.mean_bpp /= ok;
    rep.mean_psnr_old /= ok;
    rep.mean_psnr_new /= ok;
    rep.mean_delta /= ok;
  }
  return rep;
}

std::string CompatReport::to_csv() const {
  std::ostringstream o;
  o << "item,bpp,psnr_old,psnr_new,delta_psnr,latents_equal,error\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.4f,%.4f,%.4f,%d,%s\n", r.name.c_str(), r.bpp,
                  r.psnr_old, r.psnr_new, r.delta_psnr, r.latents_equal ? 1 : 0,
                  r.error.c_str());
    o << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.6f,%.4f,%.4f,%.4f,%d,\n", mean_bpp, mean_psnr_old,
                mean_psnr_new, mean_delta, all_latents_equal ? 1 : 0);
  o << buf;
  return o.str();
}

}  // namespace ccomp
