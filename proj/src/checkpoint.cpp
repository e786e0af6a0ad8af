#include "ccomp/param.hpp"
#include "ccomp/util.hpp"

namespace ccomp {

static constexpr char kMagic[] = "CCKPT1";

std::vector<uint8_t> serialize_checkpoint(const ParamStore<float>& ps,
                                          const std::string& header) {
  ByteWriter w;
  w.raw(kMagic, 6);
  w.u32(static_cast<uint32_t>(header.size()));
  w.str(header);
  w.u32(static_cast<uint32_t>(ps.count()));
  for (size_t i = 0; i < ps.count(); ++i) {
    const Parameter<float>& p = ps[i];
    w.u16(static_cast<uint16_t>(p.name.size()));
    w.str(p.name);
    w.u8(static_cast<uint8_t>(p.group));
    w.u8(static_cast<uint8_t>(p.value.rank()));
    for (int d : p.value.dims) w.u32(static_cast<uint32_t>(d));
    w.raw(p.value.v.data(), p.value.v.size() * sizeof(float));
  }
  w.u32(crc32_ieee(w.bytes.data(), w.bytes.size()));
  return w.bytes;
}

LoadedCheckpoint parse_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 14) throw CorruptionError("checkpoint: file too short");
  const uint32_t stored =
      static_cast<uint32_t>(bytes[bytes.size() - 4]) |
      (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
      (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
      (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32_ieee(bytes.data(), bytes.size() - 4) != stored)
    throw CorruptionError("checkpoint: CRC32 mismatch");
  ByteReader r(bytes.data(), bytes.size() - 4);
  if (r.str(6) != kMagic) throw ParseError("checkpoint: bad magic");
  LoadedCheckpoint out;
  out.header = r.str(r.u32());
  const uint32_t count = r.u32();
  out.params.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const uint8_t g = r.u8();
    if (g > 2) throw ParseError("checkpoint: bad group byte for " + name);
    const uint8_t rank = r.u8();
    Shape dims(rank);
    int64_t n = 1;
    for (auto& d : dims) {
      d = static_cast<int>(r.u32());
      n *= d;
    }
    std::vector<float> v(static_cast<size_t>(n));
    r.raw(v.data(), v.size() * sizeof(float));
    out.params.emplace_back(std::move(name), static_cast<Group>(g), std::move(dims),
                            std::move(v));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& ps,
                     const std::string& header) {
  const auto bytes = serialize_checkpoint(ps, header);
  write_file(path, bytes.data(), bytes.size());
}

}  // namespace ccomp
