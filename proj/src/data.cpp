#include "ccomp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ccomp/util.hpp"

namespace ccomp {

namespace {

constexpr int kCanvas = 48;

// separable binomial blur with reflect padding; taps must sum to 1
void blur_separable(Tensor<float>& img, const std::vector<float>& taps) {
  const int h = img.dims[1], w = img.dims[2], c = img.dims[3];
  const int r = static_cast<int>(taps.size()) / 2;
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Tensor<float> tmp = img;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (int k = -r; k <= r; ++k)
          acc += taps[static_cast<size_t>(k + r)] * img.at4(0, y, reflect(x + k, w), ch);
        tmp.at4(0, y, x, ch) = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (int k = -r; k <= r; ++k)
          acc += taps[static_cast<size_t>(k + r)] * tmp.at4(0, reflect(y + k, h), x, ch);
        img.at4(0, y, x, ch) = acc;
      }
}

}  // namespace

Tensor<float> gen_canvas_a(Rng& rng, int size) {
  Tensor<float> img({1, size, size, 3});
  for (auto& v : img.v) v = static_cast<float>(rng.normal());
  const std::vector<float> b5 = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
  blur_separable(img, b5);
  blur_separable(img, b5);
  for (int ch = 0; ch < 3; ++ch) {
    float lo = 1e30f, hi = -1e30f;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        lo = std::min(lo, img.at4(0, y, x, ch));
        hi = std::max(hi, img.at4(0, y, x, ch));
      }
    const float span = std::max(hi - lo, 1e-9f);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        img.at4(0, y, x, ch) = (img.at4(0, y, x, ch) - lo) / span;
  }
  return img;
}

Tensor<float> gen_canvas_b(Rng& rng, int size) {
  constexpr int kSites = 8;
  float sy[kSites], sx[kSites], color[kSites][3];
  for (int s = 0; s < kSites; ++s) {
    sy[s] = static_cast<float>(rng.uniform() * size);
    sx[s] = static_cast<float>(rng.uniform() * size);
    for (int ch = 0; ch < 3; ++ch) color[s][ch] = static_cast<float>(rng.uniform());
  }
  Tensor<float> img({1, size, size, 3});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int best = 0;
      float bestd = 1e30f;
      for (int s = 0; s < kSites; ++s) {
        const float dy = sy[s] - (y + 0.5f), dx = sx[s] - (x + 0.5f);
        const float d = dy * dy + dx * dx;
        if (d < bestd) {
          bestd = d;
          best = s;
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at4(0, y, x, ch) = color[best][ch];
    }
  blur_separable(img, {0.25f, 0.5f, 0.25f});
  return img;
}

ImageDataset ImageDataset::generate(SourceKind kind, uint64_t seed, int count, int crop) {
  if (count < 1) throw DomainError("dataset: count must be >= 1");
  if (crop < 1 || crop > kCanvas) throw DomainError("dataset: bad crop size");
  if (kind == SourceKind::kDirectory)
    throw ContractError("dataset: directory kind requires from_directory()");
  ImageDataset ds;
  ds.kind_ = kind;
  ds.seed_ = seed;
  ds.crop_ = crop;
  ds.canvases_.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 0xDA7A0000ULL + static_cast<uint64_t>(i)));
    ds.canvases_.push_back(kind == SourceKind::kSourceA ? gen_canvas_a(rng, kCanvas)
                                                        : gen_canvas_b(rng, kCanvas));
  }
  return ds;
}

ImageDataset ImageDataset::from_directory(const std::string& path) {
  ImageDataset ds;
  ds.kind_ = SourceKind::kDirectory;
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(path))
    if (e.path().extension() == ".ppm") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("dataset: no .ppm files in " + path);
  for (const auto& f : files) ds.canvases_.push_back(load_ppm(f));
  return ds;
}

Tensor<float> ImageDataset::test_image(int index) const {
  const Tensor<float>& cv = canvases_[static_cast<size_t>(index)];
  Rng rng(derive_seed(seed_, 0x7E57000ULL + static_cast<uint64_t>(index)));
  const int maxy = cv.dims[1] - crop_, maxx = cv.dims[2] - crop_;
  const int oy = maxy > 0 ? static_cast<int>(rng.below(static_cast<uint64_t>(maxy + 1))) : 0;
  const int ox = maxx > 0 ? static_cast<int>(rng.below(static_cast<uint64_t>(maxx + 1))) : 0;
  Tensor<float> out({1, crop_, crop_, 3});
  for (int y = 0; y < crop_; ++y)
    for (int x = 0; x < crop_; ++x)
      for (int ch = 0; ch < 3; ++ch) out.at4(0, y, x, ch) = cv.at4(0, oy + y, ox + x, ch);
  return out;
}

Tensor<float> ImageDataset::sample(int index, Rng& aug) const {
  const Tensor<float>& cv = canvases_[static_cast<size_t>(index)];
  const int maxy = cv.dims[1] - crop_, maxx = cv.dims[2] - crop_;
  const int oy = maxy > 0 ? static_cast<int>(aug.below(static_cast<uint64_t>(maxy + 1))) : 0;
  const int ox = maxx > 0 ? static_cast<int>(aug.below(static_cast<uint64_t>(maxx + 1))) : 0;
  const bool flip = aug.uniform() < 0.5;
  Tensor<float> out({1, crop_, crop_, 3});
  for (int y = 0; y < crop_; ++y)
    for (int x = 0; x < crop_; ++x) {
      const int sx = flip ? (ox + crop_ - 1 - x) : (ox + x);
      for (int ch = 0; ch < 3; ++ch) out.at4(0, y, x, ch) = cv.at4(0, oy + y, sx, ch);
    }
  return out;
}

std::vector<int> ImageDataset::epoch_order(int epoch) const {
  std::vector<int> order(canvases_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(derive_seed(seed_, 0xE90C000ULL + static_cast<uint64_t>(epoch)));
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.below(i))]);
  return order;
}

std::vector<Tensor<float>> ImageDataset::test_set(int n) const {
  std::vector<Tensor<float>> out;
  for (int i = 0; i < std::min(n, count()); ++i) out.push_back(test_image(i));
  return out;
}

std::string ImageDataset::manifest() const {
  std::ostringstream o;
  o << "kind="
    << (kind_ == SourceKind::kSourceA ? "a" : (kind_ == SourceKind::kSourceB ? "b" : "dir"))
    << "\nseed=" << seed_ << "\ncount=" << count() << "\ncrop=" << crop_ << "\n";
  return o.str();
}

Tensor<float> load_ppm(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  size_t pos = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError("ppm " + path + ": " + msg + " at byte " + std::to_string(pos));
  };
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("expected integer");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("not a binary P6 file");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1) fail("bad dimensions");
  if (maxval != 255)
    throw ParseError("ppm " + path + ": unsupported maxval " + std::to_string(maxval) +
                     " (only 8-bit maxval 255 is supported)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("expected whitespace after maxval");
  ++pos;
  const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h) * 3;
  if (bytes.size() - pos < need) {
    pos = bytes.size();
    fail("truncated pixel payload (need " + std::to_string(need) + " bytes)");
  }
  Tensor<float> img({1, static_cast<int>(h), static_cast<int>(w), 3});
  for (size_t i = 0; i < need; ++i) img.v[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return img;
}

void save_ppm(const std::string& path, const Tensor<float>& img) {
  check_rank(img, 4, "save_ppm");
  if (img.dims[0] != 1 || img.dims[3] != 3)
    throw DimensionError("save_ppm: expected (1,H,W,3), got " + shape_str(img.dims));
  std::ostringstream head;
  head << "P6\n" << img.dims[2] << " " << img.dims[1] << "\n255\n";
  std::string s = head.str();
  std::vector<uint8_t> out(s.begin(), s.end());
  for (const float v : img.v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    out.push_back(static_cast<uint8_t>(std::lround(c * 255.0f)));
  }
  write_file(path, out.data(), out.size());
}

}  // namespace ccomp
