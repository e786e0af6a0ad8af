#pragma once

#include <string>
#include <vector>

#include "ccomp/common.hpp"
#include "ccomp/rng.hpp"

namespace ccomp {

enum class SourceKind { kSourceA, kSourceB, kDirectory };

// Deterministic synthetic image source. Canvases are 48x48x3 in [0,1];
// training samples are random 32x32 crops (plus optional h-flip), test views
// use a fixed crop derived from (seed, index).
class ImageDataset {
 public:
  static ImageDataset generate(SourceKind kind, uint64_t seed, int count, int crop = 32);
  static ImageDataset from_directory(const std::string& path);

  SourceKind kind() const { return kind_; }
  uint64_t seed() const { return seed_; }
  int count() const { return static_cast<int>(canvases_.size()); }
  int crop_size() const { return crop_; }
  const Tensor<float>& canvas(int i) const { return canvases_[static_cast<size_t>(i)]; }

  // (1, crop, crop, 3) deterministic per (seed, index)
  Tensor<float> test_image(int index) const;

  // augmented training sample drawn from the provided stream
  Tensor<float> sample(int index, Rng& aug) const;

  // epoch shuffle, a pure function of (dataset seed, epoch)
  std::vector<int> epoch_order(int epoch) const;

  std::vector<Tensor<float>> test_set(int n) const;

  std::string manifest() const;

 private:
  SourceKind kind_ = SourceKind::kSourceA;
  uint64_t seed_ = 0;
  int crop_ = 32;
  std::vector<Tensor<float>> canvases_;
};

// smooth band-limited fields: white noise blurred twice by a 5x5 binomial
// kernel, per-channel min-max normalized to [0,1]
Tensor<float> gen_canvas_a(Rng& rng, int size);

// piecewise-constant Voronoi mosaic (8 sites, random cell colors) with a
// single 3x3 binomial blur to smooth cell borders
Tensor<float> gen_canvas_b(Rng& rng, int size);

// Binary P6, 8-bit, maxval 255 only.
Tensor<float> load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Tensor<float>& img);

}  // namespace ccomp
