#pragma once

#include <string>
#include <vector>

#include "ccomp/bitstream.hpp"
#include "ccomp/model.hpp"

namespace ccomp {

Tensor<float> clamp01(const Tensor<float>& x);

// 10*log10(1/MSE) over all RGB samples; identical images cap at 99 dB.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

double bpp(const EncodedImage& b);

struct RDPoint {
  double bpp = 0.0;
  double psnr = 0.0;
  double lambda = 0.0;
};

struct RDCurve {
  std::vector<RDPoint> points;
  std::string dataset_tag;
  std::string checkpoint_tag;

  std::string to_csv() const;
  static RDCurve from_csv(const std::string& text);
};

// Average rate difference (%) between two curves at equal quality: log10-rate
// interpolated over PSNR with a shape-preserving monotone cubic, integrated by
// composite Simpson over the overlapping PSNR range.
double bd_rate(const RDCurve& anchor, const RDCurve& test);

// Mean (bpp, PSNR) over a dataset's deterministic test view at each lambda.
RDCurve rd_sweep(const CodecModel<float>& model, const std::vector<Tensor<float>>& images,
                 const std::vector<double>& lambda_grid);

std::vector<double> log_spaced_grid(double lo, double hi, int n);

// Minimal SVG line plot, bpp on x, PSNR (dB) on y, one polyline per curve.
std::string rd_svg(const std::vector<RDCurve>& curves, const std::vector<std::string>& labels);

}  // namespace ccomp
