#include "ccomp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ccomp {

namespace {
constexpr double kPsnrCap = 99.0;
}

Tensor<float> clamp01(const Tensor<float>& x) {
  Tensor<float> y = x;
  for (auto& v : y.v) v = std::min(1.0f, std::max(0.0f, v));
  return y;
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.dims != b.dims)
    throw DimensionError("psnr: shapes " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  double se = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.v.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double bpp(const EncodedImage& b) { return b.bpp(); }

std::string RDCurve::to_csv() const {
  std::ostringstream o;
  o << "lambda,bpp,psnr\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.8g,%.8f,%.4f\n", p.lambda, p.bpp, p.psnr);
    o << buf;
  }
  return o.str();
}

RDCurve RDCurve::from_csv(const std::string& text) {
  RDCurve c;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("lambda", 0) == 0) continue;
    }
    RDPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.lambda, &p.bpp, &p.psnr) != 3)
      throw ParseError("rd curve csv: bad line: " + line);
    c.points.push_back(p);
  }
  return c;
}

namespace {

// Fritsch-Carlson shape-preserving cubic Hermite interpolant of y over
// strictly increasing x.
struct Pchip {
  std::vector<double> x, y, d;

  Pchip(std::vector<double> xs, std::vector<double> ys) : x(std::move(xs)), y(std::move(ys)) {
    const size_t m = x.size();
    std::vector<double> h(m - 1), delta(m - 1);
    for (size_t k = 0; k + 1 < m; ++k) {
      h[k] = x[k + 1] - x[k];
      delta[k] = (y[k + 1] - y[k]) / h[k];
    }
    d.resize(m);
    if (m == 2) {
      d[0] = d[1] = delta[0];
    } else {
      d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
      d[m - 1] = end_slope(h[m - 2], h[m - 3], delta[m - 2], delta[m - 3]);
      for (size_t k = 1; k + 1 < m; ++k) {
        if (delta[k - 1] * delta[k] <= 0.0) {
          d[k] = 0.0;
        } else {
          const double w1 = 2.0 * h[k] + h[k - 1];
          const double w2 = h[k] + 2.0 * h[k - 1];
          d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
      }
    }
  }

  static double end_slope(double h0, double h1, double d0, double d1) {
    double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0.0) return 0.0;
    if (d0 * d1 < 0.0 && std::abs(s) > 3.0 * std::abs(d0)) return 3.0 * d0;
    return s;
  }

  double operator()(double q) const {
    size_t k = std::upper_bound(x.begin(), x.end(), q) - x.begin();
    k = std::min(std::max<size_t>(k, 1), x.size() - 1) - 1;
    const double h = x[k + 1] - x[k];
    const double t = (q - x[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return y[k] * (2 * t3 - 3 * t2 + 1) + h * d[k] * (t3 - 2 * t2 + t) +
           y[k + 1] * (-2 * t3 + 3 * t2) + h * d[k + 1] * (t3 - t2);
  }
};

// Sort by bpp and keep the quality-monotone frontier so PSNR is a valid,
// strictly increasing abscissa.
Pchip curve_interp(const RDCurve& c, double* psnr_min, double* psnr_max) {
  std::vector<RDPoint> pts = c.points;
  std::sort(pts.begin(), pts.end(), [](const RDPoint& a, const RDPoint& b) {
    return a.bpp < b.bpp;
  });
  std::vector<double> px, py;
  for (const auto& p : pts) {
    if (p.bpp <= 0.0) throw DomainError("bd_rate: bpp must be positive");
    if (!px.empty() && p.psnr <= px.back() + 1e-12) continue;
    px.push_back(p.psnr);
    py.push_back(std::log10(p.bpp));
  }
  if (px.size() < 4)
    throw DomainError("bd_rate: need >= 4 monotone RD points, have " +
                      std::to_string(px.size()));
  *psnr_min = px.front();
  *psnr_max = px.back();
  return Pchip(std::move(px), std::move(py));
}

}  // namespace

double bd_rate(const RDCurve& anchor, const RDCurve& test) {
  double a_lo, a_hi, t_lo, t_hi;
  const Pchip fa = curve_interp(anchor, &a_lo, &a_hi);
  const Pchip ft = curve_interp(test, &t_lo, &t_hi);
  const double lo = std::max(a_lo, t_lo);
  const double hi = std::min(a_hi, t_hi);
  if (hi - lo < 0.5)
    throw DomainError("bd_rate: PSNR overlap [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "] is narrower than 0.5 dB (anchor [" +
                      std::to_string(a_lo) + ", " + std::to_string(a_hi) + "], test [" +
                      std::to_string(t_lo) + ", " + std::to_string(t_hi) + "])");

  constexpr int kIntervals = 1000;  // composite Simpson, even count
  const double step = (hi - lo) / kIntervals;
  auto diff = [&](double p) { return ft(p) - fa(p); };
  double sum = diff(lo) + diff(hi);
  for (int i = 1; i < kIntervals; ++i) sum += diff(lo + i * step) * (i % 2 ? 4.0 : 2.0);
  const double integral = sum * step / 3.0;
  const double mean_log_ratio = integral / (hi - lo);
  return 100.0 * (std::pow(10.0, mean_log_ratio) - 1.0);
}

std::vector<double> log_spaced_grid(double lo, double hi, int n) {
  std::vector<double> g;
  if (n == 1) return {lo};
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < n; ++i)
    g.push_back(std::exp(llo + (lhi - llo) * static_cast<double>(i) / (n - 1)));
  g.front() = lo;
  g.back() = hi;
  return g;
}

RDCurve rd_sweep(const CodecModel<float>& model, const std::vector<Tensor<float>>& images,
                 const std::vector<double>& lambda_grid) {
  RDCurve curve;
  for (const double lam : lambda_grid) {
    double mbpp = 0.0, mpsnr = 0.0;
    for (const auto& img : images) {
      const EncodedImage b = encode_image(img, lam, model);
      mbpp += b.bpp();
      mpsnr += psnr(clamp01(model.encode_pass(img, lam).recon), img);
    }
    RDPoint p;
    p.lambda = lam;
    p.bpp = mbpp / static_cast<double>(images.size());
    p.psnr = mpsnr / static_cast<double>(images.size());
    curve.points.push_back(p);
  }
  return curve;
}

std::string rd_svg(const std::vector<RDCurve>& curves, const std::vector<std::string>& labels) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  const int w = 640, h = 440, ml = 64, mr = 20, mt = 20, mb = 48;
  double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      xmin = std::min(xmin, p.bpp);
      xmax = std::max(xmax, p.bpp);
      ymin = std::min(ymin, p.psnr);
      ymax = std::max(ymax, p.psnr);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  const double xpad = 0.05 * (xmax - xmin + 1e-9), ypad = 0.05 * (ymax - ymin + 1e-9);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;
  auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto sy = [&](double v) { return h - mb - (v - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ostringstream o;
  o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  o << "<rect width='100%' height='100%' fill='white'/>\n";
  char buf[256];
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1='%.1f' y1='%d' x2='%.1f' y2='%d' stroke='#ddd'/>\n", sx(xv), mt,
                  sx(xv), h - mb);
    o << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1='%d' y1='%.1f' x2='%d' y2='%.1f' stroke='#ddd'/>\n", ml, sy(yv),
                  w - mr, sy(yv));
    o << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%d' font-size='11' text-anchor='middle'>%.3f</text>\n",
                  sx(xv), h - mb + 16, xv);
    o << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x='%d' y='%.1f' font-size='11' text-anchor='end'>%.1f</text>\n",
                  ml - 6, sy(yv) + 4, yv);
    o << buf;
  }
  o << "<text x='" << (ml + (w - ml - mr) / 2) << "' y='" << (h - 10)
    << "' font-size='13' text-anchor='middle'>bpp</text>\n";
  o << "<text x='16' y='" << (mt + (h - mt - mb) / 2)
    << "' font-size='13' text-anchor='middle' transform='rotate(-90 16 "
    << (mt + (h - mt - mb) / 2) << ")'>PSNR (dB)</text>\n";

  for (size_t ci = 0; ci < curves.size(); ++ci) {
    const char* color = kColors[ci % 8];
    std::ostringstream pts;
    for (const auto& p : curves[ci].points) pts << sx(p.bpp) << "," << sy(p.psnr) << " ";
    o << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='"
      << pts.str() << "'/>\n";
    for (const auto& p : curves[ci].points) {
      std::snprintf(buf, sizeof(buf), "<circle cx='%.1f' cy='%.1f' r='2.6' fill='%s'/>\n",
                    sx(p.bpp), sy(p.psnr), color);
      o << buf;
    }
    const std::string label = ci < labels.size() ? labels[ci] : ("curve" + std::to_string(ci));
    std::snprintf(buf, sizeof(buf),
                  "<text x='%d' y='%d' font-size='12' fill='%s'>%s</text>\n", w - mr - 170,
                  mt + 16 + static_cast<int>(ci) * 16, color, label.c_str());
    o << buf;
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace ccomp
