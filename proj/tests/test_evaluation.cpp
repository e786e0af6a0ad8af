#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ccomp/data.hpp"
#include "ccomp/evaluation.hpp"

using namespace ccomp;

namespace {

RDCurve make_curve(std::vector<std::pair<double, double>> pts) {
  RDCurve c;
  for (auto [b, p] : pts) c.points.push_back({b, p, 0.0});
  return c;
}

}  // namespace

TEST_CASE("psnr: cap, closed form for 1/255 error, symmetry, shape errors") {
  Tensor<float> a({1, 4, 4, 3});
  a.fill(0.25f);
  CHECK(psnr(a, a) == 99.0);

  Tensor<float> b = a;
  for (auto& v : b.v) v += 1.0f / 255.0f;
  CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-4));
  CHECK(psnr(a, b) == psnr(b, a));

  Tensor<float> c({1, 2, 2, 3});
  CHECK_THROWS_AS(psnr(a, c), DimensionError);
}

TEST_CASE("clamp01 clips into the unit interval") {
  Tensor<float> x({1, 1, 1, 3}, {-0.5f, 0.5f, 1.5f});
  const auto y = clamp01(x);
  CHECK(y.v == std::vector<float>{0.0f, 0.5f, 1.0f});
}

TEST_CASE("bd_rate: identical curves give exactly zero") {
  const auto c = make_curve({{0.1, 28.0}, {0.3, 31.0}, {0.7, 34.5}, {1.4, 38.0}});
  CHECK(std::abs(bd_rate(c, c)) < 1e-9);
}

TEST_CASE("bd_rate: constant 10% rate offset gives +10.000") {
  const auto a = make_curve({{0.1, 28.0}, {0.3, 31.0}, {0.7, 34.5}, {1.4, 38.0}, {2.0, 40.0}});
  RDCurve t = a;
  for (auto& p : t.points) p.bpp *= 1.10;
  CHECK(bd_rate(a, t) == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(std::abs(bd_rate(a, t) - 10.0) < 0.01);
}

TEST_CASE("bd_rate antisymmetry identity") {
  const auto a = make_curve({{0.12, 27.5}, {0.34, 30.8}, {0.8, 34.0}, {1.5, 37.2}});
  const auto b = make_curve({{0.1, 27.0}, {0.3, 30.5}, {0.75, 34.1}, {1.45, 37.9}});
  const double ab = bd_rate(a, b);
  const double ba = bd_rate(b, a);
  CHECK(std::abs(ba - (-ab / (1.0 + ab / 100.0))) < 0.01);
}

TEST_CASE("bd_rate scale consistency under common bpp scaling") {
  const auto a = make_curve({{0.1, 28.0}, {0.3, 31.0}, {0.7, 34.5}, {1.4, 38.0}});
  const auto b = make_curve({{0.12, 28.4}, {0.33, 31.2}, {0.8, 34.1}, {1.5, 37.6}});
  const double base = bd_rate(a, b);
  for (const double c : {0.01, 3.0, 250.0}) {
    RDCurve as = a, bs = b;
    for (auto& p : as.points) p.bpp *= c;
    for (auto& p : bs.points) p.bpp *= c;
    CHECK(bd_rate(as, bs) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("bd_rate errors: too few points and insufficient overlap") {
  const auto tiny = make_curve({{0.1, 28.0}, {0.3, 31.0}, {0.7, 34.5}});
  const auto full = make_curve({{0.1, 28.0}, {0.3, 31.0}, {0.7, 34.5}, {1.4, 38.0}});
  CHECK_THROWS_AS(bd_rate(tiny, full), DomainError);

  const auto low = make_curve({{0.1, 20.0}, {0.2, 22.0}, {0.3, 24.0}, {0.4, 26.0}});
  const auto high = make_curve({{0.1, 30.0}, {0.2, 32.0}, {0.3, 34.0}, {0.4, 36.0}});
  try {
    bd_rate(low, high);
    CHECK(false);
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("overlap") != std::string::npos);
  }
}

TEST_CASE("rd curve csv round trip uses the lambda,bpp,psnr schema") {
  RDCurve c = make_curve({{0.25, 30.0}, {0.5, 33.0}, {1.0, 36.0}, {1.8, 38.5}});
  for (size_t i = 0; i < c.points.size(); ++i) c.points[i].lambda = 32.0 * (i + 1);
  const auto text = c.to_csv();
  CHECK(text.rfind("lambda,bpp,psnr\n", 0) == 0);
  const auto back = RDCurve::from_csv(text);
  REQUIRE(back.points.size() == 4);
  CHECK(back.points[2].lambda == doctest::Approx(96.0));
  CHECK(back.points[2].bpp == doctest::Approx(1.0));
  CHECK(back.points[2].psnr == doctest::Approx(36.0));
}

TEST_CASE("log_spaced_grid hits both endpoints") {
  const auto g = log_spaced_grid(32.0, 1024.0, 8);
  REQUIRE(g.size() == 8);
  CHECK(g.front() == 32.0);
  CHECK(g.back() == 1024.0);
  for (size_t i = 1; i < g.size(); ++i) {
    CHECK(g[i] > g[i - 1]);
    CHECK(g[i] / g[i - 1] == doctest::Approx(g[1] / g[0]).epsilon(1e-9));
  }
}

TEST_CASE("rd_sweep is deterministic and emits one point per lambda") {
  CodecModel<float> m{ModelConfig{}};
  auto ds = ImageDataset::generate(SourceKind::kSourceA, 50, 4);
  const auto images = ds.test_set(4);
  const auto grid = log_spaced_grid(32.0, 1024.0, 4);
  const auto c1 = rd_sweep(m, images, grid);
  const auto c2 = rd_sweep(m, images, grid);
  REQUIRE(c1.points.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(c1.points[i].bpp == c2.points[i].bpp);
    CHECK(c1.points[i].psnr == c2.points[i].psnr);
    CHECK(c1.points[i].bpp > 0.0);
  }
}

TEST_CASE("svg plot contains axes labels and exactly the computed points") {
  const auto c = make_curve({{0.1, 28.0}, {0.3, 31.0}, {0.7, 34.5}, {1.4, 38.0}});
  const auto svg = rd_svg({c}, {"anchor"});
  CHECK(svg.find("bpp") != std::string::npos);
  CHECK(svg.find("PSNR (dB)") != std::string::npos);
  CHECK(svg.find("anchor") != std::string::npos);
  size_t count = 0;
  for (size_t p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1))
    ++count;
  CHECK(count == 4);
}
