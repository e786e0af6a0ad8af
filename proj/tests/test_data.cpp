#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ccomp/adam.hpp"
#include "ccomp/data.hpp"
#include "ccomp/graph.hpp"
#include "ccomp/util.hpp"

using namespace ccomp;

TEST_CASE("source A reproducibility and range") {
  auto a1 = ImageDataset::generate(SourceKind::kSourceA, 7, 8);
  auto a2 = ImageDataset::generate(SourceKind::kSourceA, 7, 8);
  for (int i = 0; i < 8; ++i) CHECK(a1.canvas(i).v == a2.canvas(i).v);
  for (int i = 0; i < 8; ++i)
    for (const float v : a1.canvas(i).v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  auto a3 = ImageDataset::generate(SourceKind::kSourceA, 8, 8);
  CHECK(a1.canvas(0).v != a3.canvas(0).v);
}

TEST_CASE("source A horizontal neighbor correlation exceeds 0.5") {
  auto ds = ImageDataset::generate(SourceKind::kSourceA, 3, 24);
  double sxx = 0, sxy = 0, sx = 0, sy = 0, syy = 0;
  int64_t n = 0;
  for (int i = 0; i < ds.count(); ++i) {
    const auto& img = ds.canvas(i);
    for (int y = 0; y < img.dims[1]; ++y)
      for (int x = 0; x + 1 < img.dims[2]; ++x)
        for (int c = 0; c < 3; ++c) {
          const double a = img.at4(0, y, x, c), b = img.at4(0, y, x + 1, c);
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
          ++n;
        }
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double va = sxx / n - (sx / n) * (sx / n);
  const double vb = syy / n - (sy / n) * (sy / n);
  const double corr = cov / std::sqrt(va * vb);
  CHECK(corr > 0.5);
  MESSAGE("horizontal neighbor correlation: ", corr);
}

TEST_CASE("source B reproducibility and range") {
  auto b1 = ImageDataset::generate(SourceKind::kSourceB, 11, 8);
  auto b2 = ImageDataset::generate(SourceKind::kSourceB, 11, 8);
  for (int i = 0; i < 8; ++i) CHECK(b1.canvas(i).v == b2.canvas(i).v);
  for (int i = 0; i < 8; ++i)
    for (const float v : b1.canvas(i).v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
}

TEST_CASE("sources A and B are separable by a 2-layer logistic classifier") {
  const int n_train = 192, n_test = 96;
  auto a = ImageDataset::generate(SourceKind::kSourceA, 100, n_train + n_test);
  auto b = ImageDataset::generate(SourceKind::kSourceB, 200, n_train + n_test);

  const int dim = 32 * 32 * 3;
  const int hidden = 16;
  ParamStore<double> ps;
  Rng init(42);
  Tensor<double> w1({dim, hidden}), b1({hidden}), w2({hidden, 1}), b2({1});
  for (auto& v : w1.v) v = 0.02 * init.normal();
  for (auto& v : w2.v) v = 0.2 * init.normal();
  auto& pw1 = ps.add("w1", Group::kEnc, w1);
  auto& pb1 = ps.add("b1", Group::kEnc, b1);
  auto& pw2 = ps.add("w2", Group::kEnc, w2);
  auto& pb2 = ps.add("b2", Group::kEnc, b2);
  Adam<double> opt(ps, 1e-3, 0.0);

  auto flatten = [&](const Tensor<float>& img, Tensor<double>* row, int r) {
    for (int i = 0; i < dim; ++i) row->v[static_cast<size_t>(r) * dim + i] = img.v[static_cast<size_t>(i)];
  };
  const int bs = 32;
  Rng order(5);
  for (int it = 0; it < 400; ++it) {
    Tensor<double> x({bs, dim});
    std::vector<double> labels(bs);
    for (int i = 0; i < bs; ++i) {
      const bool is_b = order.uniform() < 0.5;
      const int idx = static_cast<int>(order.below(n_train));
      flatten((is_b ? b : a).test_image(idx), &x, i);
      labels[static_cast<size_t>(i)] = is_b ? 1.0 : 0.0;
    }
    ps.zero_grads();
    Graph<double> g;
    int xi = g.input(x);
    int hid = g.gelu(g.linear(xi, g.param(pw1), g.param(pb1)));
    int logit = g.linear(hid, g.param(pw2), g.param(pb2));
    // logistic loss: mean( softplus(z) - y*z )
    int sp = g.softplus_add(logit, 0.0);
    std::vector<double> wpos(static_cast<size_t>(bs), 1.0 / bs), wneg(static_cast<size_t>(bs));
    for (int i = 0; i < bs; ++i) wneg[static_cast<size_t>(i)] = -labels[static_cast<size_t>(i)] / bs;
    int loss = g.add(g.weighted_sum(g.sum_per_item(sp), wpos),
                     g.weighted_sum(g.sum_per_item(logit), wneg));
    g.backward(loss);
    opt.step();
  }

  int correct = 0;
  for (int i = 0; i < n_test; ++i) {
    for (int cls = 0; cls < 2; ++cls) {
      Tensor<double> x({1, dim});
      flatten((cls ? b : a).test_image(n_train + i), &x, 0);
      Graph<double> g;
      int logit = g.linear(g.gelu(g.linear(g.input(x), g.param(pw1), g.param(pb1))),
                           g.param(pw2), g.param(pb2));
      const bool pred_b = g.value(logit).v[0] > 0.0;
      if (pred_b == (cls == 1)) ++correct;
    }
  }
  const double acc = static_cast<double>(correct) / (2.0 * n_test);
  CHECK(acc > 0.9);
  MESSAGE("A/B held-out accuracy: ", acc);
}

TEST_CASE("iteration order is a pure function of (seed, epoch)") {
  auto ds = ImageDataset::generate(SourceKind::kSourceA, 13, 32);
  CHECK(ds.epoch_order(0) == ds.epoch_order(0));
  CHECK(ds.epoch_order(0) != ds.epoch_order(1));
  auto ds2 = ImageDataset::generate(SourceKind::kSourceA, 13, 32);
  CHECK(ds.epoch_order(4) == ds2.epoch_order(4));
}

TEST_CASE("test view is deterministic; training samples stay in range") {
  auto ds = ImageDataset::generate(SourceKind::kSourceB, 17, 8);
  CHECK(ds.test_image(3).v == ds.test_image(3).v);
  CHECK(ds.test_image(3).dims == Shape{1, 32, 32, 3});
  Rng aug(1);
  for (int i = 0; i < 8; ++i) {
    auto s = ds.sample(i, aug);
    CHECK(s.dims == Shape{1, 32, 32, 3});
    for (const float v : s.v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("ppm: 1x1 white round trip and manifest") {
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string path = dir + "/ccomp_test_white.ppm";
  Tensor<float> white({1, 1, 1, 3});
  white.fill(1.0f);
  save_ppm(path, white);
  const auto back = load_ppm(path);
  CHECK(back.dims == Shape{1, 1, 1, 3});
  for (const float v : back.v) CHECK(v == doctest::Approx(1.0f));

  auto ds = ImageDataset::generate(SourceKind::kSourceA, 7, 2);
  CHECK(ds.manifest().find("kind=a") != std::string::npos);
  CHECK(ds.manifest().find("seed=7") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("ppm round trip is identity at 8-bit precision") {
  const std::string path =
      std::filesystem::temp_directory_path().string() + "/ccomp_test_rt.ppm";
  auto ds = ImageDataset::generate(SourceKind::kSourceB, 3, 1);
  const auto img = ds.test_image(0);
  save_ppm(path, img);
  const auto back = load_ppm(path);
  save_ppm(path, back);
  const auto back2 = load_ppm(path);
  CHECK(back.v == back2.v);  // stable after one quantization
  for (size_t i = 0; i < img.v.size(); ++i)
    CHECK(std::abs(back.v[i] - img.v[i]) <= 0.5f / 255.0f + 1e-6f);
  std::filesystem::remove(path);
}

TEST_CASE("ppm parse errors carry byte offsets; unsupported maxval is explicit") {
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string p1 = dir + "/ccomp_bad1.ppm";
  write_file(p1, "P5\n1 1\n255\nx", 12);
  CHECK_THROWS_AS(load_ppm(p1), ParseError);

  const std::string p2 = dir + "/ccomp_bad2.ppm";
  write_file(p2, "P6\n1 1\n65535\n", 13);
  CHECK_THROWS_WITH_AS(load_ppm(p2), doctest::Contains("maxval"), ParseError);

  const std::string p3 = dir + "/ccomp_bad3.ppm";
  write_file(p3, "P6\n2 2\n255\nab", 13);  // truncated payload
  try {
    load_ppm(p3);
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  for (const auto& p : {p1, p2, p3}) std::filesystem::remove(p);
}
