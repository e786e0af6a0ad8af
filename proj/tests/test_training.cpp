#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ccomp/evaluation.hpp"
#include "ccomp/training.hpp"

using namespace ccomp;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.input_h = cfg.input_w = 16;
  cfg.feat_channels = {8, 8};
  cfg.latent_channels = 2;
  cfg.blocks_per_stage = 1;
  cfg.cond_width = 4;
  cfg.ctx_width = 6;
  cfg.dw_kernel = 5;
  cfg.seq_dec_width = 12;
  return cfg;
}

CodecModel<float> clone(const CodecModel<float>& m) {
  return model_from_checkpoint<float>(
      parse_checkpoint(serialize_checkpoint(m.params(), m.config().serialize())));
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-4});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("sample_lambda: support, closed-form median, degenerate bounds") {
  LambdaDistribution dist{32.0, 1024.0};
  Rng rng(1);
  std::vector<double> samples;
  samples.reserve(100000);
  for (int i = 0; i < 100000; ++i) {
    const double l = sample_lambda(dist, rng);
    CHECK(l >= 32.0);
    CHECK(l <= 1024.0);
    samples.push_back(l);
  }
  std::nth_element(samples.begin(), samples.begin() + 50000, samples.end());
  const double median = samples[50000];
  CHECK(std::abs(median - 181.02) / 181.02 < 0.02);  // sqrt(32*1024)

  LambdaDistribution point{64.0, 64.0};
  for (int i = 0; i < 10; ++i) CHECK(sample_lambda(point, rng) == 64.0);

  CHECK_THROWS_AS(LambdaDistribution(0.0, 10.0), DomainError);
  CHECK_THROWS_AS(LambdaDistribution(10.0, 1.0), DomainError);
}

TEST_CASE("combined_loss: endpoints, mean, and domain") {
  CHECK(combined_loss(3.0, 7.0, 0.0) == 3.0);
  CHECK(combined_loss(3.0, 7.0, 1.0) == 7.0);
  CHECK(combined_loss(3.0, 7.0, 0.5) == 5.0);
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, -0.1), DomainError);
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, 1.1), DomainError);
}

TEST_CASE("rd loss on an untrained model: positive rate and distortion") {
  CodecModel<float> m(micro_config());
  auto ds = ImageDataset::generate(SourceKind::kSourceA, 3, 8, 16);
  std::vector<const Tensor<float>*> items;
  std::vector<Tensor<float>> store;
  for (int i = 0; i < 4; ++i) store.push_back(ds.test_image(i));
  for (const auto& t : store) items.push_back(&t);
  const auto x = stack_batch(items);

  Graph<float> g;
  Rng noise(5);
  const std::vector<double> lambdas(4, 128.0);
  const auto fwd = m.build_train_forward(g, x, lambdas, noise);
  const auto& bits = g.value(fwd.bits_item);
  const auto& sq = g.value(fwd.sqerr_item);
  for (const float b : bits.v) CHECK(b > 0.0f);
  for (const float s : sq.v) CHECK(s > 0.0f);

  // lambda -> 0 limit: the loss reduces to the pure rate term
  const int loss_tiny = attach_rd_loss(g, fwd, {1e-12, 1e-12, 1e-12, 1e-12}, 256, 768);
  double mean_bpp = 0.0;
  for (const float b : bits.v) mean_bpp += b / (4.0 * 256.0);
  CHECK(g.value(loss_tiny).v[0] == doctest::Approx(mean_bpp).epsilon(1e-5));
}

TEST_CASE("full rd loss on the micro model matches finite differences") {
  CodecModel<double> m(micro_config());
  REQUIRE(m.params().total_values() <= 5000);
  auto ds = ImageDataset::generate(SourceKind::kSourceA, 11, 4, 16);
  std::vector<Tensor<double>> imgs;
  for (int i = 0; i < 2; ++i) imgs.push_back(ds.test_image(i).cast<double>());
  std::vector<const Tensor<double>*> ptrs{&imgs[0], &imgs[1]};
  const auto x = stack_batch(ptrs);
  const std::vector<double> lambdas{96.0, 420.0};
  const int pixels = 16 * 16, hwc = pixels * 3;

  auto eval_loss = [&]() {
    Graph<double> g;
    Rng noise(77);  // same noise realization on every evaluation
    const auto fwd = m.build_train_forward(g, x, lambdas, noise);
    return g.value(attach_rd_loss(g, fwd, lambdas, pixels, hwc)).v[0];
  };

  // analytic gradients
  m.params().set_trainable_groups(true, true, true);
  m.params().zero_grads();
  {
    Graph<double> g;
    Rng noise(77);
    const auto fwd = m.build_train_forward(g, x, lambdas, noise);
    g.backward(attach_rd_loss(g, fwd, lambdas, pixels, hwc));
  }

  double max_err = 0.0;
  int checked = 0;
  std::string worst;
  const double h = 1e-3;
  for (size_t pi = 0; pi < m.params().count(); ++pi) {
    auto& p = m.params()[pi];
    for (int64_t j = 0; j < p.value.size(); ++j) {
      const double orig = p.value.v[static_cast<size_t>(j)];
      p.value.v[static_cast<size_t>(j)] = orig + h;
      const double up = eval_loss();
      p.value.v[static_cast<size_t>(j)] = orig - h;
      const double dn = eval_loss();
      p.value.v[static_cast<size_t>(j)] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double err = rel_err(p.grad.v[static_cast<size_t>(j)], fd);
      if (err > max_err) {
        max_err = err;
        worst = p.name + "[" + std::to_string(j) + "]";
      }
      ++checked;
    }
  }
  MESSAGE("checked ", checked, " parameters, max rel err ", max_err, " at ", worst);
  CHECK(max_err < 1e-3);
}

TEST_CASE("knowledge-replay loss: gradient path and initialization identity") {
  CodecModel<float> base(micro_config());
  auto old_model = clone(base);
  auto current = clone(base);

  auto ds = ImageDataset::generate(SourceKind::kSourceA, 21, 8, 16);
  std::vector<Tensor<float>> store;
  std::vector<const Tensor<float>*> items;
  for (int i = 0; i < 4; ++i) store.push_back(ds.test_image(i));
  for (const auto& t : store) items.push_back(&t);
  const auto x_old = stack_batch(items);
  const std::vector<double> lambdas(4, 200.0);

  std::vector<Tensor<float>> zhats, es;
  old_model.replay_latents(x_old, lambdas, &zhats, &es);

  current.params().set_trainable_groups(true, true, false);
  current.params().zero_grads();
  Graph<float> g;
  const auto fwd = current.build_dec_forward(g, zhats, es, lambdas);
  const int sq = g.sum_per_item(g.square(g.sub(fwd.xhat, g.input(x_old))));
  std::vector<float> w(4, 200.0f / (4.0f * 768.0f));
  const int l_kr = g.weighted_sum(sq, w);
  CHECK(g.value(l_kr).v[0] >= 0.0f);
  g.backward(l_kr);

  // gradients flow only into dec-group parameters
  double enc_pz_grad = 0.0, dec_grad = 0.0;
  for (size_t i = 0; i < current.params().count(); ++i) {
    const auto& p = current.params()[i];
    double gsum = 0.0;
    for (const float v : p.grad.v) gsum += std::abs(v);
    if (p.group == Group::kDec)
      dec_grad += gsum;
    else
      enc_pz_grad += gsum;
  }
  CHECK(enc_pz_grad == 0.0);
  CHECK(dec_grad > 0.0);

  // with f_dec^(1) == f_dec^(0), l_kr equals the old model's distortion
  const auto recon_old = old_model.decoder_pass(zhats, es, 200.0);
  double mse = 0.0;
  for (size_t i = 0; i < recon_old.v.size(); ++i) {
    const double d = static_cast<double>(recon_old.v[i]) - static_cast<double>(x_old.v[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(recon_old.v.size());
  CHECK(g.value(l_kr).v[0] == doctest::Approx(200.0 * mse).epsilon(1e-4));
}

TEST_CASE("frozen-pz gradients: fine-tune strategies see zero pz gradient") {
  CodecModel<float> m(micro_config());
  m.params().set_trainable_groups(true, true, false);  // ft_enc_dec
  auto ds = ImageDataset::generate(SourceKind::kSourceA, 31, 4, 16);
  std::vector<Tensor<float>> store{ds.test_image(0), ds.test_image(1)};
  std::vector<const Tensor<float>*> items{&store[0], &store[1]};
  const auto x = stack_batch(items);

  m.params().zero_grads();
  Graph<float> g;
  Rng noise(9);
  const std::vector<double> lambdas(2, 300.0);
  const auto fwd = m.build_train_forward(g, x, lambdas, noise);
  g.backward(attach_rd_loss(g, fwd, lambdas, 256, 768));

  for (size_t i = 0; i < m.params().count(); ++i) {
    const auto& p = m.params()[i];
    if (p.group != Group::kPz) continue;
    for (const float v : p.grad.v) CHECK(v == 0.0f);
  }
}

TEST_CASE("train_model freeze contracts per strategy") {
  auto data = ImageDataset::generate(SourceKind::kSourceA, 41, 32, 16);
  CodecModel<float> base(micro_config());
  const auto fp0 = base.pz_fingerprint();

  TrainConfig tc;
  tc.iterations = 12;
  tc.batch_size = 4;
  tc.seed = 5;
  tc.lambda_dist = {32.0, 1024.0};
  tc.log_every = 6;

  SUBCASE("pretrain trains all groups; fingerprint changes") {
    auto m = clone(base);
    tc.strategy = Strategy::kPretrain;
    const auto res = train_model(m, tc, data, nullptr, nullptr);
    CHECK(!res.diverged);
    CHECK(m.pz_fingerprint() != fp0);
    CHECK(!res.ema_values.empty());
  }

  SUBCASE("ft_enc changes only enc; dec bytes identical; pz frozen") {
    auto m = clone(base);
    tc.strategy = Strategy::kFtEnc;
    train_model(m, tc, data, nullptr, nullptr);
    CHECK(m.pz_fingerprint() == fp0);
    bool enc_changed = false;
    for (size_t i = 0; i < m.params().count(); ++i) {
      const auto& p = m.params()[i];
      const auto& q = base.params()[i];
      if (p.group == Group::kDec || p.group == Group::kPz)
        CHECK(p.value.v == q.value.v);
      else if (p.value.v != q.value.v)
        enc_changed = true;
    }
    CHECK(enc_changed);
  }

  SUBCASE("ft_enc_dec freezes pz only") {
    auto m = clone(base);
    tc.strategy = Strategy::kFtEncDec;
    train_model(m, tc, data, nullptr, nullptr);
    CHECK(m.pz_fingerprint() == fp0);
  }

  SUBCASE("kr with alpha=1: enc effectively frozen, dec moves, pz frozen") {
    auto m = clone(base);
    auto old_model = clone(base);
    ReplayBuffer replay{&data, &old_model, {32.0, 1024.0}};
    tc.strategy = Strategy::kKr;
    tc.alpha = 1.0;
    train_model(m, tc, data, &replay, nullptr);
    CHECK(m.pz_fingerprint() == fp0);
    bool dec_changed = false;
    for (size_t i = 0; i < m.params().count(); ++i) {
      const auto& p = m.params()[i];
      const auto& q = base.params()[i];
      if (p.group == Group::kEnc || p.group == Group::kPz)
        CHECK(p.value.v == q.value.v);
      else if (p.value.v != q.value.v)
        dec_changed = true;
    }
    CHECK(dec_changed);
  }

  SUBCASE("kr requires a replay buffer") {
    auto m = clone(base);
    tc.strategy = Strategy::kKr;
    CHECK_THROWS_AS(train_model(m, tc, data, nullptr, nullptr), ContractError);
  }
}

TEST_CASE("new-rate bounds may exceed the pretraining range") {
  LambdaDistribution dist{32.0, 4096.0};
  Rng rng(3);
  bool above = false;
  for (int i = 0; i < 4000; ++i) above = above || sample_lambda(dist, rng) > 1024.0;
  CHECK(above);
}

TEST_CASE("determinism: same seed and build give an identical loss trajectory") {
  auto data = ImageDataset::generate(SourceKind::kSourceA, 51, 32, 16);
  TrainConfig tc;
  tc.strategy = Strategy::kPretrain;
  tc.iterations = 110;
  tc.batch_size = 4;
  tc.seed = 17;
  tc.lambda_dist = {32.0, 1024.0};
  tc.log_every = 1;

  CodecModel<float> m1(micro_config());
  CodecModel<float> m2(micro_config());
  const auto r1 = train_model(m1, tc, data, nullptr, nullptr);
  const auto r2 = train_model(m2, tc, data, nullptr, nullptr);
  REQUIRE(r1.log.size() == r2.log.size());
  REQUIRE(r1.log.size() >= 100);
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].combined == r2.log[i].combined);
    CHECK(r1.log[i].rate_bits == r2.log[i].rate_bits);
  }
  for (size_t i = 0; i < m1.params().count(); ++i)
    CHECK(m1.params()[i].value.v == m2.params()[i].value.v);
}

TEST_CASE("micro pretraining reduces the loss") {
  auto data = ImageDataset::generate(SourceKind::kSourceA, 61, 64, 16);
  TrainConfig tc;
  tc.strategy = Strategy::kPretrain;
  tc.iterations = 300;
  tc.batch_size = 8;
  tc.seed = 2;
  tc.lambda_dist = {32.0, 1024.0};
  tc.log_every = 10;

  CodecModel<float> m(micro_config());
  const auto res = train_model(m, tc, data, nullptr, nullptr);
  CHECK(!res.diverged);
  double early = 0.0, late = 0.0;
  for (size_t i = 0; i < 5; ++i) early += res.log[i].combined / 5.0;
  for (size_t i = res.log.size() - 5; i < res.log.size(); ++i)
    late += res.log[i].combined / 5.0;
  MESSAGE("early ", early, " late ", late);
  CHECK(late < early);
}

TEST_CASE("divergence aborts and restores the last snapshot") {
  auto data = ImageDataset::generate(SourceKind::kSourceA, 71, 16, 16);
  CodecModel<float> m(micro_config());
  m.params().at("enc.stem.w").value.v[0] = std::nanf("");
  TrainConfig tc;
  tc.strategy = Strategy::kPretrain;
  tc.iterations = 10;
  tc.batch_size = 2;
  tc.seed = 1;
  const auto res = train_model(m, tc, data, nullptr, nullptr);
  CHECK(res.diverged);
  CHECK(res.iterations_run < 10);
  CHECK(!res.divergence_note.empty());
}

TEST_CASE("training csv log has the documented columns") {
  std::vector<LossBreakdown> log(1);
  log[0].iter = 50;
  const auto csv = loss_log_csv(log);
  CHECK(csv.rfind("iter,lambda_mean,R_bits,D,l_new,l_kr,combined\n", 0) == 0);
}
