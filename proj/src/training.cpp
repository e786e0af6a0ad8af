#include "ccomp/training.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

namespace ccomp {

double sample_lambda(const LambdaDistribution& dist, Rng& rng) {
  if (dist.low == dist.high) return dist.low;
  return std::exp(rng.uniform(std::log(dist.low), std::log(dist.high)));
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kPretrain: return "pretrain";
    case Strategy::kFtEnc: return "ft_enc";
    case Strategy::kFtEncDec: return "ft_enc_dec";
    default: return "kr";
  }
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "pretrain") return Strategy::kPretrain;
  if (name == "ft_enc") return Strategy::kFtEnc;
  if (name == "ft_enc_dec") return Strategy::kFtEncDec;
  if (name == "kr") return Strategy::kKr;
  throw DomainError("unknown strategy: " + name);
}

double combined_loss(double l_new, double l_kr, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw DomainError("combined_loss: alpha must be in [0,1], got " + std::to_string(alpha));
  return (1.0 - alpha) * l_new + alpha * l_kr;
}

double cosine_lr(double base, int iter, int total, bool constant_first_half) {
  if (total <= 1) return base;
  if (constant_first_half) {
    const int half = total / 2;
    if (iter < half) return base;
    const double t = static_cast<double>(iter - half) / static_cast<double>(total - half);
    return base * 0.5 * (1.0 + std::cos(M_PI * t));
  }
  const double t = static_cast<double>(iter) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(M_PI * t));
}

template <typename T>
int attach_rd_loss(Graph<T>& g, const TrainForward& fwd, const std::vector<double>& lambdas,
                   int pixels, int values_per_image) {
  const size_t n = lambdas.size();
  std::vector<T> w_rate(n, static_cast<T>(1.0 / (static_cast<double>(n) * pixels)));
  std::vector<T> w_mse(n);
  for (size_t i = 0; i < n; ++i)
    w_mse[i] = static_cast<T>(lambdas[i] / (static_cast<double>(n) * values_per_image));
  const int rate = g.weighted_sum(fwd.bits_item, std::move(w_rate));
  const int dist = g.weighted_sum(fwd.sqerr_item, std::move(w_mse));
  return g.add(rate, dist);
}

template int attach_rd_loss<float>(Graph<float>&, const TrainForward&,
                                   const std::vector<double>&, int, int);
template int attach_rd_loss<double>(Graph<double>&, const TrainForward&,
                                    const std::vector<double>&, int, int);

namespace {

// Walks a dataset in its own deterministic epoch order.
struct BatchCursor {
  const ImageDataset& ds;
  int epoch = 0;
  size_t pos = 0;
  std::vector<int> order;

  explicit BatchCursor(const ImageDataset& d) : ds(d), order(d.epoch_order(0)) {}

  int next() {
    if (pos >= order.size()) {
      ++epoch;
      pos = 0;
      order = ds.epoch_order(epoch);
    }
    return order[pos++];
  }
};

struct ParamSnapshot {
  std::vector<std::vector<float>> values;

  void capture(const ParamStore<float>& ps) {
    values.resize(ps.count());
    for (size_t i = 0; i < ps.count(); ++i) values[i] = ps[i].value.v;
  }
  void restore(ParamStore<float>& ps) const {
    for (size_t i = 0; i < ps.count(); ++i) ps[i].value.v = values[i];
  }
};

Tensor<float> gather_batch(const ImageDataset& ds, BatchCursor& cur, int n, Rng& aug) {
  std::vector<Tensor<float>> items;
  items.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) items.push_back(ds.sample(cur.next(), aug));
  std::vector<const Tensor<float>*> ptrs;
  for (const auto& t : items) ptrs.push_back(&t);
  return stack_batch(ptrs);
}

}  // namespace

std::string loss_log_csv(const std::vector<LossBreakdown>& log) {
  std::ostringstream o;
  o << "iter,lambda_mean,R_bits,D,l_new,l_kr,combined\n";
  char buf[200];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.4f,%.4f,%.8f,%.6f,%.6f,%.6f\n", r.iter, r.lambda_mean,
                  r.rate_bits, r.distortion, r.l_new, r.l_kr, r.combined);
    o << buf;
  }
  return o.str();
}

TrainResult train_model(CodecModel<float>& model, const TrainConfig& cfg,
                        const ImageDataset& data, const ReplayBuffer* replay,
                        std::ostream* csv_log) {
  if (cfg.strategy == Strategy::kKr) {
    if (!replay || !replay->old_data || !replay->old_model)
      throw ContractError("train: kr strategy requires a replay buffer");
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
      throw DomainError("train: alpha must be in [0,1]");
  }
  const ModelConfig& mc = model.config();
  const int pixels = mc.input_h * mc.input_w;
  const int hwc = pixels * mc.input_c;

  switch (cfg.strategy) {
    case Strategy::kPretrain: model.params().set_trainable_groups(true, true, true); break;
    case Strategy::kFtEnc: model.params().set_trainable_groups(true, false, false); break;
    case Strategy::kFtEncDec:
    case Strategy::kKr: model.params().set_trainable_groups(true, true, false); break;
  }

  const double base_lr =
      cfg.lr > 0.0 ? cfg.lr : (cfg.strategy == Strategy::kPretrain ? 2e-4 : 1e-4);
  Adam<float> opt(model.params(), static_cast<float>(base_lr),
                  static_cast<float>(cfg.grad_clip));
  const bool use_ema = cfg.strategy == Strategy::kPretrain && cfg.ema_decay > 0.0;
  EmaTracker ema(model.params(), static_cast<float>(cfg.ema_decay));

  Rng aug_rng(derive_seed(cfg.seed, 1));
  Rng lambda_rng(derive_seed(cfg.seed, 2));
  Rng noise_rng(derive_seed(cfg.seed, 3));
  Rng replay_aug_rng(derive_seed(cfg.seed, 4));
  Rng replay_lambda_rng(derive_seed(cfg.seed, 5));
  Rng replay_noise_rng(derive_seed(cfg.seed, 6));

  BatchCursor cursor(data);
  std::unique_ptr<BatchCursor> replay_cursor;
  if (cfg.strategy == Strategy::kKr) replay_cursor = std::make_unique<BatchCursor>(*replay->old_data);

  ParamSnapshot snapshot;
  snapshot.capture(model.params());

  TrainResult result;
  const bool is_kr = cfg.strategy == Strategy::kKr;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    opt.set_lr(static_cast<float>(
        cosine_lr(base_lr, iter, cfg.iterations, cfg.strategy == Strategy::kPretrain)));
    model.params().zero_grads();

    int n_new = cfg.batch_size, n_old = cfg.batch_size;
    double w_new = is_kr ? (1.0 - cfg.alpha) : 1.0, w_old = cfg.alpha;
    if (is_kr && cfg.kr_split_batch) {
      n_new = static_cast<int>(std::lround((1.0 - cfg.alpha) * cfg.batch_size));
      n_old = cfg.batch_size - n_new;
    }

    LossBreakdown row;
    row.iter = iter;

    double l_new = 0.0, l_kr = 0.0;
    if ((!is_kr || cfg.alpha < 1.0) && n_new > 0) {
      const Tensor<float> x = gather_batch(data, cursor, n_new, aug_rng);
      std::vector<double> lambdas(static_cast<size_t>(n_new));
      for (auto& l : lambdas) l = sample_lambda(cfg.lambda_dist, lambda_rng);

      Graph<float> g;
      const TrainForward fwd = model.build_train_forward(g, x, lambdas, noise_rng);
      const int loss = attach_rd_loss(g, fwd, lambdas, pixels, hwc);
      l_new = static_cast<double>(g.value(loss).v[0]);
      g.backward(loss, static_cast<float>(w_new));

      for (int s = 0; s < mc.stages; ++s) {
        const auto& sb = g.value(fwd.stage_bits_item[static_cast<size_t>(s)]);
        double m = 0.0;
        for (const float v : sb.v) m += v;
        row.stage_bits.push_back(m / n_new);
      }
      const auto& bits = g.value(fwd.bits_item);
      const auto& sq = g.value(fwd.sqerr_item);
      for (int i = 0; i < n_new; ++i) {
        row.rate_bits += bits.v[static_cast<size_t>(i)] / n_new;
        row.distortion += sq.v[static_cast<size_t>(i)] / hwc / n_new;
        row.lambda_mean += lambdas[static_cast<size_t>(i)] / n_new;
      }
    }

    if (is_kr && cfg.alpha > 0.0 && n_old > 0) {
      const Tensor<float> x_old =
          gather_batch(*replay->old_data, *replay_cursor, n_old, replay_aug_rng);
      std::vector<double> lambdas_old(static_cast<size_t>(n_old));
      for (auto& l : lambdas_old) l = sample_lambda(replay->lambda_old, replay_lambda_rng);

      // replayed encoder runs in inference mode; no gradients reach it
      std::vector<Tensor<float>> zhats, es;
      replay->old_model->replay_latents(x_old, lambdas_old, &zhats, &es,
                                        cfg.replay_noise ? &replay_noise_rng : nullptr);

      Graph<float> g;
      const TrainForward fwd = model.build_dec_forward(g, zhats, es, lambdas_old);
      const int sq = g.sum_per_item(g.square(g.sub(fwd.xhat, g.input(x_old))));
      std::vector<float> w(static_cast<size_t>(n_old));
      for (int i = 0; i < n_old; ++i)
        w[static_cast<size_t>(i)] = static_cast<float>(
            lambdas_old[static_cast<size_t>(i)] / (static_cast<double>(n_old) * hwc));
      const int loss = g.weighted_sum(sq, std::move(w));
      l_kr = static_cast<double>(g.value(loss).v[0]);
      g.backward(loss, static_cast<float>(w_old));
    }

    row.l_new = l_new;
    row.l_kr = l_kr;
    row.combined = is_kr ? combined_loss(l_new, l_kr, cfg.alpha) : l_new;

    if (!std::isfinite(row.combined) || !std::isfinite(row.rate_bits) ||
        !std::isfinite(row.distortion)) {
      snapshot.restore(model.params());
      result.diverged = true;
      result.divergence_note =
          "non-finite loss at iteration " + std::to_string(iter) + " (R=" +
          std::to_string(row.rate_bits) + ", D=" + std::to_string(row.distortion) + ", l_kr=" +
          std::to_string(l_kr) + "); restored snapshot";
      break;
    }

    opt.step();
    if (use_ema) ema.update(model.params());
    if (cfg.snapshot_every > 0 && (iter + 1) % cfg.snapshot_every == 0)
      snapshot.capture(model.params());

    if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations) result.log.push_back(row);
    result.iterations_run = iter + 1;
  }

  if (use_ema && !result.diverged) {
    result.ema_values.reserve(model.params().count());
    for (size_t i = 0; i < model.params().count(); ++i)
      result.ema_values.push_back(ema.shadow(i));
  }
  if (csv_log) *csv_log << loss_log_csv(result.log);
  return result;
}

}  // namespace ccomp
