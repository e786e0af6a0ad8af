#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "ccomp/adam.hpp"
#include "ccomp/data.hpp"
#include "ccomp/model.hpp"

namespace ccomp {

// log-uniform over [low, high]
struct LambdaDistribution {
  double low = 32.0;
  double high = 1024.0;

  LambdaDistribution() = default;
  LambdaDistribution(double lo, double hi) : low(lo), high(hi) {
    if (!(0.0 < lo && lo <= hi))
      throw DomainError("lambda distribution: need 0 < low <= high");
  }
};

double sample_lambda(const LambdaDistribution& dist, Rng& rng);

enum class Strategy { kPretrain, kFtEnc, kFtEncDec, kKr };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct TrainConfig {
  Strategy strategy = Strategy::kPretrain;
  double alpha = 0.5;  // Eq-10 weight, KR only
  int iterations = 20000;
  int batch_size = 32;
  double lr = 0.0;  // 0 -> strategy default (2e-4 pretrain, 1e-4 fine-tune)
  double grad_clip = 2.0;
  uint64_t seed = 0;
  LambdaDistribution lambda_dist;
  double ema_decay = 0.9999;  // pretrain only; <= 0 disables
  bool kr_split_batch = false;  // default: one new batch + one replay batch per iter
  bool replay_noise = false;    // default: round-mode replayed encoder
  int log_every = 50;
  int snapshot_every = 250;
};

struct ReplayBuffer {
  const ImageDataset* old_data = nullptr;
  const CodecModel<float>* old_model = nullptr;  // frozen f_enc^(0) (full checkpoint)
  LambdaDistribution lambda_old;
};

struct LossBreakdown {
  int iter = 0;
  double lambda_mean = 0.0;
  std::vector<double> stage_bits;  // mean bits per item, per stage
  double rate_bits = 0.0;          // mean total bits per item
  double distortion = 0.0;         // mean MSE
  double l_new = 0.0;
  double l_kr = 0.0;
  double combined = 0.0;
};

// Eq-10 style mixture; alpha outside [0,1] is a domain error.
double combined_loss(double l_new, double l_kr, double alpha);

struct TrainResult {
  std::vector<LossBreakdown> log;
  bool diverged = false;
  std::string divergence_note;
  int iterations_run = 0;
  std::vector<Tensor<float>> ema_values;  // per-parameter shadow; empty if EMA disabled
};

// Attaches the rate-distortion objective to a recorded forward pass and
// returns the scalar loss node: mean_i [ bits_i / pixels + lambda_i * mse_i ].
template <typename T>
int attach_rd_loss(Graph<T>& g, const TrainForward& fwd, const std::vector<double>& lambdas,
                   int pixels, int values_per_image);

// Runs one training phase in place. The model's pz fingerprint is asserted
// unchanged for every strategy except pretrain.
TrainResult train_model(CodecModel<float>& model, const TrainConfig& cfg,
                        const ImageDataset& data, const ReplayBuffer* replay,
                        std::ostream* csv_log);

std::string loss_log_csv(const std::vector<LossBreakdown>& log);

double cosine_lr(double base, int iter, int total, bool constant_first_half);

}  // namespace ccomp
