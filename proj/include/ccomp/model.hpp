#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ccomp/entropy.hpp"
#include "ccomp/graph.hpp"
#include "ccomp/param.hpp"
#include "ccomp/rng.hpp"

namespace ccomp {

enum class Variant { kParallel, kSequential };

// Hierarchical residual codec, decoupled entropy/decoder branches, conditioned
// on lambda. Defaults are the toy scale: 2 stages over 32x32 inputs with
// latents at 4x4 (stage 1) and 8x8 (stage 2).
struct ModelConfig {
  int stages = 2;
  int input_h = 32, input_w = 32, input_c = 3;
  int latent_channels = 8;
  std::vector<int> feat_channels = {96, 64};  // width at stage-i resolution, i = 1..N
  int blocks_per_stage = 2;
  int cond_width = 32;
  int ctx_width = 64;  // e_0 / r_0 width
  int dw_kernel = 7;
  Variant variant = Variant::kParallel;
  double lambda_low = 32.0, lambda_high = 1024.0;
  int seq_dec_width = 88;
  uint64_t init_seed = 1;

  // stage-i feature resolution divisor (stage 1 is coarsest)
  int divisor(int stage) const { return 1 << (stages + 2 - stage); }

  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
};

// Per-stage latent with its predicted distribution (inference path).
template <typename T>
struct StageLatent {
  Tensor<T> zhat;
  Tensor<T> mu;
  Tensor<T> sigma;
};

template <typename T>
struct ImageEncoding {
  std::vector<StageLatent<T>> stages;
  std::vector<Tensor<T>> e;                 // aggregated context features e_1..e_N
  std::vector<std::vector<int>> symbols;    // quantized residuals per stage
  std::vector<std::vector<int>> indices;    // sigma-bucket per symbol
  Tensor<T> recon;                          // decoder output for the same zhat/e
  double estimated_bits = 0.0;
};

template <typename T>
struct DecodedImage {
  std::vector<Tensor<T>> zhat;
  std::vector<Tensor<T>> e;
  Tensor<T> recon;
};

// Node ids of the training-graph forward pass.
struct TrainForward {
  int xhat = -1;
  std::vector<int> stage_bits_item;  // per stage, [N] total bits per item
  int bits_item = -1;                // [N] summed over stages
  int sqerr_item = -1;               // [N] sum of squared pixel error per item
};

template <typename T>
class CodecModel {
 public:
  explicit CodecModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const ScaleTable& scale_table() const;

  // normalized log-lambda conditioning coordinate; defined outside [0,1]
  double lambda_to_t(double lambda) const;

  // Encoder feature pyramid h_1 (coarsest) .. h_N, batched input (N,H,W,C).
  std::vector<Tensor<T>> encode_features(const Tensor<T>& x, double lambda) const;

  // Full encode-side pass in round-quantization mode, single image.
  ImageEncoding<T> encode_pass(const Tensor<T>& x, double lambda) const;

  // Entropy-decode + reconstruction from per-stage payloads.
  DecodedImage<T> decode_pass(const std::vector<std::vector<uint8_t>>& payloads, double lambda,
                              int image_h, int image_w) const;

  // Decoder branch only, from externally supplied latents/contexts.
  Tensor<T> decoder_pass(const std::vector<Tensor<T>>& zhats, const std::vector<Tensor<T>>& es,
                         double lambda) const;

  // Batched latents through this (frozen) model for replay. Round-mode by
  // default; noise_rng switches to additive-uniform-noise quantization.
  void replay_latents(const Tensor<T>& x, const std::vector<double>& lambdas,
                      std::vector<Tensor<T>>* zhats, std::vector<Tensor<T>>* es,
                      Rng* noise_rng = nullptr) const;

  // Training-graph forward (noise-mode quantization).
  TrainForward build_train_forward(Graph<T>& g, const Tensor<T>& x,
                                   const std::vector<double>& lambdas, Rng& noise_rng);

  // Decoder-only training graph over constant latents (the knowledge-replay path).
  TrainForward build_dec_forward(Graph<T>& g, const std::vector<Tensor<T>>& zhats,
                                 const std::vector<Tensor<T>>& es,
                                 const std::vector<double>& lambdas);

  std::array<uint8_t, 32> pz_fingerprint() const;

  void load_values(const LoadedCheckpoint& ck);

 private:
  void register_params();
  void init_params();

  ModelConfig cfg_;
  ParamStore<T> params_;
};

// round-half-away-from-zero, the fixed tie rule for bitstream determinism
template <typename T>
inline T round_residual(T x) {
  return std::trunc(x + std::copysign(T(0.5), x));
}

template <typename T>
Tensor<T> quantize_residual(const Tensor<T>& z, const Tensor<T>& mu, bool noise_mode, Rng& rng);

// Stacks per-image tensors (1,H,W,C) into a batch (N,H,W,C).
template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items);

template <typename T>
CodecModel<T> model_from_checkpoint(const LoadedCheckpoint& ck);

CodecModel<float> load_model(const std::string& path);

}  // namespace ccomp
