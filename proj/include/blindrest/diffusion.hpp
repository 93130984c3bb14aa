#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blindrest/adam.hpp"
#include "blindrest/image.hpp"
#include "blindrest/nn.hpp"
#include "blindrest/restoration.hpp"

namespace blindrest {

enum class ScheduleLaw { linear };

/// Per-step noise variances and their cumulative products. Arrays are indexed
/// by timestep t in 0..T; entry 0 is the clean state (alpha_bar = 1).
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> posterior_variances;

  double alpha_bar(int t) const;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleLaw law = ScheduleLaw::linear);

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps
Tensor forward_diffuse(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule);

// Retained timesteps for an n-step chain, strictly descending from T to 1.
std::vector<int> spaced_steps(int T, int n);

// Reverse-step constants for the jump t -> t_prev on the retimed chain.
struct StepCoefficients {
  double coef_z0 = 0.0;   // multiplies the clean-latent estimate in the mean
  double coef_zt = 0.0;   // multiplies z_t in the mean
  double variance = 0.0;  // posterior variance; zero when t_prev == 0
};
StepCoefficients step_coefficients(const NoiseSchedule& schedule, int t, int t_prev);

Tensor estimate_z0(const Tensor& z_t, int t, const Tensor& predicted_eps, const NoiseSchedule& schedule);
Tensor posterior_mean(const Tensor& z0, const Tensor& z_t, const StepCoefficients& c);
// mean + sqrt(variance) * N(0, I); returns the mean untouched when variance is 0.
Tensor add_step_noise(const Tensor& mean, double variance, Rng& rng);
Tensor gaussian_noise(const Shape& shape, Rng& rng);

// Predicts the noise in z_t at timestep t (same t for the whole batch).
using EpsModel = std::function<Tensor(const Tensor& z_t, int t)>;

Tensor ddpm_step(const EpsModel& model, const Tensor& z_t, int t, int t_prev, const NoiseSchedule& schedule,
                 Rng& rng);

// Plain ancestral chain over spaced_steps(T, steps) starting from z_T ~ N(0, I).
Tensor ddpm_sample(const EpsModel& model, const Shape& latent_shape, int steps, const NoiseSchedule& schedule,
                   std::uint64_t seed);

// Stream used for chain noise, shared by guided and unguided sampling.
Rng sampling_rng(std::uint64_t seed);

enum class CodecKind { identity, tiny_ae };
std::string to_string(CodecKind kind);
CodecKind parse_codec_kind(const std::string& text);

/// Image <-> latent mapping. The identity kind is exact; tiny-ae compresses
/// each side by 4 with two strided convolutions and mirrors them to decode.
class LatentCodec {
 public:
  explicit LatentCodec(CodecKind kind = CodecKind::identity, std::size_t image_channels = 3,
                       std::size_t latent_channels = 8, std::uint64_t seed = 0);

  CodecKind kind() const { return kind_; }
  std::size_t latent_channels() const;
  std::size_t downsampling() const { return kind_ == CodecKind::identity ? 1 : 4; }

  Tensor encode(const Tensor& images) const;   // [N,C,H,W] -> latent
  Tensor decode(const Tensor& latents) const;  // latent -> [N,C,H,W], unclamped
  Tensor encode(const Image& image) const;

  ParamList parameters() const;

 private:
  CodecKind kind_;
  std::size_t image_channels_;
  std::size_t latent_channels_;
  nn::Conv2d enc1_, enc2_, dec1_, dec2_;
};

struct CodecTrainOptions {
  std::uint64_t seed = 0;
  std::size_t iterations = 1500;
  std::size_t batch = 8;
  float lr = 2e-3f;
};

// Plain L2 reconstruction training; returns the loss trace.
std::vector<float> train_codec(LatentCodec& codec, const std::vector<Image>& dataset, const CodecTrainOptions& options);

struct DenoiserConfig {
  std::size_t latent_channels = 3;
  std::size_t channels0 = 16;  // full latent resolution
  std::size_t channels1 = 32;  // 1/2 and 1/4 resolution
  std::size_t time_dim = 32;   // sinusoidal features
  std::size_t embed_dim = 64;
  std::size_t context_dim = 16;
  std::size_t groups = 4;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static DenoiserConfig from_map(const std::map<std::string, std::string>& kv);
};

// Sinusoidal features [N, dim] of integer timesteps.
Tensor timestep_features(const std::vector<int>& t, std::size_t dim);

struct ResBlock {
  nn::GroupNorm norm1;
  nn::Conv2d conv1;
  nn::Linear temb_proj;
  nn::GroupNorm norm2;
  nn::Conv2d conv2;
  nn::Conv2d skip;  // 1x1, only when channel counts differ

  ResBlock() = default;
  ResBlock(std::size_t in, std::size_t out, std::size_t embed_dim, std::size_t groups, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& temb_act) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Encoder skip features and middle-block output, coarsest last.
struct UNetFeatures {
  Tensor h0, h1, h2, mid;
};

// Time-embedding MLP, input conv, encoder and middle block.
struct UNetEncoder {
  nn::Linear time_fc1, time_fc2, context_proj;
  nn::Conv2d conv_in;
  ResBlock res0;
  nn::Conv2d down1;
  ResBlock res1;
  nn::Conv2d down2;
  ResBlock res2;
  ResBlock mid;

  UNetEncoder() = default;
  UNetEncoder(const DenoiserConfig& config, std::size_t input_channels, Rng& rng);

  // SiLU-activated embedding [N, embed_dim] of the timesteps plus the prompt context.
  Tensor embed(const std::vector<int>& t, const Tensor& context, std::size_t time_dim) const;
  UNetFeatures operator()(const Tensor& x, const Tensor& temb_act) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Small UNet noise predictor with a constant empty-prompt context.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  const UNetEncoder& encoder() const { return encoder_; }

  Tensor forward(const Tensor& z_t, const std::vector<int>& t) const;
  Tensor forward(const Tensor& z_t, int t) const;

  Tensor embed(const std::vector<int>& t) const;
  UNetFeatures encode(const Tensor& z_t, const Tensor& temb_act) const;
  Tensor decode(const UNetFeatures& features, const Tensor& temb_act) const;

  // The empty-prompt embedding, [1, context_dim]. Never a trained parameter.
  const Tensor& context() const { return context_; }
  void set_context(Tensor context);

  ParamList parameters() const;

 private:
  DenoiserConfig config_;
  Tensor context_;
  UNetEncoder encoder_;
  ResBlock dec2_;
  nn::Conv2d up1_;
  ResBlock dec1_;
  nn::Conv2d up0_;
  ResBlock dec0_;
  nn::GroupNorm out_norm_;
  nn::Conv2d conv_out_;
};

/// Trainable copy of the denoiser's encoder and middle block fed with
/// concat(z_t, condition). The channels added for the condition start at zero
/// and every output passes a zero-initialized bias-free 1x1 convolution, so a
/// fresh conditioner leaves the base prediction unchanged.
class Conditioner {
 public:
  Conditioner(const Denoiser& base, std::size_t condition_channels);

  std::size_t input_channels() const { return encoder_.conv_in.weight.dim(1); }
  std::size_t condition_channels() const { return condition_channels_; }

  // Residuals to add to the base encoder features.
  UNetFeatures operator()(const Tensor& z_t, const Tensor& condition, const std::vector<int>& t,
                          const Tensor& context) const;

  ParamList parameters() const;

 private:
  std::size_t latent_channels_;
  std::size_t condition_channels_;
  std::size_t time_dim_;
  UNetEncoder encoder_;
  nn::Conv2d zero0_, zero1_, zero2_, zero_mid_;
};

Tensor conditioned_eps(const Denoiser& base, const Conditioner& conditioner, const Tensor& z_t,
                       const std::vector<int>& t, const Tensor& condition);

// Noise prediction from the network output: eps = sqrt(1 - abar_t) * z_t + out.
// The skip term alone is the exact noise estimate for standard-normal latents,
// so the network only learns a residual of size ~sqrt(abar_t) and its errors
// are not blown up when the clean latent is recovered at high t.
Tensor add_prior_skip(const Tensor& net_out, const Tensor& z_t, const std::vector<int>& t,
                      const NoiseSchedule& schedule);

// Binds the condition latent into an EpsModel; without a conditioner the base alone is used.
EpsModel make_eps_model(const Denoiser& base, const Conditioner* conditioner, Tensor condition,
                        const NoiseSchedule& schedule);

enum class DiffusionMode { pretrain, finetune };

struct DiffusionTrainOptions {
  std::uint64_t seed = 0;
  std::size_t iterations = 1000;
  std::size_t batch = 8;
  float lr = 1e-3f;
  std::size_t jobs = 1;
  Degrader degrader;  // finetune only; defaults to standard_degrader({})
};

struct DiffusionBatch {
  Tensor z;          // clean latents E(I_HQ)
  std::vector<int> t;
  Tensor eps;
  Tensor z_t;
  Tensor condition;  // E(I_reg); finetune only
};

/// Pretraining fits the denoiser alone on clean latents. Finetuning freezes
/// the denoiser and fits only the conditioner, conditioning on E(I_reg) from
/// the frozen restoration net. Batch `i` depends only on (seed, i).
class DiffusionTrainer {
 public:
  DiffusionTrainer(DiffusionMode mode, Denoiser& denoiser, Conditioner* conditioner, const LatentCodec& codec,
                   const RestorationNet* restoration, const std::vector<Image>& dataset,
                   const NoiseSchedule& schedule, DiffusionTrainOptions options);
  ~DiffusionTrainer();
  DiffusionTrainer(const DiffusionTrainer&) = delete;
  DiffusionTrainer& operator=(const DiffusionTrainer&) = delete;

  float step();
  std::size_t iteration() const { return iteration_; }
  bool done() const { return iteration_ >= options_.iterations; }

  Adam& optimizer() { return optimizer_; }
  void resume(std::size_t iteration, const std::vector<NamedParam>& optimizer_state);

  DiffusionBatch batch(std::size_t iteration) const;
  // Loss of the current model on a batch, without recording a tape.
  float evaluate(const DiffusionBatch& batch) const;

 private:
  Tensor predict(const DiffusionBatch& batch) const;

  DiffusionMode mode_;
  Denoiser& denoiser_;
  Conditioner* conditioner_;
  const LatentCodec& codec_;
  const RestorationNet* restoration_;
  const std::vector<Image>& dataset_;
  const NoiseSchedule& schedule_;
  DiffusionTrainOptions options_;
  Adam optimizer_;
  std::size_t iteration_ = 0;
};

std::vector<float> train_denoiser(DiffusionMode mode, Denoiser& denoiser, Conditioner* conditioner,
                                  const LatentCodec& codec, const RestorationNet* restoration,
                                  const std::vector<Image>& dataset, const NoiseSchedule& schedule,
                                  DiffusionTrainOptions options);

// Plain-text record of a sampling run: schedule, retained steps, seed, scale.
std::string format_sampler_manifest(const NoiseSchedule& schedule, const std::vector<int>& steps,
                                    std::uint64_t seed, double scale);

}  // namespace blindrest
