#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blindrest/dataset.hpp"
#include "blindrest/diffusion.hpp"
#include "blindrest/restoration.hpp"

namespace blindrest {

/// Everything a pipeline run depends on. Every field has a default, so an
/// empty file is a valid config. Relative paths resolve against base_dir.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t checkpoint_every = 100;
  std::filesystem::path base_dir = ".";

  std::filesystem::path dataset_dir = "data/hq";
  std::filesystem::path degraded_dir = "data/lq";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "outputs";

  std::size_t dataset_count = 64;
  std::size_t dataset_size = 32;
  Generator generator = Generator::mixed;

  bool wide_degradation = false;
  double jpeg_probability = 0.75;

  RestorationConfig restoration;
  std::size_t restore_iterations = 2000;
  std::size_t restore_batch = 8;
  float restore_lr = 1e-3f;
  bool restore_cosine_decay = true;

  int diffusion_T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  CodecKind codec = CodecKind::identity;
  std::size_t codec_latent_channels = 8;
  std::size_t codec_iterations = 1500;
  DenoiserConfig denoiser;  // latent_channels follows the codec
  std::size_t pretrain_iterations = 1500;
  std::size_t finetune_iterations = 1000;
  std::size_t diffusion_batch = 8;
  float diffusion_lr = 1e-3f;
  int sample_steps = 50;

  double guidance_scale = 0.0;
  std::vector<double> sweep_scales{0.0, 50.0, 200.0, 1000.0};
  std::size_t sweep_seeds = 1;
  bool chain_through_zt = false;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  DatasetSpec dataset_spec() const;
  SamplerOptions sampler_options() const;
  NoiseSchedule schedule() const;
  DenoiserConfig denoiser_config() const;  // with latent channels set from the codec
  void validate() const;
};

// INI sections: run, paths, dataset, degradation, restoration, diffusion, guidance.
// Unknown sections or keys are rejected.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& config);

std::vector<double> parse_scale_list(const std::string& text);

}  // namespace blindrest
