#pragma once

#include <optional>
#include <vector>

#include "blindrest/diffusion.hpp"
#include "blindrest/image.hpp"

namespace blindrest {

struct GuidanceSettings {
  double scale = 0.0;  // gradient scale s
  int steps = 50;
  // Scales the clean-latent gradient by d z0 / d z_t = 1 / sqrt(abar_t).
  bool chain_through_zt = false;
  Tensor reference_latent;  // E(I_reg)

  void validate(const NoiseSchedule& schedule) const;
};

struct LatentLoss {
  double value = 0.0;
  Tensor gradient;  // d value / d z0
};

// Mean squared difference over all C*H*W latent elements, with its gradient.
LatentLoss latent_loss(const Tensor& z0, const Tensor& reference);

struct GuidedSample {
  Tensor latent;       // z_0
  Tensor final_z0;     // clean-latent estimate at the last retained step
  double d_latent = 0.0;  // latent_loss(final_z0, reference)
  std::vector<int> steps;
};

// What one reverse step did, for inspection.
struct GuidedStep {
  int t = 0, t_prev = 0;
  Tensor z0;     // clean-latent estimate
  Tensor shift;  // amount added to the posterior mean
  double loss = 0.0;
};
using GuidanceObserver = std::function<void(const GuidedStep&)>;

// Reverse chain where every mean is shifted by -s * grad of the latent loss
// at the current clean-latent estimate.
GuidedSample guided_sample(const EpsModel& model, const GuidanceSettings& settings, const NoiseSchedule& schedule,
                           std::uint64_t seed, const GuidanceObserver& observer = nullptr);

struct DiffusionModels {
  const Denoiser& denoiser;
  const Conditioner& conditioner;
  const LatentCodec& codec;
  const NoiseSchedule& schedule;
};

struct GuidedRestoration {
  Image diff;  // I_diff
  GuidedSample sample;
};

GuidedRestoration guided_restore(const DiffusionModels& models, const Image& reg, double scale, int steps,
                                 std::uint64_t seed, bool chain_through_zt = false);

struct SweepRow {
  double scale = 0.0;
  Image diff;
  double d_latent = 0.0;
  double psnr_vs_reg = 0.0;
  std::optional<double> psnr_vs_hq;
};

// One guided restoration per scale, all with the same seed.
std::vector<SweepRow> sweep_scale(const DiffusionModels& models, const Image& reg, const std::optional<Image>& hq,
                                  const std::vector<double>& scales, int steps, std::uint64_t seed,
                                  std::size_t jobs = 1);

// Images tiled left to right, `columns` per row, separated by `gap` white pixels.
Image contact_sheet(const std::vector<Image>& images, std::size_t columns, std::size_t gap = 2);

std::string format_sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace blindrest
