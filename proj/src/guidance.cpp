#include "blindrest/guidance.hpp"

#include <cmath>
#include <cstdio>

#include "blindrest/errors.hpp"
#include "blindrest/metrics.hpp"
#include "blindrest/parallel.hpp"

namespace blindrest {

void GuidanceSettings::validate(const NoiseSchedule& schedule) const {
  if (!std::isfinite(scale) || scale < 0.0) throw ContractError("guidance scale must be finite and >= 0");
  if (steps < 1 || steps > schedule.T) {
    throw ContractError("guidance steps " + std::to_string(steps) + " outside [1, " + std::to_string(schedule.T) + "]");
  }
  if (!reference_latent.defined()) throw ContractError("guidance needs a reference latent");
}

LatentLoss latent_loss(const Tensor& z0, const Tensor& reference) {
  if (z0.shape() != reference.shape()) {
    throw ContractError("latent_loss: shapes " + shape_str(z0.shape()) + " and " + shape_str(reference.shape()) +
                        " differ");
  }
  const auto a = z0.data();
  const auto b = reference.data();
  const double n = static_cast<double>(a.size());
  LatentLoss out;
  std::vector<float> grad(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    out.value += d * d;
    grad[i] = static_cast<float>(2.0 * d / n);
  }
  out.value /= n;
  out.gradient = Tensor(z0.shape(), std::move(grad));
  return out;
}

GuidedSample guided_sample(const EpsModel& model, const GuidanceSettings& settings, const NoiseSchedule& schedule,
                           std::uint64_t seed, const GuidanceObserver& observer) {
  settings.validate(schedule);
  NoGradGuard no_grad;
  GuidedSample out;
  out.steps = spaced_steps(schedule.T, settings.steps);
  Rng rng = sampling_rng(seed);
  Tensor z = gaussian_noise(settings.reference_latent.shape(), rng);
  for (std::size_t i = 0; i < out.steps.size(); ++i) {
    const int t = out.steps[i];
    const int t_prev = i + 1 < out.steps.size() ? out.steps[i + 1] : 0;
    const auto c = step_coefficients(schedule, t, t_prev);
    const Tensor eps = model(z, t);
    const Tensor z0 = estimate_z0(z, t, eps, schedule);
    const LatentLoss loss = latent_loss(z0, settings.reference_latent);
    const double factor = settings.chain_through_zt ? settings.scale / std::sqrt(schedule.alpha_bar(t)) : settings.scale;
    Tensor mean = posterior_mean(z0, z, c);
    auto m = mean.data_mut();
    const auto g = loss.gradient.data();
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = static_cast<float>(m[k] - factor * g[k]);
    if (observer) {
      std::vector<float> shift(g.size());
      for (std::size_t k = 0; k < g.size(); ++k) shift[k] = static_cast<float>(-factor * g[k]);
      observer({t, t_prev, z0, Tensor(z0.shape(), std::move(shift)), loss.value});
    }
    z = add_step_noise(mean, c.variance, rng);
    out.final_z0 = z0;
    out.d_latent = loss.value;
  }
  out.latent = z;
  return out;
}

GuidedRestoration guided_restore(const DiffusionModels& models, const Image& reg, double scale, int steps,
                                 std::uint64_t seed, bool chain_through_zt) {
  NoGradGuard no_grad;
  GuidanceSettings settings;
  settings.scale = scale;
  settings.steps = steps;
  settings.chain_through_zt = chain_through_zt;
  settings.reference_latent = models.codec.encode(reg);
  const EpsModel model = make_eps_model(models.denoiser, &models.conditioner, settings.reference_latent, models.schedule);
  GuidedRestoration out;
  out.sample = guided_sample(model, settings, models.schedule, seed);
  out.diff = from_tensor(models.codec.decode(out.sample.latent)).front();
  return out;
}

std::vector<SweepRow> sweep_scale(const DiffusionModels& models, const Image& reg, const std::optional<Image>& hq,
                                  const std::vector<double>& scales, int steps, std::uint64_t seed, std::size_t jobs) {
  if (scales.empty()) throw ContractError("sweep needs at least one scale");
  for (double s : scales)
    if (!std::isfinite(s) || s < 0.0) throw ContractError("sweep scales must be finite and >= 0");
  if (hq) require_same_dims(*hq, reg, "sweep ground truth");
  std::vector<SweepRow> rows(scales.size());
  parallel_for(scales.size(), jobs, [&](std::size_t i) {
    const auto r = guided_restore(models, reg, scales[i], steps, seed);
    rows[i].scale = scales[i];
    rows[i].diff = r.diff;
    rows[i].d_latent = r.sample.d_latent;
    rows[i].psnr_vs_reg = psnr(r.diff, reg);
    if (hq) rows[i].psnr_vs_hq = psnr(r.diff, *hq);
  });
  return rows;
}

Image contact_sheet(const std::vector<Image>& images, std::size_t columns, std::size_t gap) {
  if (images.empty()) throw ContractError("contact sheet needs at least one image");
  if (columns == 0) throw ContractError("contact sheet needs at least one column");
  std::size_t cell_h = 0, cell_w = 0;
  const std::size_t channels = images.front().channels;
  for (const auto& im : images) {
    if (im.channels != channels) throw DimensionError("contact sheet images differ in channel count");
    cell_h = std::max(cell_h, im.height);
    cell_w = std::max(cell_w, im.width);
  }
  const std::size_t cols = std::min(columns, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  Image sheet(rows * cell_h + (rows - 1) * gap, cols * cell_w + (cols - 1) * gap, channels);
  std::fill(sheet.pixels.begin(), sheet.pixels.end(), 1.0f);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    const std::size_t oy = (i / cols) * (cell_h + gap), ox = (i % cols) * (cell_w + gap);
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x)
        for (std::size_t c = 0; c < channels; ++c) sheet.at(oy + y, ox + x, c) = im.at(y, x, c);
  }
  return sheet;
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "scale,D_latent,psnr_vs_Ireg,psnr_vs_HQ\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,", r.scale, r.d_latent, r.psnr_vs_reg);
    out += buf;
    if (r.psnr_vs_hq) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.psnr_vs_hq);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace blindrest
