#pragma once

#include <string>
#include <vector>

#include "blindrest/degradation.hpp"

// Interval check written against the literal published ranges rather than the
// library constants, so a typo in either place shows up.
namespace oracle {

inline std::vector<std::string> plan_violations(const blindrest::DegradationPlan& p) {
  using namespace blindrest;
  std::vector<std::string> bad;
  auto in = [&](double v, double lo, double hi, const char* what) {
    if (!(v >= lo && v <= hi)) bad.push_back(std::string(what) + "=" + std::to_string(v));
  };
  auto kernel = [&](const BlurSpec& b) {
    if (b.kernel_size < 7 || b.kernel_size > 21 || b.kernel_size % 2 == 0)
      bad.push_back("kernel_size=" + std::to_string(b.kernel_size));
    if (b.kind == BlurKind::isotropic && b.sigma_x != b.sigma_y) bad.push_back("isotropic with unequal sigmas");
  };
  auto noise = [&](const NoiseSpec& n, double g_hi, double p_hi, const char* stage) {
    if (n.kind == NoiseKind::gaussian) in(n.gaussian_sigma, 1.0, g_hi, stage);
    else if (n.kind == NoiseKind::poisson) in(n.poisson_scale, 0.05, p_hi, stage);
    else bad.push_back(std::string(stage) + " noise kind jpeg");
  };
  kernel(p.stage1.blur);
  kernel(p.stage2.blur);
  if (p.wide_range) {
    for (const auto* b : {&p.stage1.blur, &p.stage2.blur}) {
      in(b->sigma_x, 0.1, 12.0, "wide sigma_x");
      in(b->sigma_y, 0.1, 12.0, "wide sigma_y");
    }
    const double d = 1.0 / (p.stage1.resize.scale * p.stage2.resize.scale);
    in(d, 1.0 - 1e-9, 12.0 + 1e-9, "wide downsampling");
  } else {
    in(p.stage1.blur.sigma_x, 0.2, 3.0, "stage1 sigma_x");
    in(p.stage1.blur.sigma_y, 0.2, 3.0, "stage1 sigma_y");
    in(p.stage2.blur.sigma_x, 0.2, 1.5, "stage2 sigma_x");
    in(p.stage2.blur.sigma_y, 0.2, 1.5, "stage2 sigma_y");
    in(p.stage1.resize.scale, 0.15, 1.5, "stage1 scale");
    in(p.stage2.resize.scale, 0.3, 1.2, "stage2 scale");
  }
  noise(p.stage1.noise, 30.0, 3.0, "stage1 noise");
  noise(p.stage2.noise, 25.0, 2.5, "stage2 noise");
  if (p.final_jpeg) {
    if (p.final_jpeg->kind != NoiseKind::jpeg) bad.push_back("final jpeg kind");
    in(p.final_jpeg->jpeg_quality, 30, 95, "jpeg quality");
  }
  return bad;
}

// Direct reflect-101 correlation of one channel plane.
inline std::vector<double> blur_reference(const blindrest::Image& img, const blindrest::Tensor& k) {
  const long kk = static_cast<long>(k.dim(0)), r = kk / 2;
  const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
  auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  std::vector<double> out(img.size());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        double s = 0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx)
            s += k.data()[static_cast<std::size_t>((dy + r) * kk + dx + r)] *
                 img.at(static_cast<std::size_t>(reflect(y + dy, H)), static_cast<std::size_t>(reflect(x + dx, W)), c);
        out[static_cast<std::size_t>((y * W + x)) * img.channels + c] = s;
      }
  return out;
}

}  // namespace oracle
