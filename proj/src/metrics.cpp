#include "blindrest/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "blindrest/errors.hpp"

namespace blindrest {

double mse(const Image& a, const Image& b) {
  require_same_dims(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

namespace {

std::array<double, kSsimWindow> gaussian_window_1d() {
  std::array<double, kSsimWindow> w{};
  double s = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same_dims(a, b, "ssim");
  if (a.height < kSsimWindow || a.width < kSsimWindow) {
    throw ContractError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                        " smaller than the 11x11 window");
  }
  const Image x = to_luma(a);
  const Image y = to_luma(b);
  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;
  const auto g = gaussian_window_1d();
  const std::size_t H = x.height - kSsimWindow + 1;
  const std::size_t W = x.width - kSsimWindow + 1;
  double total = 0.0;
  for (std::size_t oy = 0; oy < H; ++oy) {
    for (std::size_t ox = 0; ox < W; ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) {
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          const double w = g[i] * g[j];
          const double px = x.pixels[(oy + i) * x.width + ox + j];
          const double py = y.pixels[(oy + i) * y.width + ox + j];
          mx += w * px;
          my += w * py;
          sxx += w * px * px;
          syy += w * py * py;
          sxy += w * px * py;
        }
      }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
  }
  return total / static_cast<double>(H * W);
}

}  // namespace blindrest
