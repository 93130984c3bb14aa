#pragma once

#include "blindrest/image.hpp"

namespace blindrest {

double mse(const Image& a, const Image& b);

// 10 log10(1 / MSE) with peak 1. Identical inputs give +infinity.
double psnr(const Image& a, const Image& b);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, mean over all fully contained windows. RGB inputs are
// compared on BT.601 luma.
double ssim(const Image& a, const Image& b);

inline constexpr std::size_t kSsimWindow = 11;

}  // namespace blindrest
