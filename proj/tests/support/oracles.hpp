#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the code under test except for tensor/image containers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "blindrest/image.hpp"
#include "blindrest/ops.hpp"
#include "blindrest/rng.hpp"
#include "blindrest/tensor.hpp"

namespace oracle {

using blindrest::Image;
using blindrest::Rng;
using blindrest::Shape;
using blindrest::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(blindrest::numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(shape, std::move(v));
}

// Direct cross-correlation with zero padding, accumulated in double.
inline std::vector<double> conv2d(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride,
                                  std::size_t pad) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(N * O * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xo = 0; xo < Wo; ++xo) {
          double s = b ? b->data()[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const auto yy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const auto xx = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += static_cast<double>(x.data()[((n * C + c) * H + yy) * W + xx]) *
                     w.data()[((o * C + c) * kh + i) * kw + j];
              }
          out[((n * O + o) * Ho + y) * Wo + xo] = s;
        }
  return out;
}

// Textbook Adam on a flat parameter vector, in double.
struct ReferenceAdam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  int t = 0;
  ReferenceAdam(std::size_t n, double lr_, double b1_ = 0.9, double b2_ = 0.999, double eps_ = 1e-8)
      : lr(lr_), b1(b1_), b2(b2_), eps(eps_), m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double>& p, const std::vector<double>& g) {
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

// Single-scale SSIM from full 2-D Gaussian filtering of each statistic map.
inline double ssim(const Image& a, const Image& b) {
  auto luma = [](const Image& im) {
    std::vector<double> y(im.height * im.width);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (im.channels == 1) {
        y[i] = im.pixels[i];
      } else {
        y[i] = 0.299 * im.pixels[3 * i] + 0.587 * im.pixels[3 * i + 1] + 0.114 * im.pixels[3 * i + 2];
      }
    }
    return y;
  };
  const auto x = luma(a), y = luma(b);
  const std::size_t H = a.height, W = a.width, K = 11;
  std::vector<double> g(K * K);
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      const double di = static_cast<double>(i) - 5.0, dj = static_cast<double>(j) - 5.0;
      g[i * K + j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      total += g[i * K + j];
    }
  for (auto& v : g) v /= total;
  auto filter = [&](const std::function<double(std::size_t)>& f, std::size_t oy, std::size_t ox) {
    double s = 0.0;
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) s += g[i * K + j] * f((oy + i) * W + ox + j);
    return s;
  };
  const double C1 = 1e-4, C2 = 9e-4;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t oy = 0; oy + K <= H; ++oy)
    for (std::size_t ox = 0; ox + K <= W; ++ox) {
      const double mx = filter([&](std::size_t k) { return x[k]; }, oy, ox);
      const double my = filter([&](std::size_t k) { return y[k]; }, oy, ox);
      const double vx = filter([&](std::size_t k) { return (x[k] - mx) * (x[k] - mx); }, oy, ox);
      const double vy = filter([&](std::size_t k) { return (y[k] - my) * (y[k] - my); }, oy, ox);
      const double cv = filter([&](std::size_t k) { return (x[k] - mx) * (y[k] - my); }, oy, ox);
      acc += ((2 * mx * my + C1) * (2 * cv + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

/// Central finite-difference check of a tensor function. The scalar probe is
/// L = sum_i w_i * out_i with fixed random weights, evaluated in double
/// outside the tape. Returns the largest max|a-n|/max(1,|a|,|n|) over up to
/// `samples` coordinates per input.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                        Rng& rng, double h = 1e-3, std::size_t samples = 24) {
  for (auto& in : inputs) in.set_requires_grad(true);
  const Tensor out = f(inputs);
  std::vector<float> w(out.numel());
  const double norm = 1.0 / std::sqrt(static_cast<double>(out.numel()));
  for (auto& v : w) v = static_cast<float>(rng.normal() * norm);
  const Tensor weights(out.shape(), w);
  blindrest::ops::sum(blindrest::ops::mul(out, weights)).backward();

  auto probe = [&](const std::vector<Tensor>& xs) {
    blindrest::NoGradGuard guard;
    const Tensor o = f(xs);
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += static_cast<double>(w[i]) * o.data()[i];
    return s;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic_grad = inputs[k];
    const std::vector<float> analytic(analytic_grad.grad().begin(), analytic_grad.grad().end());
    const std::size_t n = inputs[k].numel();
    for (std::size_t s = 0; s < std::min(samples, n); ++s) {
      const std::size_t idx = n <= samples ? s : static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(n) - 1));
      std::vector<Tensor> xs;
      for (const auto& in : inputs) xs.push_back(in.detach());
      const float x0 = xs[k].data()[idx];
      const float xp = static_cast<float>(x0 + h), xm = static_cast<float>(x0 - h);
      xs[k].data_mut()[idx] = xp;
      const double lp = probe(xs);
      xs[k].data_mut()[idx] = xm;
      const double lm = probe(xs);
      const double numeric = (lp - lm) / (static_cast<double>(xp) - xm);
      const double a = analytic[idx];
      worst = std::max(worst, std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)}));
    }
  }
  return worst;
}

}  // namespace oracle
