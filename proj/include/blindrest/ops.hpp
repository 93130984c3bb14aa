#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "blindrest/tensor.hpp"

// Differentiable tensor operations. Every function allocates a fresh result
// and, when recording, attaches its vector-Jacobian product.
namespace blindrest::ops {

using IndexMap = std::shared_ptr<const std::vector<std::uint32_t>>;

// Elementwise; `b` broadcasts to `a` numpy-style (right-aligned, size-1 axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);  // identical shapes
Tensor scale(const Tensor& a, float s);

Tensor reshape(const Tensor& a, Shape shape);
// out[i] = a[index[i]]; backward scatter-adds. Backs every pure rearrangement.
Tensor gather(const Tensor& a, IndexMap index, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);

// [B,M,K] x [B,K,N] -> [B,M,N]; with transpose_b the right operand is [B,N,K].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x[..., in] * W[out, in]^T + b[out]; `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Cross-correlation. x[N,C,H,W], weight[O,C,kh,kw], bias[O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float negative_slope);
Tensor softmax(const Tensor& x);  // over the last axis

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// Space-to-depth on [N,C,H,W]: -> [N, C*f*f, H/f, W/f], channel order c*f*f + dy*f + dx.
Tensor pixel_unshuffle(const Tensor& x, std::size_t factor);
Tensor pixel_shuffle(const Tensor& x, std::size_t factor);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

}  // namespace blindrest::ops
