#include "blindrest/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "blindrest/errors.hpp"

namespace blindrest::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using detail::make_result;
using detail::TensorImpl;

bool wants_grad(const std::shared_ptr<TensorImpl>& t) { return t && t->requires_grad; }

void require_ndim(const Tensor& t, std::size_t n, const char* what) {
  if (t.ndim() != n) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(n) + "-d tensor, got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size()) {
    throw DimensionError(std::string(what) + ": rank mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] != sb[i]) {
      throw DimensionError(std::string(what) + ": axis " + std::to_string(i) + " mismatch " +
                           shape_str(sa) + " vs " + shape_str(sb));
    }
  }
}

// Maps each flat index of `full` onto the flat index of the broadcast operand.
std::vector<std::uint32_t> broadcast_map(const Shape& full, const Shape& part, const char* what) {
  if (part.size() > full.size()) {
    throw DimensionError(std::string(what) + ": cannot broadcast " + shape_str(part) + " to " + shape_str(full));
  }
  const std::size_t nd = full.size();
  Shape padded(nd, 1);
  std::copy(part.begin(), part.end(), padded.begin() + static_cast<std::ptrdiff_t>(nd - part.size()));
  std::vector<std::size_t> stride(nd, 0);
  std::size_t s = 1;
  for (std::size_t i = nd; i-- > 0;) {
    if (padded[i] != full[i] && padded[i] != 1) {
      throw DimensionError(std::string(what) + ": axis " + std::to_string(i) + " cannot broadcast " +
                           shape_str(part) + " to " + shape_str(full));
    }
    stride[i] = padded[i] == 1 ? 0 : s;
    s *= padded[i];
  }
  std::vector<std::uint32_t> map(numel(full));
  std::vector<std::size_t> idx(nd, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = static_cast<std::uint32_t>(off);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < full[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.numel();
  std::vector<float> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[i];
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, [](TensorImpl& o) {
      for (int k = 0; k < 2; ++k) {
        auto& p = o.parents[k];
        if (!wants_grad(p)) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  auto map = std::make_shared<std::vector<std::uint32_t>>(broadcast_map(a.shape(), b.shape(), "add"));
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[(*map)[i]];
  return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, [map](TensorImpl& o) {
    if (wants_grad(o.parents[0])) {
      auto& g = o.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (wants_grad(o.parents[1])) {
      auto& g = o.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.numel();
  auto map = std::make_shared<std::vector<std::uint32_t>>();
  if (a.shape() == b.shape()) {
    map->resize(n);
    std::iota(map->begin(), map->end(), 0u);
  } else {
    *map = broadcast_map(a.shape(), b.shape(), "mul");
  }
  std::vector<float> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[(*map)[i]];
  return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, [map](TensorImpl& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->data[(*map)[i]];
    }
    if (wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i] * pa->data[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const std::size_t n = a.numel();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, [](TensorImpl& o) {
    for (int k = 0; k < 2; ++k) {
      auto& p = o.parents[k];
      if (!wants_grad(p)) continue;
      const float sign = k == 0 ? 1.0f : -1.0f;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * o.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(a.shape(), std::move(out), {a.impl()}, [s](TensorImpl& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " has " + std::to_string(a.numel()) +
                         " elements, target " + shape_str(shape) + " has " + std::to_string(numel(shape)));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a.impl()}, [](TensorImpl& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor gather(const Tensor& a, IndexMap index, Shape shape) {
  if (numel(shape) != index->size()) {
    throw DimensionError("gather: index map has " + std::to_string(index->size()) + " entries, shape " +
                         shape_str(shape) + " needs " + std::to_string(numel(shape)));
  }
  const auto ad = a.data();
  std::vector<float> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[(*index)[i]];
  return make_result(std::move(shape), std::move(out), {a.impl()}, [index](TensorImpl& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*index)[i]] += o.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& in = a.shape();
  const std::size_t nd = in.size();
  if (axes.size() != nd) throw DimensionError("permute: expected " + std::to_string(nd) + " axes");
  std::vector<std::size_t> in_stride(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(nd);
  std::vector<std::size_t> stride(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    if (axes[i] >= nd) throw DimensionError("permute: axis " + std::to_string(axes[i]) + " out of range");
    out_shape[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  auto map = std::make_shared<std::vector<std::uint32_t>>(a.numel());
  std::vector<std::size_t> idx(nd, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < map->size(); ++i) {
    (*map)[i] = static_cast<std::uint32_t>(off);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out_shape[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return gather(a, map, std::move(out_shape));
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size()) throw DimensionError("concat: rank mismatch");
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (i != axis && sa[i] != sb[i]) {
      throw DimensionError("concat: axis " + std::to_string(i) + " mismatch " + shape_str(sa) + " vs " +
                           shape_str(sb));
    }
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sa[i];
  const std::size_t ca = a.numel() / outer;
  const std::size_t cb = b.numel() / outer;
  Shape shape = sa;
  shape[axis] += sb[axis];
  std::vector<float> out(a.numel() + b.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().begin() + o * ca, ca, out.begin() + o * (ca + cb));
    std::copy_n(b.data().begin() + o * cb, cb, out.begin() + o * (ca + cb) + ca);
  }
  return make_result(std::move(shape), std::move(out), {a.impl(), b.impl()}, [outer, ca, cb](TensorImpl& o) {
    const std::size_t sizes[2] = {ca, cb};
    for (int k = 0; k < 2; ++k) {
      auto& p = o.parents[k];
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      const std::size_t offset = k == 0 ? 0 : ca;
      for (std::size_t r = 0; r < outer; ++r) {
        for (std::size_t i = 0; i < sizes[k]; ++i) g[r * sizes[k] + i] += o.grad[r * (ca + cb) + offset + i];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_ndim(a, 3, "matmul lhs");
  require_ndim(b, 3, "matmul rhs");
  const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2);
  if (b.dim(0) != B) throw DimensionError("matmul: axis 0 (batch) mismatch");
  const std::size_t N = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t Kb = transpose_b ? b.dim(2) : b.dim(1);
  if (Kb != K) {
    throw DimensionError("matmul: contraction axis mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<float> out(B * M * N);
  for (std::size_t i = 0; i < B; ++i) {
    ConstMatMap A(a.data().data() + i * M * K, M, K);
    MatMap C(out.data() + i * M * N, M, N);
    if (transpose_b) {
      ConstMatMap Bm(b.data().data() + i * N * K, N, K);
      C.noalias() = A * Bm.transpose();
    } else {
      ConstMatMap Bm(b.data().data() + i * K * N, K, N);
      C.noalias() = A * Bm;
    }
  }
  return make_result({B, M, N}, std::move(out), {a.impl(), b.impl()}, [B, M, N, K, transpose_b](TensorImpl& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    for (std::size_t i = 0; i < B; ++i) {
      ConstMatMap dC(o.grad.data() + i * M * N, M, N);
      if (wants_grad(pa)) {
        MatMap dA(pa->ensure_grad().data() + i * M * K, M, K);
        if (transpose_b) {
          ConstMatMap Bm(pb->data.data() + i * N * K, N, K);
          dA.noalias() += dC * Bm;
        } else {
          ConstMatMap Bm(pb->data.data() + i * K * N, K, N);
          dA.noalias() += dC * Bm.transpose();
        }
      }
      if (wants_grad(pb)) {
        ConstMatMap A(pa->data.data() + i * M * K, M, K);
        if (transpose_b) {
          MatMap dB(pb->ensure_grad().data() + i * N * K, N, K);
          dB.noalias() += dC.transpose() * A;
        } else {
          MatMap dB(pb->ensure_grad().data() + i * K * N, K, N);
          dB.noalias() += A.transpose() * dC;
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_ndim(weight, 2, "linear weight");
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.ndim() == 0 || x.shape().back() != in_f) {
    throw DimensionError("linear: last axis of input " + shape_str(x.shape()) + " must equal " +
                         std::to_string(in_f));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_f)) {
    throw DimensionError("linear: bias axis 0 must equal " + std::to_string(out_f));
  }
  const std::size_t rows = x.numel() / in_f;
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<float> out(rows * out_f);
  {
    ConstMatMap X(x.data().data(), rows, in_f);
    ConstMatMap W(weight.data().data(), out_f, in_f);
    MatMap Y(out.data(), rows, out_f);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXf> b(bias.data().data(), out_f);
      Y.rowwise() += b;
    }
  }
  return make_result(std::move(shape), std::move(out), {x.impl(), weight.impl(), bias.impl()},
                     [rows, in_f, out_f](TensorImpl& o) {
                       auto& px = o.parents[0];
                       auto& pw = o.parents[1];
                       auto& pb = o.parents[2];
                       ConstMatMap dY(o.grad.data(), rows, out_f);
                       if (wants_grad(px)) {
                         MatMap dX(px->ensure_grad().data(), rows, in_f);
                         dX.noalias() += dY * ConstMatMap(pw->data.data(), out_f, in_f);
                       }
                       if (wants_grad(pw)) {
                         MatMap dW(pw->ensure_grad().data(), out_f, in_f);
                         dW.noalias() += dY.transpose() * ConstMatMap(px->data.data(), rows, in_f);
                       }
                       if (wants_grad(pb)) {
                         Eigen::Map<Eigen::RowVectorXf> db(pb->ensure_grad().data(), out_f);
                         db += dY.colwise().sum();
                       }
                     });
}

namespace {

struct ConvGeom {
  std::size_t N, C, H, W, O, kh, kw, stride, pad, Ho, Wo;
  std::size_t patch() const { return C * kh * kw; }
  std::size_t pixels() const { return Ho * Wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const float* x, const ConvGeom& g, float* cols) {
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          float* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<long>(g.H)) {
            std::fill_n(dst, g.Wo, 0.0f);
            continue;
          }
          const float* src = x + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.W)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeom& g, float* dx) {
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const float* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          float* dst = dx + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.W)) dst[ix] += row[oy * g.Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_ndim(x, 4, "conv2d input");
  require_ndim(weight, 4, "conv2d weight");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.C) {
    throw DimensionError("conv2d: axis 1 (channels) mismatch, input has " + std::to_string(g.C) +
                         ", weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.O)) {
    throw DimensionError("conv2d: bias axis 0 must equal " + std::to_string(g.O));
  }
  if (g.H + 2 * padding < g.kh) throw DimensionError("conv2d: axis 2 (height) smaller than kernel");
  if (g.W + 2 * padding < g.kw) throw DimensionError("conv2d: axis 3 (width) smaller than kernel");
  g.Ho = (g.H + 2 * padding - g.kh) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.kw) / stride + 1;

  std::vector<float> out(g.N * g.O * g.pixels());
  std::vector<float> cols(g.pointwise() ? 0 : g.patch() * g.pixels());
  ConstMatMap Wm(weight.data().data(), g.O, g.patch());
  for (std::size_t n = 0; n < g.N; ++n) {
    const float* xn = x.data().data() + n * g.C * g.H * g.W;
    const float* colp = xn;
    if (!g.pointwise()) {
      im2col(xn, g, cols.data());
      colp = cols.data();
    }
    MatMap Y(out.data() + n * g.O * g.pixels(), g.O, g.pixels());
    Y.noalias() = Wm * ConstMatMap(colp, g.patch(), g.pixels());
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXf> b(bias.data().data(), g.O);
      Y.colwise() += b;
    }
  }
  return make_result({g.N, g.O, g.Ho, g.Wo}, std::move(out), {x.impl(), weight.impl(), bias.impl()},
                     [g](TensorImpl& o) {
                       auto& px = o.parents[0];
                       auto& pw = o.parents[1];
                       auto& pb = o.parents[2];
                       std::vector<float> cols(g.patch() * g.pixels());
                       ConstMatMap Wm(pw->data.data(), g.O, g.patch());
                       for (std::size_t n = 0; n < g.N; ++n) {
                         ConstMatMap dY(o.grad.data() + n * g.O * g.pixels(), g.O, g.pixels());
                         const float* xn = px->data.data() + n * g.C * g.H * g.W;
                         if (wants_grad(pw)) {
                           const float* colp = xn;
                           if (!g.pointwise()) {
                             im2col(xn, g, cols.data());
                             colp = cols.data();
                           }
                           MatMap dW(pw->ensure_grad().data(), g.O, g.patch());
                           dW.noalias() += dY * ConstMatMap(colp, g.patch(), g.pixels()).transpose();
                         }
                         if (wants_grad(pb)) {
                           Eigen::Map<Eigen::VectorXf> db(pb->ensure_grad().data(), g.O);
                           db += dY.rowwise().sum();
                         }
                         if (wants_grad(px)) {
                           float* dxn = px->ensure_grad().data() + n * g.C * g.H * g.W;
                           if (g.pointwise()) {
                             MatMap dX(dxn, g.C, g.pixels());
                             dX.noalias() += Wm.transpose() * dY;
                           } else {
                             MatMap dcols(cols.data(), g.patch(), g.pixels());
                             dcols.noalias() = Wm.transpose() * dY;
                             col2im_add(cols.data(), g, dxn);
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) {
    throw DimensionError("layer_norm: affine parameters must match last axis " + std::to_string(D));
  }
  const std::size_t rows = x.numel() / D;
  std::vector<float> out(x.numel());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(rows);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * D;
    double mu = 0.0;
    for (std::size_t i = 0; i < D; ++i) mu += xr[i];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = static_cast<float>(is);
    for (std::size_t i = 0; i < D; ++i) {
      const float h = static_cast<float>((xr[i] - mu) * is);
      (*xhat)[r * D + i] = h;
      out[r * D + i] = h * gamma.data()[i] + beta.data()[i];
    }
  }
  return make_result(x.shape(), std::move(out), {x.impl(), gamma.impl(), beta.impl()},
                     [rows, D, xhat, inv_std](TensorImpl& o) {
                       auto& px = o.parents[0];
                       auto& pg = o.parents[1];
                       auto& pb = o.parents[2];
                       const auto& gm = pg->data;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const float* dy = o.grad.data() + r * D;
                         const float* h = xhat->data() + r * D;
                         if (wants_grad(pg)) {
                           auto& g = pg->ensure_grad();
                           for (std::size_t i = 0; i < D; ++i) g[i] += dy[i] * h[i];
                         }
                         if (wants_grad(pb)) {
                           auto& g = pb->ensure_grad();
                           for (std::size_t i = 0; i < D; ++i) g[i] += dy[i];
                         }
                         if (wants_grad(px)) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t i = 0; i < D; ++i) {
                             const double dh = dy[i] * gm[i];
                             m1 += dh;
                             m2 += dh * h[i];
                           }
                           m1 /= static_cast<double>(D);
                           m2 /= static_cast<double>(D);
                           float* dx = px->ensure_grad().data() + r * D;
                           const double is = (*inv_std)[r];
                           for (std::size_t i = 0; i < D; ++i) {
                             dx[i] += static_cast<float>(is * (dy[i] * gm[i] - m1 - h[i] * m2));
                           }
                         }
                       }
                     });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, float eps) {
  require_ndim(x, 4, "group_norm input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (groups == 0 || C % groups != 0) {
    throw DimensionError("group_norm: axis 1 (channels) " + std::to_string(C) + " not divisible by " +
                         std::to_string(groups) + " groups");
  }
  if (gamma.numel() != C || beta.numel() != C) throw DimensionError("group_norm: affine parameters must match axis 1");
  const std::size_t cpg = C / groups;
  const std::size_t gsize = cpg * HW;
  std::vector<float> out(x.numel());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(N * groups);
  const auto xd = x.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (n * C + gi * cpg) * HW;
      double mu = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) mu += xd[base + i];
      mu /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[n * groups + gi] = static_cast<float>(is);
      for (std::size_t i = 0; i < gsize; ++i) {
        const std::size_t c = gi * cpg + i / HW;
        const float h = static_cast<float>((xd[base + i] - mu) * is);
        (*xhat)[base + i] = h;
        out[base + i] = h * gamma.data()[c] + beta.data()[c];
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x.impl(), gamma.impl(), beta.impl()},
                     [N, C, HW, groups, cpg, gsize, xhat, inv_std](TensorImpl& o) {
                       auto& px = o.parents[0];
                       auto& pg = o.parents[1];
                       auto& pb = o.parents[2];
                       const auto& gm = pg->data;
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t gi = 0; gi < groups; ++gi) {
                           const std::size_t base = (n * C + gi * cpg) * HW;
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t i = 0; i < gsize; ++i) {
                             const std::size_t c = gi * cpg + i / HW;
                             const float dy = o.grad[base + i];
                             const float h = (*xhat)[base + i];
                             if (wants_grad(pg)) pg->ensure_grad()[c] += dy * h;
                             if (wants_grad(pb)) pb->ensure_grad()[c] += dy;
                             const double dh = dy * gm[c];
                             m1 += dh;
                             m2 += dh * h;
                           }
                           if (!wants_grad(px)) continue;
                           m1 /= static_cast<double>(gsize);
                           m2 /= static_cast<double>(gsize);
                           const double is = (*inv_std)[n * groups + gi];
                           auto& dx = px->ensure_grad();
                           for (std::size_t i = 0; i < gsize; ++i) {
                             const std::size_t c = gi * cpg + i / HW;
                             dx[base + i] += static_cast<float>(
                                 is * (o.grad[base + i] * gm[c] - m1 - (*xhat)[base + i] * m2));
                           }
                         }
                       }
                     });
}

namespace {

template <typename F, typename DF>
Tensor pointwise(const Tensor& x, F f, DF df) {
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), {x.impl()}, [df](TensorImpl& o) {
    auto& p = o.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(p->data[i]);
  });
}

}  // namespace

Tensor silu(const Tensor& x) {
  return pointwise(
      x, [](float v) { return v / (1.0f + std::exp(-v)); },
      [](float v) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return s * (1.0f + v * (1.0f - s));
      });
}

Tensor gelu(const Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  constexpr float kInvSqrt2Pi = 0.39894228040143268f;
  return pointwise(
      x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
      [](float v) { return 0.5f * (1.0f + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5f * v * v); });
}

Tensor leaky_relu(const Tensor& x, float negative_slope) {
  return pointwise(
      x, [negative_slope](float v) { return v >= 0.0f ? v : negative_slope * v; },
      [negative_slope](float v) { return v >= 0.0f ? 1.0f : negative_slope; });
}

Tensor softmax(const Tensor& x) {
  const std::size_t D = x.shape().back();
  const std::size_t rows = x.numel() / D;
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * D;
    float* yr = out.data() + r * D;
    const float mx = *std::max_element(xr, xr + D);
    double z = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      z += yr[i];
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::size_t i = 0; i < D; ++i) yr[i] *= inv;
  }
  auto y = std::make_shared<std::vector<float>>(out);
  return make_result(x.shape(), std::move(out), {x.impl()}, [rows, D, y](TensorImpl& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* yr = y->data() + r * D;
      const float* dy = o.grad.data() + r * D;
      double dot = 0.0;
      for (std::size_t i = 0; i < D; ++i) dot += dy[i] * yr[i];
      for (std::size_t i = 0; i < D; ++i) g[r * D + i] += yr[i] * static_cast<float>(dy[i] - dot);
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make_result({1}, {static_cast<float>(s)}, {x.impl()}, [](TensorImpl& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  const float inv = 1.0f / static_cast<float>(x.numel());
  return make_result({1}, {static_cast<float>(s / static_cast<double>(x.numel()))}, {x.impl()}, [inv](TensorImpl& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (auto& v : g) v += o.grad[0] * inv;
  });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse_loss");
  const std::size_t n = prediction.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(prediction.data()[i]) - target.data()[i];
    s += d * d;
  }
  return make_result({1}, {static_cast<float>(s / static_cast<double>(n))}, {prediction.impl(), target.impl()},
                     [n](TensorImpl& o) {
                       auto& pp = o.parents[0];
                       auto& pt = o.parents[1];
                       const float k = 2.0f * o.grad[0] / static_cast<float>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         const float d = k * (pp->data[i] - pt->data[i]);
                         if (wants_grad(pp)) pp->ensure_grad()[i] += d;
                         if (wants_grad(pt)) pt->ensure_grad()[i] -= d;
                       }
                     });
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t f) {
  require_ndim(x, 4, "pixel_unshuffle");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (f == 0 || H % f != 0) throw ContractError("pixel_unshuffle: axis 2 (height) " + std::to_string(H) + " not divisible by " + std::to_string(f));
  if (W % f != 0) throw ContractError("pixel_unshuffle: axis 3 (width) " + std::to_string(W) + " not divisible by " + std::to_string(f));
  const std::size_t h = H / f, w = W / f, Co = C * f * f;
  auto map = std::make_shared<std::vector<std::uint32_t>>(x.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co) {
      const std::size_t c = co / (f * f), dy = (co / f) % f, dx = co % f;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          (*map)[i++] = static_cast<std::uint32_t>(((n * C + c) * H + y * f + dy) * W + xx * f + dx);
    }
  return gather(x, map, {N, Co, h, w});
}

Tensor pixel_shuffle(const Tensor& x, std::size_t f) {
  require_ndim(x, 4, "pixel_shuffle");
  const std::size_t N = x.dim(0), Ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (f == 0 || Ci % (f * f) != 0) throw ContractError("pixel_shuffle: axis 1 (channels) not divisible by factor squared");
  const std::size_t C = Ci / (f * f), H = h * f, W = w * f;
  auto map = std::make_shared<std::vector<std::uint32_t>>(x.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t Y = 0; Y < H; ++Y)
        for (std::size_t X = 0; X < W; ++X) {
          const std::size_t ci = c * f * f + (Y % f) * f + X % f;
          (*map)[i++] = static_cast<std::uint32_t>(((n * Ci + ci) * h + Y / f) * w + X / f);
        }
  return gather(x, map, {N, C, H, W});
}

Tensor upsample_nearest(const Tensor& x, std::size_t f) {
  require_ndim(x, 4, "upsample_nearest");
  const std::size_t N = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3), H = h * f, W = w * f;
  auto map = std::make_shared<std::vector<std::uint32_t>>(N * C * H * W);
  std::size_t i = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t Y = 0; Y < H; ++Y)
      for (std::size_t X = 0; X < W; ++X) (*map)[i++] = static_cast<std::uint32_t>((nc * h + Y / f) * w + X / f);
  return gather(x, map, {N, C, H, W});
}

}  // namespace blindrest::ops
