#include "blindrest/nn.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "blindrest/errors.hpp"
#include "blindrest/ops.hpp"

namespace blindrest {

std::uint64_t param_hash(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params) {
    feed(p.name.data(), p.name.size());
    feed(p.tensor.data().data(), p.tensor.numel() * sizeof(float));
  }
  return h;
}

void load_params(const ParamList& dst, const std::vector<NamedParam>& src) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : src) by_name[s.name] = &s.tensor;
  for (const auto& d : dst) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw FormatError("missing parameter " + d.name);
    if (it->second->shape() != d.tensor.shape()) {
      throw FormatError("parameter " + d.name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                        shape_str(d.tensor.shape()));
    }
    Tensor handle = d.tensor;
    auto out = handle.data_mut();
    std::memcpy(out.data(), it->second->data().data(), out.size() * sizeof(float));
  }
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Tensor handle = p.tensor;
    handle.set_requires_grad(on);
  }
}

namespace nn {

Tensor uniform_param(Shape shape, float bound, Rng& rng) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor constant_param(Shape shape, float value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_, Rng& rng,
               bool with_bias)
    : stride(stride_), padding(padding_) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in * kernel * kernel));
  weight = uniform_param({out, in, kernel, kernel}, bound, rng);
  if (with_bias) bias = uniform_param({out}, bound, rng);
}

Conv2d Conv2d::zeros(std::size_t in, std::size_t out, std::size_t kernel, bool with_bias) {
  Conv2d c;
  c.padding = kernel / 2;
  c.weight = constant_param({out, in, kernel, kernel}, 0.0f);
  if (with_bias) c.bias = constant_param({out}, 0.0f);
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  weight = uniform_param({out, in}, bound, rng);
  if (with_bias) bias = uniform_param({out}, bound, rng);
}

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim) : gamma(constant_param({dim}, 1.0f)), beta(constant_param({dim}, 0.0f)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

GroupNorm::GroupNorm(std::size_t groups_, std::size_t channels)
    : groups(groups_), gamma(constant_param({channels}, 1.0f)), beta(constant_param({channels}, 0.0f)) {}

Tensor GroupNorm::operator()(const Tensor& x) const { return ops::group_norm(x, groups, gamma, beta); }

void GroupNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

}  // namespace nn
}  // namespace blindrest
