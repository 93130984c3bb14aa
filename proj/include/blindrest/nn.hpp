#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blindrest/rng.hpp"
#include "blindrest/tensor.hpp"

namespace blindrest {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

// FNV-1a over every parameter's raw bytes, in list order.
std::uint64_t param_hash(const ParamList& params);

// Copies values by name; throws FormatError on missing names or shape mismatch.
void load_params(const ParamList& dst, const std::vector<NamedParam>& src);

void set_requires_grad(const ParamList& params, bool on);

namespace nn {

Tensor uniform_param(Shape shape, float bound, Rng& rng);
Tensor constant_param(Shape shape, float value);

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]; undefined when built without bias
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng,
         bool with_bias = true);
  static Conv2d zeros(std::size_t in, std::size_t out, std::size_t kernel, bool with_bias);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct GroupNorm {
  std::size_t groups = 1;
  Tensor gamma;
  Tensor beta;

  GroupNorm() = default;
  GroupNorm(std::size_t groups, std::size_t channels);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace nn
}  // namespace blindrest
