#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blindrest/nn.hpp"
#include "blindrest/tensor.hpp"

namespace blindrest {

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::uint64_t step_count = 0;
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// One bias-corrected Adam update. Requires a populated gradient and clears it.
void adam_step(Tensor& param, AdamState& state);

/// Adam over a fixed parameter list, one state per parameter.
class Adam {
 public:
  Adam(ParamList params, float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

  void step();
  void zero_grad();
  void set_lr(float lr);

  const ParamList& params() const { return params_; }
  std::uint64_t step_count() const { return states_.empty() ? 0 : states_.front().step_count; }

  // Moment buffers as named tensors ("adam.m/<param>", "adam.v/<param>") for checkpoints.
  std::vector<NamedParam> export_state() const;
  void import_state(const std::vector<NamedParam>& tensors, std::uint64_t step_count);

 private:
  ParamList params_;
  std::vector<AdamState> states_;
};

}  // namespace blindrest
