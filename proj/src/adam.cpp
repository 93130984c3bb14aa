#include "blindrest/adam.hpp"

#include <cmath>
#include <map>

#include "blindrest/errors.hpp"

namespace blindrest {

void adam_step(Tensor& param, AdamState& state) {
  if (!param.has_grad()) throw ContractError("adam_step: parameter has no gradient");
  const std::size_t n = param.numel();
  if (state.m.empty()) {
    state.m.assign(n, 0.0f);
    state.v.assign(n, 0.0f);
  }
  if (state.m.size() != n || state.v.size() != n) throw DimensionError("adam_step: moment buffers do not match parameter");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));
  auto p = param.data_mut();
  const auto g = param.grad();
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0f - state.beta1) * g[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0f - state.beta2) * g[i] * g[i];
    const float mhat = state.m[i] / c1;
    const float vhat = state.v[i] / c2;
    p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  param.clear_grad();
}

Adam::Adam(ParamList params, float lr, float beta1, float beta2, float eps) : params_(std::move(params)) {
  states_.resize(params_.size());
  for (auto& s : states_) {
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i].tensor, states_[i]);
}

void Adam::set_lr(float lr) {
  for (auto& s : states_) s.lr = lr;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<NamedParam> Adam::export_state() const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& s = states_[i];
    const auto n = params_[i].tensor.numel();
    out.push_back({"adam.m/" + params_[i].name,
                   Tensor(params_[i].tensor.shape(), s.m.empty() ? std::vector<float>(n, 0.0f) : s.m)});
    out.push_back({"adam.v/" + params_[i].name,
                   Tensor(params_[i].tensor.shape(), s.v.empty() ? std::vector<float>(n, 0.0f) : s.v)});
  }
  return out;
}

void Adam::import_state(const std::vector<NamedParam>& tensors, std::uint64_t step_count) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto m = by_name.find("adam.m/" + params_[i].name);
    auto v = by_name.find("adam.v/" + params_[i].name);
    if (m == by_name.end() || v == by_name.end()) {
      throw FormatError("optimizer state missing for parameter " + params_[i].name);
    }
    states_[i].m.assign(m->second->data().begin(), m->second->data().end());
    states_[i].v.assign(v->second->data().begin(), v->second->data().end());
    states_[i].step_count = step_count;
  }
}

}  // namespace blindrest
