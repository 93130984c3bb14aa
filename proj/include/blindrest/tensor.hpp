#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace blindrest {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;

  // Recorded graph edge. Interior nodes drop both once backward has run.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<float>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float32 array with an optional reverse-mode gradient.
///
/// Copies are shallow: two Tensor handles may refer to the same storage.
/// Operations in ops.hpp always allocate fresh results, so shared storage is
/// only ever mutated through data_mut() (initialization, optimizer updates).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> data_mut();
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> grad_mut();
  void clear_grad();

  // Same values, no graph history, fresh storage.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Populates grad() on every reachable
  // tensor with requires_grad and consumes the recorded graph.
  void backward() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

bool grad_enabled();

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result. The backward closure is attached only when recording
// is enabled and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<std::shared_ptr<TensorImpl>> inputs,
                   std::function<void(TensorImpl&)> backward_fn);

// Ordered node list for a backward sweep: every node's inputs precede it.
std::vector<TensorImpl*> topological_order(TensorImpl* root);

}  // namespace detail

}  // namespace blindrest
