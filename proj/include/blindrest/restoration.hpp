#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "blindrest/adam.hpp"
#include "blindrest/degradation.hpp"
#include "blindrest/image.hpp"
#include "blindrest/nn.hpp"
#include "blindrest/ops.hpp"

namespace blindrest {

struct RestorationConfig {
  std::size_t in_channels = 3;
  std::size_t unshuffle_factor = 4;
  std::size_t rstb_count = 2;
  std::size_t stl_per_rstb = 2;
  std::size_t heads = 2;
  std::size_t window = 4;
  std::size_t embed_dim = 32;
  std::size_t mlp_ratio = 2;
  std::size_t upsample_features = 16;
  float leaky_slope = 0.2f;

  // Full-size setting: 8 RSTB x 6 STL, 6 heads, window 8, unshuffle 8.
  static RestorationConfig full_scale();

  // Side lengths must be multiples of this.
  std::size_t required_multiple() const { return unshuffle_factor * window; }
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static RestorationConfig from_map(const std::map<std::string, std::string>& kv);
};

struct WindowAttention {
  nn::Linear qkv;
  nn::Linear proj;
  Tensor relative_bias;  // [(2w-1)^2, heads]
  std::size_t window = 0;
  std::size_t heads = 0;

  WindowAttention() = default;
  WindowAttention(std::size_t dim, std::size_t window, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Window partition maps and shift mask for one feature-map geometry.
struct WindowLayout {
  std::size_t height = 0, width = 0, window = 0, shift = 0;
  ops::IndexMap partition;  // [B, H*W, C] -> [B*nW, w*w, C]
  ops::IndexMap reverse;
  Tensor mask;              // [nW, 1, N, N], 0 or -100; undefined when unshifted
  ops::IndexMap split[3];   // qkv [B*nW, N, 3C] -> q, k, v [B*nW*heads, N, C/heads]
  ops::IndexMap merge;      // [B*nW*heads, N, C/heads] -> [B*nW, N, C]
  ops::IndexMap bias;       // table [(2w-1)^2, heads] -> [heads, N, N]
  std::size_t batch = 0, channels = 0, heads = 0;
  std::size_t windows() const { return (height / window) * (width / window); }
};

WindowLayout make_window_layout(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels,
                                std::size_t window, std::size_t heads, bool shift);

// Multi-head self-attention inside (optionally cyclically shifted) windows of
// a token map x[B, H*W, C]. When `weights` is non-null it receives the
// post-softmax attention, [B*nW*heads, N, N].
Tensor window_attention(const WindowAttention& attn, const Tensor& x, std::size_t height, std::size_t width,
                        bool shift, Tensor* weights = nullptr);
Tensor window_attention(const WindowAttention& attn, const Tensor& x, const WindowLayout& layout,
                        Tensor* weights = nullptr);

struct SwinLayer {
  nn::LayerNorm norm1;
  WindowAttention attn;
  nn::LayerNorm norm2;
  nn::Linear fc1;
  nn::Linear fc2;
  bool shift = false;
};

struct ResidualSwinBlock {
  std::vector<SwinLayer> layers;
  nn::Conv2d conv;
};

/// Pixel-unshuffle encoder, residual Swin transformer body in the low
/// resolution space, nearest-interpolation upsampler.
class RestorationNet {
 public:
  RestorationNet(const RestorationConfig& config, std::uint64_t seed);

  const RestorationConfig& config() const { return config_; }

  // [N,C,H,W] -> [N,C,H,W], unclamped, differentiable.
  Tensor forward(const Tensor& lq) const;
  Tensor shallow(const Tensor& lq) const;        // [N, E, H/f, W/f]
  Tensor deep(const Tensor& shallow) const;      // body residual, same shape
  Tensor reconstruct(const Tensor& features) const;  // upsampler + output conv

  // I_reg, clamped to [0,1].
  Image restore(const Image& lq) const;
  std::vector<Image> restore(const std::vector<Image>& lq) const;

  ParamList parameters() const;
  ParamList deep_parameters() const;  // RSTB stack, body norm and conv

 private:
  const WindowLayout& layout(std::size_t batch, std::size_t h, std::size_t w, bool shift) const;

  RestorationConfig config_;
  nn::Conv2d shallow_conv_;
  std::vector<ResidualSwinBlock> blocks_;
  nn::LayerNorm body_norm_;
  nn::Conv2d body_conv_;
  nn::Conv2d pre_upsample_;
  std::vector<nn::Conv2d> upsample_convs_;
  nn::Conv2d last_conv_;

  struct LayoutCache {
    std::mutex mutex;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, bool>, std::shared_ptr<WindowLayout>> layouts;
  };
  std::shared_ptr<LayoutCache> cache_ = std::make_shared<LayoutCache>();
};

// Produces the degraded input for one training pair.
using Degrader = std::function<Image(const Image& hq, Rng& rng)>;
Degrader standard_degrader(const SamplerOptions& options);

struct RestorationTrainOptions {
  std::uint64_t seed = 0;
  std::size_t iterations = 1000;
  std::size_t batch = 8;
  float lr = 1e-3f;
  bool cosine_decay = true;  // lr * (1 + cos(pi * i / iterations)) / 2 at iteration i
  std::size_t jobs = 1;
  Degrader degrader;  // defaults to standard_degrader({})
};

/// Minimizes ||net(LQ) - HQ||^2 over pairs synthesized on the fly. Batch `i`
/// depends only on (seed, i), so a resumed run replays the same sequence.
class RestorationTrainer {
 public:
  RestorationTrainer(RestorationNet& net, const std::vector<Image>& dataset, RestorationTrainOptions options);

  // Runs the next iteration; returns its loss.
  float step();
  std::size_t iteration() const { return iteration_; }
  bool done() const { return iteration_ >= options_.iterations; }

  Adam& optimizer() { return optimizer_; }
  void resume(std::size_t iteration, const std::vector<NamedParam>& optimizer_state);

  // (LQ, HQ) pair batch for a given iteration; exposed for inspection.
  std::pair<Tensor, Tensor> batch(std::size_t iteration) const;

 private:
  RestorationNet& net_;
  const std::vector<Image>& dataset_;
  RestorationTrainOptions options_;
  Adam optimizer_;
  std::size_t iteration_ = 0;
};

std::vector<float> train_restoration(RestorationNet& net, const std::vector<Image>& dataset,
                                     RestorationTrainOptions options);

}  // namespace blindrest
