#include "blindrest/restoration.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "blindrest/errors.hpp"
#include "blindrest/parallel.hpp"

namespace blindrest {

RestorationConfig RestorationConfig::full_scale() {
  RestorationConfig c;
  c.unshuffle_factor = 8;
  c.rstb_count = 8;
  c.stl_per_rstb = 6;
  c.heads = 6;
  c.window = 8;
  c.embed_dim = 180;
  c.upsample_features = 64;
  return c;
}

void RestorationConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("restoration config: " + m); };
  if (in_channels != 1 && in_channels != 3) fail("in_channels must be 1 or 3");
  if (unshuffle_factor < 2 || (unshuffle_factor & (unshuffle_factor - 1)) != 0) {
    fail("unshuffle_factor must be a power of two >= 2");
  }
  if (rstb_count == 0 || stl_per_rstb == 0) fail("need at least one RSTB and one STL");
  if (heads == 0 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
  if (window == 0) fail("window must be positive");
  if (mlp_ratio == 0 || upsample_features == 0) fail("mlp_ratio and upsample_features must be positive");
}

std::map<std::string, std::string> RestorationConfig::to_map() const {
  return {{"in_channels", std::to_string(in_channels)},
          {"unshuffle_factor", std::to_string(unshuffle_factor)},
          {"rstb_count", std::to_string(rstb_count)},
          {"stl_per_rstb", std::to_string(stl_per_rstb)},
          {"heads", std::to_string(heads)},
          {"window", std::to_string(window)},
          {"embed_dim", std::to_string(embed_dim)},
          {"mlp_ratio", std::to_string(mlp_ratio)},
          {"upsample_features", std::to_string(upsample_features)},
          {"leaky_slope", std::to_string(leaky_slope)}};
}

RestorationConfig RestorationConfig::from_map(const std::map<std::string, std::string>& kv) {
  RestorationConfig c;
  auto get = [&](const char* key, std::size_t& field) {
    if (auto it = kv.find(key); it != kv.end()) field = std::stoul(it->second);
  };
  get("in_channels", c.in_channels);
  get("unshuffle_factor", c.unshuffle_factor);
  get("rstb_count", c.rstb_count);
  get("stl_per_rstb", c.stl_per_rstb);
  get("heads", c.heads);
  get("window", c.window);
  get("embed_dim", c.embed_dim);
  get("mlp_ratio", c.mlp_ratio);
  get("upsample_features", c.upsample_features);
  if (auto it = kv.find("leaky_slope"); it != kv.end()) c.leaky_slope = std::stof(it->second);
  c.validate();
  return c;
}

WindowAttention::WindowAttention(std::size_t dim, std::size_t window_, std::size_t heads_, Rng& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), window(window_), heads(heads_) {
  const std::size_t span = 2 * window - 1;
  relative_bias = nn::uniform_param({span * span, heads}, 0.02f, rng);
}

void WindowAttention::collect(const std::string& prefix, ParamList& out) const {
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
  out.push_back({prefix + ".relative_bias", relative_bias});
}

WindowLayout make_window_layout(std::size_t B, std::size_t H, std::size_t W, std::size_t C, std::size_t w,
                                std::size_t heads, bool shift) {
  if (w == 0 || H % w != 0) {
    throw ContractError("window attention: height " + std::to_string(H) + " not divisible by window " + std::to_string(w));
  }
  if (W % w != 0) {
    throw ContractError("window attention: width " + std::to_string(W) + " not divisible by window " + std::to_string(w));
  }
  if (heads == 0 || C % heads != 0) throw ContractError("window attention: channels not divisible by heads");
  WindowLayout L;
  L.height = H;
  L.width = W;
  L.window = w;
  L.batch = B;
  L.channels = C;
  L.heads = heads;
  // A window covering the whole map makes the shift a no-op.
  L.shift = (shift && w < H && w < W) ? w / 2 : 0;
  const std::size_t s = L.shift;
  const std::size_t nWx = W / w, nW = L.windows(), N = w * w, hd = C / heads;

  auto partition = std::make_shared<std::vector<std::uint32_t>>(B * H * W * C);
  auto reverse = std::make_shared<std::vector<std::uint32_t>>(partition->size());
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t win = 0; win < nW; ++win) {
      const std::size_t wy = win / nWx, wx = win % nWx;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t y = (wy * w + n / w + s) % H, x = (wx * w + n % w + s) % W;
        for (std::size_t c = 0; c < C; ++c, ++i) {
          const std::size_t src = ((b * H + y) * W + x) * C + c;
          (*partition)[i] = static_cast<std::uint32_t>(src);
          (*reverse)[src] = static_cast<std::uint32_t>(i);
        }
      }
    }
  L.partition = partition;
  L.reverse = reverse;

  if (s > 0) {
    auto region = [&](std::size_t v, std::size_t extent) -> std::size_t { return v < extent - w ? 0 : (v < extent - s ? 1 : 2); };
    std::vector<float> mask(nW * N * N, 0.0f);
    for (std::size_t win = 0; win < nW; ++win) {
      const std::size_t wy = win / nWx, wx = win % nWx;
      std::vector<std::size_t> label(N);
      for (std::size_t n = 0; n < N; ++n) label[n] = 3 * region(wy * w + n / w, H) + region(wx * w + n % w, W);
      for (std::size_t a = 0; a < N; ++a)
        for (std::size_t b = 0; b < N; ++b)
          if (label[a] != label[b]) mask[(win * N + a) * N + b] = -100.0f;
    }
    L.mask = Tensor({nW, 1, N, N}, std::move(mask));
  }

  const std::size_t Bw = B * nW;
  for (std::size_t part = 0; part < 3; ++part) {
    auto m = std::make_shared<std::vector<std::uint32_t>>(Bw * heads * N * hd);
    std::size_t k = 0;
    for (std::size_t bw = 0; bw < Bw; ++bw)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t d = 0; d < hd; ++d)
            (*m)[k++] = static_cast<std::uint32_t>((bw * N + n) * 3 * C + part * C + h * hd + d);
    L.split[part] = m;
  }
  auto merge = std::make_shared<std::vector<std::uint32_t>>(Bw * N * C);
  std::size_t k = 0;
  for (std::size_t bw = 0; bw < Bw; ++bw)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t d = 0; d < hd; ++d) (*merge)[k++] = static_cast<std::uint32_t>(((bw * heads + h) * N + n) * hd + d);
  L.merge = merge;

  auto bias = std::make_shared<std::vector<std::uint32_t>>(heads * N * N);
  k = 0;
  const std::size_t span = 2 * w - 1;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = 0; b < N; ++b) {
        const std::size_t dy = a / w + w - 1 - b / w, dx = a % w + w - 1 - b % w;
        (*bias)[k++] = static_cast<std::uint32_t>((dy * span + dx) * heads + h);
      }
  L.bias = bias;
  return L;
}

Tensor window_attention(const WindowAttention& attn, const Tensor& x, const WindowLayout& L, Tensor* weights) {
  if (x.ndim() != 3 || x.dim(0) != L.batch || x.dim(1) != L.height * L.width || x.dim(2) != L.channels) {
    throw DimensionError("window attention: tokens " + shape_str(x.shape()) + " do not match layout");
  }
  const std::size_t B = L.batch, C = L.channels, heads = L.heads, nW = L.windows();
  const std::size_t N = L.window * L.window, Bw = B * nW, hd = C / heads;
  const Tensor windows = ops::gather(x, L.partition, {Bw, N, C});
  const Tensor qkv = attn.qkv(windows);
  const Tensor q = ops::scale(ops::gather(qkv, L.split[0], {Bw * heads, N, hd}), 1.0f / std::sqrt(static_cast<float>(hd)));
  const Tensor k = ops::gather(qkv, L.split[1], {Bw * heads, N, hd});
  const Tensor v = ops::gather(qkv, L.split[2], {Bw * heads, N, hd});
  Tensor a = ops::reshape(ops::matmul(q, k, true), {B, nW, heads, N, N});
  a = ops::add(a, ops::gather(attn.relative_bias, L.bias, {heads, N, N}));
  if (L.mask.defined()) a = ops::add(a, L.mask);
  a = ops::reshape(ops::softmax(a), {Bw * heads, N, N});
  if (weights) *weights = a;
  Tensor out = ops::gather(ops::matmul(a, v), L.merge, {Bw, N, C});
  out = attn.proj(out);
  return ops::gather(out, L.reverse, {B, L.height * L.width, C});
}

Tensor window_attention(const WindowAttention& attn, const Tensor& x, std::size_t height, std::size_t width, bool shift,
                        Tensor* weights) {
  if (x.ndim() != 3) throw DimensionError("window attention: expected tokens [B, H*W, C], got " + shape_str(x.shape()));
  const auto layout = make_window_layout(x.dim(0), height, width, x.dim(2), attn.window, attn.heads, shift);
  return window_attention(attn, x, layout, weights);
}

RestorationNet::RestorationNet(const RestorationConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, stream_id({0x2e57}));
  const std::size_t f = config_.unshuffle_factor, E = config_.embed_dim, F = config_.upsample_features;
  shallow_conv_ = nn::Conv2d(config_.in_channels * f * f, E, 3, 1, 1, rng);
  for (std::size_t b = 0; b < config_.rstb_count; ++b) {
    ResidualSwinBlock block;
    for (std::size_t l = 0; l < config_.stl_per_rstb; ++l) {
      SwinLayer layer;
      layer.norm1 = nn::LayerNorm(E);
      layer.attn = WindowAttention(E, config_.window, config_.heads, rng);
      layer.norm2 = nn::LayerNorm(E);
      layer.fc1 = nn::Linear(E, E * config_.mlp_ratio, rng);
      layer.fc2 = nn::Linear(E * config_.mlp_ratio, E, rng);
      layer.shift = (l % 2) == 1;
      block.layers.push_back(std::move(layer));
    }
    block.conv = nn::Conv2d(E, E, 3, 1, 1, rng);
    blocks_.push_back(std::move(block));
  }
  body_norm_ = nn::LayerNorm(E);
  body_conv_ = nn::Conv2d(E, E, 3, 1, 1, rng);
  pre_upsample_ = nn::Conv2d(E, F, 3, 1, 1, rng);
  for (std::size_t s = 1; s < f; s *= 2) upsample_convs_.push_back(nn::Conv2d(F, F, 3, 1, 1, rng));
  last_conv_ = nn::Conv2d(F, config_.in_channels, 3, 1, 1, rng);
}

const WindowLayout& RestorationNet::layout(std::size_t batch, std::size_t h, std::size_t w, bool shift) const {
  std::lock_guard lock(cache_->mutex);
  auto& slot = cache_->layouts[{batch, h, w, shift}];
  if (!slot) {
    slot = std::make_shared<WindowLayout>(
        make_window_layout(batch, h, w, config_.embed_dim, config_.window, config_.heads, shift));
  }
  return *slot;
}

Tensor RestorationNet::shallow(const Tensor& lq) const {
  if (lq.ndim() != 4 || lq.dim(1) != config_.in_channels) {
    throw DimensionError("restoration: expected [N," + std::to_string(config_.in_channels) + ",H,W], got " +
                         shape_str(lq.shape()));
  }
  const std::size_t m = config_.required_multiple();
  if (lq.dim(2) % m != 0 || lq.dim(3) % m != 0) {
    throw ContractError("restoration: input " + std::to_string(lq.dim(2)) + "x" + std::to_string(lq.dim(3)) +
                        " must have sides divisible by " + std::to_string(m));
  }
  return shallow_conv_(ops::pixel_unshuffle(lq, config_.unshuffle_factor));
}

namespace {

Tensor to_tokens(const Tensor& fm) {
  const std::size_t N = fm.dim(0), C = fm.dim(1), H = fm.dim(2), W = fm.dim(3);
  return ops::reshape(ops::permute(fm, {0, 2, 3, 1}), {N, H * W, C});
}

Tensor to_map(const Tensor& tokens, std::size_t H, std::size_t W) {
  const std::size_t N = tokens.dim(0), C = tokens.dim(2);
  return ops::permute(ops::reshape(tokens, {N, H, W, C}), {0, 3, 1, 2});
}

}  // namespace

Tensor RestorationNet::deep(const Tensor& features) const {
  const std::size_t B = features.dim(0), H = features.dim(2), W = features.dim(3);
  Tensor tokens = to_tokens(features);
  for (const auto& block : blocks_) {
    const Tensor block_in = tokens;
    for (const auto& layer : block.layers) {
      const auto& L = layout(B, H, W, layer.shift);
      tokens = ops::add(tokens, window_attention(layer.attn, layer.norm1(tokens), L));
      const Tensor mlp = layer.fc2(ops::gelu(layer.fc1(layer.norm2(tokens))));
      tokens = ops::add(tokens, mlp);
    }
    tokens = ops::add(to_tokens(block.conv(to_map(tokens, H, W))), block_in);
  }
  return body_conv_(to_map(body_norm_(tokens), H, W));
}

Tensor RestorationNet::reconstruct(const Tensor& features) const {
  const float slope = config_.leaky_slope;
  Tensor y = ops::leaky_relu(pre_upsample_(features), slope);
  for (const auto& conv : upsample_convs_) y = ops::leaky_relu(conv(ops::upsample_nearest(y, 2)), slope);
  return last_conv_(y);
}

Tensor RestorationNet::forward(const Tensor& lq) const {
  const Tensor s = shallow(lq);
  return reconstruct(ops::add(s, deep(s)));
}

Image RestorationNet::restore(const Image& lq) const { return restore(std::vector<Image>{lq}).front(); }

std::vector<Image> RestorationNet::restore(const std::vector<Image>& lq) const {
  NoGradGuard no_grad;
  return from_tensor(forward(to_tensor(lq)));
}

ParamList RestorationNet::deep_parameters() const {
  ParamList out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string bp = "rstb" + std::to_string(b);
    for (std::size_t l = 0; l < blocks_[b].layers.size(); ++l) {
      const auto& layer = blocks_[b].layers[l];
      const std::string lp = bp + ".stl" + std::to_string(l);
      layer.norm1.collect(lp + ".norm1", out);
      layer.attn.collect(lp + ".attn", out);
      layer.norm2.collect(lp + ".norm2", out);
      layer.fc1.collect(lp + ".fc1", out);
      layer.fc2.collect(lp + ".fc2", out);
    }
    blocks_[b].conv.collect(bp + ".conv", out);
  }
  body_norm_.collect("body_norm", out);
  body_conv_.collect("body_conv", out);
  return out;
}

ParamList RestorationNet::parameters() const {
  ParamList out;
  shallow_conv_.collect("shallow", out);
  for (auto& p : deep_parameters()) out.push_back(std::move(p));
  pre_upsample_.collect("pre_upsample", out);
  for (std::size_t i = 0; i < upsample_convs_.size(); ++i) upsample_convs_[i].collect("upsample" + std::to_string(i), out);
  last_conv_.collect("last", out);
  return out;
}

Degrader standard_degrader(const SamplerOptions& options) {
  return [options](const Image& hq, Rng& rng) {
    const auto plan = sample_plan(rng, options, hq.height, hq.width);
    return degrade(hq, plan);
  };
}

namespace {
constexpr std::uint64_t kRestoreStream = 0x7e57041e;
}

RestorationTrainer::RestorationTrainer(RestorationNet& net, const std::vector<Image>& dataset,
                                       RestorationTrainOptions options)
    : net_(net), dataset_(dataset), options_(std::move(options)), optimizer_(net.parameters(), options_.lr) {
  if (dataset_.empty()) throw ContractError("train_restoration: dataset is empty");
  if (options_.batch == 0) throw ContractError("train_restoration: batch must be positive");
  if (!options_.degrader) options_.degrader = standard_degrader({});
}

std::pair<Tensor, Tensor> RestorationTrainer::batch(std::size_t iteration) const {
  Rng pick(options_.seed, stream_id({kRestoreStream, iteration}));
  std::vector<std::size_t> index(options_.batch);
  for (auto& i : index) i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(dataset_.size()) - 1));
  std::vector<Image> lq(options_.batch), hq(options_.batch);
  parallel_for(options_.batch, options_.jobs, [&](std::size_t b) {
    Rng rng(options_.seed, stream_id({kRestoreStream, iteration, b + 1}));
    hq[b] = dataset_[index[b]];
    lq[b] = options_.degrader(hq[b], rng);
  });
  return {to_tensor(lq), to_tensor(hq)};
}

float RestorationTrainer::step() {
  if (options_.cosine_decay) {
    const double progress = static_cast<double>(iteration_) / static_cast<double>(options_.iterations);
    optimizer_.set_lr(static_cast<float>(options_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
  }
  auto [lq, hq] = batch(iteration_);
  const Tensor loss = ops::mse_loss(net_.forward(lq), hq);
  const float value = loss.item();
  if (!std::isfinite(value)) throw TrainingError("restoration loss is not finite", static_cast<long>(iteration_));
  loss.backward();
  optimizer_.step();
  ++iteration_;
  return value;
}

void RestorationTrainer::resume(std::size_t iteration, const std::vector<NamedParam>& optimizer_state) {
  optimizer_.import_state(optimizer_state, iteration);
  iteration_ = iteration;
}

std::vector<float> train_restoration(RestorationNet& net, const std::vector<Image>& dataset,
                                     RestorationTrainOptions options) {
  RestorationTrainer trainer(net, dataset, std::move(options));
  std::vector<float> trace;
  while (!trainer.done()) trace.push_back(trainer.step());
  return trace;
}

}  // namespace blindrest
