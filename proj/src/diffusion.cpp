#include "blindrest/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "blindrest/errors.hpp"
#include "blindrest/parallel.hpp"

namespace blindrest {

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T) throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleLaw law) {
  if (T < 1) throw ContractError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ContractError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  if (law != ScheduleLaw::linear) throw ContractError("make_schedule: unknown law");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto n = static_cast<std::size_t>(T) + 1;
  s.betas.assign(n, 0.0);
  s.alphas.assign(n, 1.0);
  s.alpha_bars.assign(n, 1.0);
  s.posterior_variances.assign(n, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    const auto i = static_cast<std::size_t>(t);
    s.betas[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    s.alpha_bars[i] = s.alpha_bars[i - 1] * s.alphas[i];
    s.posterior_variances[i] = (1.0 - s.alpha_bars[i - 1]) / (1.0 - s.alpha_bars[i]) * s.betas[i];
  }
  return s;
}

namespace {

void check_timestep(int t, const NoiseSchedule& schedule, const char* where) {
  if (t < 1 || t > schedule.T) {
    throw ContractError(std::string(where) + ": timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(schedule.T) + "]");
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(where) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
  }
}

}  // namespace

Tensor forward_diffuse(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  check_timestep(t, schedule, "forward_diffuse");
  check_same_shape(z, eps, "forward_diffuse");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<float> out(z.numel());
  const auto zd = z.data();
  const auto ed = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * zd[i] + b * ed[i]);
  return Tensor(z.shape(), std::move(out));
}

std::vector<int> spaced_steps(int T, int n) {
  if (T < 1) throw ContractError("spaced_steps: T must be >= 1");
  if (n < 1 || n > T) {
    throw ContractError("spaced_steps: step count " + std::to_string(n) + " outside [1, " + std::to_string(T) + "]");
  }
  if (n == 1) return {T};
  std::vector<int> steps;
  for (int i = n - 1; i >= 0; --i) {
    const int t = static_cast<int>(std::lround(1.0 + static_cast<double>(i) * (T - 1) / (n - 1)));
    if (steps.empty() || steps.back() != t) steps.push_back(t);
  }
  return steps;
}

StepCoefficients step_coefficients(const NoiseSchedule& schedule, int t, int t_prev) {
  check_timestep(t, schedule, "step_coefficients");
  if (t_prev < 0 || t_prev >= t) throw ContractError("step_coefficients: need t > t_prev >= 0");
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double beta = 1.0 - ab / ab_prev;
  StepCoefficients c;
  c.coef_z0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  c.coef_zt = std::sqrt(ab / ab_prev) * (1.0 - ab_prev) / (1.0 - ab);
  c.variance = t_prev == 0 ? 0.0 : (1.0 - ab_prev) / (1.0 - ab) * beta;
  return c;
}

Tensor estimate_z0(const Tensor& z_t, int t, const Tensor& predicted_eps, const NoiseSchedule& schedule) {
  check_timestep(t, schedule, "estimate_z0");
  check_same_shape(z_t, predicted_eps, "estimate_z0");
  const double ab = schedule.alpha_bar(t);
  const double root = std::sqrt(ab), noise = std::sqrt(1.0 - ab);
  std::vector<float> out(z_t.numel());
  const auto zd = z_t.data();
  const auto ed = predicted_eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((zd[i] - noise * ed[i]) / root);
  return Tensor(z_t.shape(), std::move(out));
}

Tensor posterior_mean(const Tensor& z0, const Tensor& z_t, const StepCoefficients& c) {
  check_same_shape(z0, z_t, "posterior_mean");
  std::vector<float> out(z0.numel());
  const auto a = z0.data();
  const auto b = z_t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(c.coef_z0 * a[i] + c.coef_zt * b[i]);
  return Tensor(z0.shape(), std::move(out));
}

Tensor gaussian_noise(const Shape& shape, Rng& rng) {
  std::vector<float> out(numel(shape));
  for (auto& v : out) v = static_cast<float>(rng.normal());
  return Tensor(shape, std::move(out));
}

Tensor add_step_noise(const Tensor& mean, double variance, Rng& rng) {
  if (variance == 0.0) return mean;
  const double sigma = std::sqrt(variance);
  std::vector<float> out(mean.data().begin(), mean.data().end());
  for (auto& v : out) v = static_cast<float>(v + sigma * rng.normal());
  return Tensor(mean.shape(), std::move(out));
}

Tensor ddpm_step(const EpsModel& model, const Tensor& z_t, int t, int t_prev, const NoiseSchedule& schedule,
                 Rng& rng) {
  const auto c = step_coefficients(schedule, t, t_prev);
  Tensor eps;
  {
    NoGradGuard no_grad;
    eps = model(z_t, t);
  }
  const Tensor z0 = estimate_z0(z_t, t, eps, schedule);
  return add_step_noise(posterior_mean(z0, z_t, c), c.variance, rng);
}

Rng sampling_rng(std::uint64_t seed) { return Rng(seed, stream_id({0x5a3d1e})); }

Tensor ddpm_sample(const EpsModel& model, const Shape& latent_shape, int steps, const NoiseSchedule& schedule,
                   std::uint64_t seed) {
  const auto ts = spaced_steps(schedule.T, steps);
  Rng rng = sampling_rng(seed);
  Tensor z = gaussian_noise(latent_shape, rng);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    z = ddpm_step(model, z, ts[i], t_prev, schedule, rng);
  }
  return z;
}

std::string to_string(CodecKind kind) { return kind == CodecKind::identity ? "identity" : "tiny-ae"; }

CodecKind parse_codec_kind(const std::string& text) {
  if (text == "identity") return CodecKind::identity;
  if (text == "tiny-ae") return CodecKind::tiny_ae;
  throw ContractError("unknown codec kind '" + text + "' (expected identity or tiny-ae)");
}

LatentCodec::LatentCodec(CodecKind kind, std::size_t image_channels, std::size_t latent_channels, std::uint64_t seed)
    : kind_(kind), image_channels_(image_channels), latent_channels_(latent_channels) {
  if (kind_ == CodecKind::identity) return;
  if (latent_channels_ == 0) throw ContractError("tiny-ae needs at least one latent channel");
  Rng rng(seed, stream_id({0xc0dec}));
  constexpr std::size_t hidden = 32;
  enc1_ = nn::Conv2d(image_channels_, hidden, 3, 2, 1, rng);
  enc2_ = nn::Conv2d(hidden, latent_channels_, 3, 2, 1, rng);
  dec1_ = nn::Conv2d(latent_channels_, hidden, 3, 1, 1, rng);
  dec2_ = nn::Conv2d(hidden, image_channels_, 3, 1, 1, rng);
}

std::size_t LatentCodec::latent_channels() const {
  return kind_ == CodecKind::identity ? image_channels_ : latent_channels_;
}

Tensor LatentCodec::encode(const Tensor& images) const {
  if (images.ndim() != 4 || images.dim(1) != image_channels_) {
    throw DimensionError("codec: expected images [N," + std::to_string(image_channels_) + ",H,W], got " +
                         shape_str(images.shape()));
  }
  if (kind_ == CodecKind::identity) return images;
  if (images.dim(2) % 4 != 0 || images.dim(3) % 4 != 0) {
    throw ContractError("tiny-ae: image sides must be multiples of 4, got " + shape_str(images.shape()));
  }
  return enc2_(ops::silu(enc1_(images)));
}

Tensor LatentCodec::decode(const Tensor& latents) const {
  if (latents.ndim() != 4 || latents.dim(1) != latent_channels()) {
    throw DimensionError("codec: expected latents with " + std::to_string(latent_channels()) + " channels, got " +
                         shape_str(latents.shape()));
  }
  if (kind_ == CodecKind::identity) return latents;
  const Tensor h = ops::silu(dec1_(ops::upsample_nearest(latents, 2)));
  return dec2_(ops::upsample_nearest(h, 2));
}

Tensor LatentCodec::encode(const Image& image) const { return encode(to_tensor(image)); }

ParamList LatentCodec::parameters() const {
  ParamList out;
  if (kind_ == CodecKind::identity) return out;
  enc1_.collect("enc1", out);
  enc2_.collect("enc2", out);
  dec1_.collect("dec1", out);
  dec2_.collect("dec2", out);
  return out;
}

std::vector<float> train_codec(LatentCodec& codec, const std::vector<Image>& dataset, const CodecTrainOptions& options) {
  if (codec.kind() == CodecKind::identity) return {};
  if (dataset.empty()) throw ContractError("train_codec: dataset is empty");
  Adam optimizer(codec.parameters(), options.lr);
  std::vector<float> trace;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    Rng rng(options.seed, stream_id({0xc0dec, it}));
    std::vector<Image> batch;
    for (std::size_t b = 0; b < options.batch; ++b) {
      batch.push_back(dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))]);
    }
    const Tensor x = to_tensor(batch);
    const Tensor loss = ops::mse_loss(codec.decode(codec.encode(x)), x);
    const float value = loss.item();
    if (!std::isfinite(value)) throw TrainingError("codec loss is not finite", static_cast<long>(it));
    loss.backward();
    optimizer.step();
    trace.push_back(value);
  }
  return trace;
}

void DenoiserConfig::validate() const {
  if (latent_channels == 0 || channels0 == 0 || channels1 == 0) throw ContractError("denoiser: channel counts must be positive");
  if (groups == 0 || channels0 % groups != 0 || channels1 % groups != 0) {
    throw ContractError("denoiser: channel counts must be divisible by groups");
  }
  if (time_dim < 2 || time_dim % 2 != 0) throw ContractError("denoiser: time_dim must be even");
  if (embed_dim == 0 || context_dim == 0) throw ContractError("denoiser: embedding sizes must be positive");
}

std::map<std::string, std::string> DenoiserConfig::to_map() const {
  return {{"latent_channels", std::to_string(latent_channels)}, {"channels0", std::to_string(channels0)},
          {"channels1", std::to_string(channels1)},             {"time_dim", std::to_string(time_dim)},
          {"embed_dim", std::to_string(embed_dim)},             {"context_dim", std::to_string(context_dim)},
          {"groups", std::to_string(groups)}};
}

DenoiserConfig DenoiserConfig::from_map(const std::map<std::string, std::string>& kv) {
  DenoiserConfig c;
  auto get = [&](const char* key, std::size_t& field) {
    if (auto it = kv.find(key); it != kv.end()) field = std::stoul(it->second);
  };
  get("latent_channels", c.latent_channels);
  get("channels0", c.channels0);
  get("channels1", c.channels1);
  get("time_dim", c.time_dim);
  get("embed_dim", c.embed_dim);
  get("context_dim", c.context_dim);
  get("groups", c.groups);
  c.validate();
  return c;
}

Tensor timestep_features(const std::vector<int>& t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<float> out(t.size() * dim);
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = t[n] * freq;
      out[n * dim + k] = static_cast<float>(std::sin(arg));
      out[n * dim + half + k] = static_cast<float>(std::cos(arg));
    }
  }
  return Tensor({t.size(), dim}, std::move(out));
}

ResBlock::ResBlock(std::size_t in, std::size_t out, std::size_t embed_dim, std::size_t groups, Rng& rng)
    : norm1(groups, in),
      conv1(in, out, 3, 1, 1, rng),
      temb_proj(embed_dim, out, rng),
      norm2(groups, out),
      conv2(out, out, 3, 1, 1, rng) {
  if (in != out) skip = nn::Conv2d(in, out, 1, 1, 0, rng);
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb_act) const {
  Tensor h = conv1(ops::silu(norm1(x)));
  const Tensor bias = temb_proj(temb_act);
  h = ops::add(h, ops::reshape(bias, {bias.dim(0), bias.dim(1), 1, 1}));
  h = conv2(ops::silu(norm2(h)));
  return ops::add(h, skip.weight.defined() ? skip(x) : x);
}

void ResBlock::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  conv1.collect(prefix + ".conv1", out);
  temb_proj.collect(prefix + ".temb", out);
  norm2.collect(prefix + ".norm2", out);
  conv2.collect(prefix + ".conv2", out);
  if (skip.weight.defined()) skip.collect(prefix + ".skip", out);
}

UNetEncoder::UNetEncoder(const DenoiserConfig& c, std::size_t input_channels, Rng& rng)
    : time_fc1(c.time_dim, c.embed_dim, rng),
      time_fc2(c.embed_dim, c.embed_dim, rng),
      context_proj(c.context_dim, c.embed_dim, rng),
      conv_in(input_channels, c.channels0, 3, 1, 1, rng),
      res0(c.channels0, c.channels0, c.embed_dim, c.groups, rng),
      down1(c.channels0, c.channels0, 3, 2, 1, rng),
      res1(c.channels0, c.channels1, c.embed_dim, c.groups, rng),
      down2(c.channels1, c.channels1, 3, 2, 1, rng),
      res2(c.channels1, c.channels1, c.embed_dim, c.groups, rng),
      mid(c.channels1, c.channels1, c.embed_dim, c.groups, rng) {}

Tensor UNetEncoder::embed(const std::vector<int>& t, const Tensor& context, std::size_t time_dim) const {
  const Tensor temb = time_fc2(ops::silu(time_fc1(timestep_features(t, time_dim))));
  return ops::silu(ops::add(temb, context_proj(context)));
}

UNetFeatures UNetEncoder::operator()(const Tensor& x, const Tensor& temb_act) const {
  UNetFeatures f;
  f.h0 = res0(conv_in(x), temb_act);
  f.h1 = res1(down1(f.h0), temb_act);
  f.h2 = res2(down2(f.h1), temb_act);
  f.mid = mid(f.h2, temb_act);
  return f;
}

void UNetEncoder::collect(const std::string& prefix, ParamList& out) const {
  time_fc1.collect(prefix + ".time_fc1", out);
  time_fc2.collect(prefix + ".time_fc2", out);
  context_proj.collect(prefix + ".context_proj", out);
  conv_in.collect(prefix + ".conv_in", out);
  res0.collect(prefix + ".res0", out);
  down1.collect(prefix + ".down1", out);
  res1.collect(prefix + ".res1", out);
  down2.collect(prefix + ".down2", out);
  res2.collect(prefix + ".res2", out);
  mid.collect(prefix + ".mid", out);
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, stream_id({0xde9015e}));
  const auto& c = config_;
  context_ = Tensor({1, c.context_dim}, 0.0f);
  encoder_ = UNetEncoder(c, c.latent_channels, rng);
  dec2_ = ResBlock(2 * c.channels1, c.channels1, c.embed_dim, c.groups, rng);
  up1_ = nn::Conv2d(c.channels1, c.channels1, 3, 1, 1, rng);
  dec1_ = ResBlock(2 * c.channels1, c.channels0, c.embed_dim, c.groups, rng);
  up0_ = nn::Conv2d(c.channels0, c.channels0, 3, 1, 1, rng);
  dec0_ = ResBlock(2 * c.channels0, c.channels0, c.embed_dim, c.groups, rng);
  out_norm_ = nn::GroupNorm(c.groups, c.channels0);
  conv_out_ = nn::Conv2d(c.channels0, c.latent_channels, 3, 1, 1, rng);
}

void Denoiser::set_context(Tensor context) {
  if (context.shape() != context_.shape()) {
    throw DimensionError("denoiser context must have shape " + shape_str(context_.shape()));
  }
  context_ = context.detach();
}

Tensor Denoiser::embed(const std::vector<int>& t) const { return encoder_.embed(t, context_, config_.time_dim); }

UNetFeatures Denoiser::encode(const Tensor& z_t, const Tensor& temb_act) const {
  if (z_t.ndim() != 4 || z_t.dim(1) != config_.latent_channels) {
    throw DimensionError("denoiser: expected latents with " + std::to_string(config_.latent_channels) +
                         " channels, got " + shape_str(z_t.shape()));
  }
  if (z_t.dim(2) % 4 != 0 || z_t.dim(3) % 4 != 0) {
    throw ContractError("denoiser: latent sides must be multiples of 4, got " + shape_str(z_t.shape()));
  }
  return encoder_(z_t, temb_act);
}

Tensor Denoiser::decode(const UNetFeatures& f, const Tensor& temb_act) const {
  Tensor h = dec2_(ops::concat(f.mid, f.h2, 1), temb_act);
  h = up1_(ops::upsample_nearest(h, 2));
  h = dec1_(ops::concat(h, f.h1, 1), temb_act);
  h = up0_(ops::upsample_nearest(h, 2));
  h = dec0_(ops::concat(h, f.h0, 1), temb_act);
  return conv_out_(ops::silu(out_norm_(h)));
}

Tensor Denoiser::forward(const Tensor& z_t, const std::vector<int>& t) const {
  if (z_t.ndim() != 4 || t.size() != z_t.dim(0)) throw DimensionError("denoiser: need one timestep per batch entry");
  const Tensor temb = embed(t);
  return decode(encode(z_t, temb), temb);
}

Tensor Denoiser::forward(const Tensor& z_t, int t) const {
  if (z_t.ndim() != 4) throw DimensionError("denoiser: expected [N,C,H,W] latents, got " + shape_str(z_t.shape()));
  return forward(z_t, std::vector<int>(z_t.dim(0), t));
}

ParamList Denoiser::parameters() const {
  ParamList out;
  encoder_.collect("encoder", out);
  dec2_.collect("dec2", out);
  up1_.collect("up1", out);
  dec1_.collect("dec1", out);
  up0_.collect("up0", out);
  dec0_.collect("dec0", out);
  out_norm_.collect("out_norm", out);
  conv_out_.collect("conv_out", out);
  return out;
}

Conditioner::Conditioner(const Denoiser& base, std::size_t condition_channels)
    : latent_channels_(base.config().latent_channels),
      condition_channels_(condition_channels),
      time_dim_(base.config().time_dim) {
  if (condition_channels == 0) throw ContractError("conditioner needs at least one condition channel");
  const auto& c = base.config();
  Rng rng(0, 0);
  encoder_ = UNetEncoder(c, latent_channels_ + condition_channels_, rng);

  // Start from the base weights; the input conv gets zero columns for the condition.
  ParamList base_params;
  base.encoder().collect("e", base_params);
  ParamList own;
  encoder_.collect("e", own);
  std::vector<NamedParam> source;
  for (const auto& p : base_params)
    if (p.name != "e.conv_in.weight") source.push_back(p);
  ParamList targets;
  for (const auto& p : own)
    if (p.name != "e.conv_in.weight") targets.push_back(p);
  load_params(targets, source);

  const Tensor& src = base.encoder().conv_in.weight;
  auto dst = encoder_.conv_in.weight.data_mut();
  std::fill(dst.begin(), dst.end(), 0.0f);
  const std::size_t O = src.dim(0), k2 = src.dim(2) * src.dim(3), cin = latent_channels_ + condition_channels_;
  const auto s = src.data();
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t ci = 0; ci < latent_channels_; ++ci)
      for (std::size_t k = 0; k < k2; ++k) dst[(o * cin + ci) * k2 + k] = s[(o * latent_channels_ + ci) * k2 + k];

  if (input_channels() != latent_channels_ + condition_channels_) {
    throw ContractError("conditioner input conv does not take latent + condition channels");
  }
  zero0_ = nn::Conv2d::zeros(c.channels0, c.channels0, 1, false);
  zero1_ = nn::Conv2d::zeros(c.channels1, c.channels1, 1, false);
  zero2_ = nn::Conv2d::zeros(c.channels1, c.channels1, 1, false);
  zero_mid_ = nn::Conv2d::zeros(c.channels1, c.channels1, 1, false);
}

UNetFeatures Conditioner::operator()(const Tensor& z_t, const Tensor& condition, const std::vector<int>& t,
                                     const Tensor& context) const {
  if (condition.ndim() != 4 || condition.dim(1) != condition_channels_) {
    throw DimensionError("conditioner: expected a condition with " + std::to_string(condition_channels_) +
                         " channels, got " + shape_str(condition.shape()));
  }
  if (condition.dim(0) != z_t.dim(0) || condition.dim(2) != z_t.dim(2) || condition.dim(3) != z_t.dim(3)) {
    throw DimensionError("conditioner: condition " + shape_str(condition.shape()) + " does not match latent " +
                         shape_str(z_t.shape()));
  }
  const Tensor temb = encoder_.embed(t, context, time_dim_);
  const UNetFeatures f = encoder_(ops::concat(z_t, condition, 1), temb);
  return {zero0_(f.h0), zero1_(f.h1), zero2_(f.h2), zero_mid_(f.mid)};
}

ParamList Conditioner::parameters() const {
  ParamList out;
  encoder_.collect("control", out);
  zero0_.collect("zero0", out);
  zero1_.collect("zero1", out);
  zero2_.collect("zero2", out);
  zero_mid_.collect("zero_mid", out);
  return out;
}

Tensor conditioned_eps(const Denoiser& base, const Conditioner& conditioner, const Tensor& z_t,
                       const std::vector<int>& t, const Tensor& condition) {
  if (z_t.ndim() != 4 || t.size() != z_t.dim(0)) throw DimensionError("denoiser: need one timestep per batch entry");
  const Tensor temb = base.embed(t);
  UNetFeatures f = base.encode(z_t, temb);
  const UNetFeatures r = conditioner(z_t, condition, t, base.context());
  f.h0 = ops::add(f.h0, r.h0);
  f.h1 = ops::add(f.h1, r.h1);
  f.h2 = ops::add(f.h2, r.h2);
  f.mid = ops::add(f.mid, r.mid);
  return base.decode(f, temb);
}

Tensor add_prior_skip(const Tensor& net_out, const Tensor& z_t, const std::vector<int>& t,
                      const NoiseSchedule& schedule) {
  if (net_out.shape() != z_t.shape() || t.size() != z_t.dim(0)) {
    throw DimensionError("prior skip: output " + shape_str(net_out.shape()) + " does not match z_t " +
                         shape_str(z_t.shape()));
  }
  const std::size_t per = z_t.numel() / t.size();
  const auto z = z_t.data();
  std::vector<float> skip(z.size());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double gain = std::sqrt(1.0 - schedule.alpha_bar(t[b]));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) skip[i] = static_cast<float>(gain * z[i]);
  }
  return ops::add(net_out, Tensor(z_t.shape(), std::move(skip)));
}

EpsModel make_eps_model(const Denoiser& base, const Conditioner* conditioner, Tensor condition,
                        const NoiseSchedule& schedule) {
  if (!conditioner) {
    return [&base, schedule](const Tensor& z_t, int t) {
      const std::vector<int> ts(z_t.dim(0), t);
      return add_prior_skip(base.forward(z_t, ts), z_t, ts, schedule);
    };
  }
  return [&base, conditioner, condition, schedule](const Tensor& z_t, int t) {
    const std::vector<int> ts(z_t.dim(0), t);
    return add_prior_skip(conditioned_eps(base, *conditioner, z_t, ts, condition), z_t, ts, schedule);
  };
}

namespace {

constexpr std::uint64_t kDiffusionStream = 0xd1ff;

ParamList trainable(DiffusionMode mode, const Denoiser& denoiser, const Conditioner* conditioner) {
  if (mode == DiffusionMode::pretrain) return denoiser.parameters();
  if (!conditioner) throw ContractError("finetuning needs a conditioner");
  return conditioner->parameters();
}

}  // namespace

DiffusionTrainer::DiffusionTrainer(DiffusionMode mode, Denoiser& denoiser, Conditioner* conditioner,
                                   const LatentCodec& codec, const RestorationNet* restoration,
                                   const std::vector<Image>& dataset, const NoiseSchedule& schedule,
                                   DiffusionTrainOptions options)
    : mode_(mode),
      denoiser_(denoiser),
      conditioner_(conditioner),
      codec_(codec),
      restoration_(restoration),
      dataset_(dataset),
      schedule_(schedule),
      options_(std::move(options)),
      optimizer_(trainable(mode, denoiser, conditioner), options_.lr) {
  if (dataset_.empty()) throw ContractError("train_denoiser: dataset is empty");
  if (options_.batch == 0) throw ContractError("train_denoiser: batch must be positive");
  if (codec_.latent_channels() != denoiser_.config().latent_channels) {
    throw ContractError("train_denoiser: codec latent channels do not match the denoiser");
  }
  if (mode_ == DiffusionMode::finetune) {
    if (!restoration_) throw ContractError("finetuning needs the trained restoration net");
    if (conditioner_->condition_channels() != codec_.latent_channels()) {
      throw ContractError("conditioner condition channels do not match the codec latent channels");
    }
    if (!options_.degrader) options_.degrader = standard_degrader({});
    set_requires_grad(denoiser_.parameters(), false);
  }
}

DiffusionTrainer::~DiffusionTrainer() {
  if (mode_ == DiffusionMode::finetune) set_requires_grad(denoiser_.parameters(), true);
}

DiffusionBatch DiffusionTrainer::batch(std::size_t iteration) const {
  NoGradGuard no_grad;
  const std::size_t B = options_.batch;
  Rng pick(options_.seed, stream_id({kDiffusionStream, iteration}));
  std::vector<std::size_t> index(B);
  for (auto& i : index) i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(dataset_.size()) - 1));

  std::vector<Image> hq(B);
  for (std::size_t b = 0; b < B; ++b) hq[b] = dataset_[index[b]];
  DiffusionBatch out;
  out.z = codec_.encode(to_tensor(hq));

  if (mode_ == DiffusionMode::finetune) {
    std::vector<Image> lq(B);
    parallel_for(B, options_.jobs, [&](std::size_t b) {
      Rng rng(options_.seed, stream_id({kDiffusionStream, iteration, b + 1, 1}));
      lq[b] = options_.degrader(hq[b], rng);
    });
    out.condition = codec_.encode(to_tensor(restoration_->restore(lq)));
  }

  const std::size_t per = out.z.numel() / B;
  std::vector<float> eps(out.z.numel());
  out.t.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(options_.seed, stream_id({kDiffusionStream, iteration, b + 1, 2}));
    out.t[b] = static_cast<int>(rng.uniform_int(1, schedule_.T));
    for (std::size_t i = 0; i < per; ++i) eps[b * per + i] = static_cast<float>(rng.normal());
  }
  out.eps = Tensor(out.z.shape(), std::move(eps));

  std::vector<float> zt(out.z.numel());
  const auto z = out.z.data();
  const auto e = out.eps.data();
  for (std::size_t b = 0; b < B; ++b) {
    const double ab = schedule_.alpha_bar(out.t[b]);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) zt[i] = static_cast<float>(a * z[i] + s * e[i]);
  }
  out.z_t = Tensor(out.z.shape(), std::move(zt));
  return out;
}

Tensor DiffusionTrainer::predict(const DiffusionBatch& batch) const {
  const Tensor out = mode_ == DiffusionMode::pretrain
                         ? denoiser_.forward(batch.z_t, batch.t)
                         : conditioned_eps(denoiser_, *conditioner_, batch.z_t, batch.t, batch.condition);
  return add_prior_skip(out, batch.z_t, batch.t, schedule_);
}

float DiffusionTrainer::evaluate(const DiffusionBatch& batch) const {
  NoGradGuard no_grad;
  return ops::mse_loss(predict(batch), batch.eps).item();
}

float DiffusionTrainer::step() {
  const DiffusionBatch b = batch(iteration_);
  const Tensor loss = ops::mse_loss(predict(b), b.eps);
  const float value = loss.item();
  if (!std::isfinite(value)) throw TrainingError("diffusion loss is not finite", static_cast<long>(iteration_));
  loss.backward();
  optimizer_.step();
  ++iteration_;
  return value;
}

void DiffusionTrainer::resume(std::size_t iteration, const std::vector<NamedParam>& optimizer_state) {
  optimizer_.import_state(optimizer_state, iteration);
  iteration_ = iteration;
}

std::vector<float> train_denoiser(DiffusionMode mode, Denoiser& denoiser, Conditioner* conditioner,
                                  const LatentCodec& codec, const RestorationNet* restoration,
                                  const std::vector<Image>& dataset, const NoiseSchedule& schedule,
                                  DiffusionTrainOptions options) {
  DiffusionTrainer trainer(mode, denoiser, conditioner, codec, restoration, dataset, schedule, std::move(options));
  std::vector<float> trace;
  while (!trainer.done()) trace.push_back(trainer.step());
  return trace;
}

std::string format_sampler_manifest(const NoiseSchedule& schedule, const std::vector<int>& steps, std::uint64_t seed,
                                    double scale) {
  char buf[64];
  std::ostringstream out;
  out << "schedule = linear\n";
  out << "T = " << schedule.T << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", schedule.beta_start);
  out << "beta_start = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", schedule.beta_end);
  out << "beta_end = " << buf << "\n";
  out << "steps = " << steps.size() << "\n";
  out << "timesteps =";
  for (int t : steps) out << " " << t;
  out << "\n";
  out << "seed = " << seed << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", scale);
  out << "scale = " << buf << "\n";
  return out.str();
}

}  // namespace blindrest
