#include "blindrest/degradation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>

#include "blindrest/errors.hpp"

namespace blindrest {

std::string to_string(BlurKind k) { return k == BlurKind::isotropic ? "isotropic" : "anisotropic"; }

std::string to_string(ResizeAlgorithm a) {
  switch (a) {
    case ResizeAlgorithm::area: return "area";
    case ResizeAlgorithm::bilinear: return "bilinear";
    case ResizeAlgorithm::bicubic: return "bicubic";
  }
  return "?";
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::poisson: return "poisson";
    case NoiseKind::jpeg: return "jpeg";
  }
  return "?";
}

Tensor gaussian_kernel(const BlurSpec& spec) {
  const int k = spec.kernel_size;
  if (k < 1 || k % 2 == 0) throw ContractError("gaussian_kernel: kernel size must be odd, got " + std::to_string(k));
  if (!(spec.sigma_x > 0.0) || !(spec.sigma_y > 0.0)) throw ContractError("gaussian_kernel: sigmas must be positive");
  const double c = std::cos(spec.theta), s = std::sin(spec.theta);
  const double vx = spec.sigma_x * spec.sigma_x, vy = spec.sigma_y * spec.sigma_y;
  // Inverse of R diag(vx, vy) R^T.
  const double ixx = c * c / vx + s * s / vy;
  const double iyy = s * s / vx + c * c / vy;
  const double ixy = c * s * (1.0 / vx - 1.0 / vy);
  const int r = k / 2;
  std::vector<double> w(static_cast<std::size_t>(k * k));
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double q = ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy;
      const double v = std::exp(-0.5 * q);
      w[static_cast<std::size_t>((dy + r) * k + dx + r)] = v;
      total += v;
    }
  }
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] / total);
  const auto ks = static_cast<std::size_t>(k);
  return Tensor({ks, ks}, std::move(out));
}

namespace {

// Reflect-101 (mirror without repeating the edge), folded for any offset.
std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<long>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

Image apply_blur(const Image& image, const BlurSpec& spec) {
  const Tensor kernel = gaussian_kernel(spec);
  const auto kd = kernel.data();
  const int k = spec.kernel_size, r = k / 2;
  Image out(image.height, image.width, image.channels);
  const std::size_t C = image.channels;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          const std::size_t sy = reflect_index(static_cast<long>(y) + dy, image.height);
          for (int dx = -r; dx <= r; ++dx) {
            const std::size_t sx = reflect_index(static_cast<long>(x) + dx, image.width);
            acc += static_cast<double>(kd[static_cast<std::size_t>((dy + r) * k + dx + r)]) * image.at(sy, sx, ch);
          }
        }
        out.at(y, x, ch) = static_cast<float>(acc);
      }
    }
  }
  out.clamp();
  return out;
}

namespace {

struct Tap {
  std::size_t index;
  double weight;
};

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

std::vector<std::vector<Tap>> axis_taps(std::size_t in, std::size_t out, ResizeAlgorithm algo) {
  std::vector<std::vector<Tap>> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const auto clampi = [in](long i) { return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(in) - 1)); };
  for (std::size_t o = 0; o < out; ++o) {
    auto& t = taps[o];
    if (algo == ResizeAlgorithm::area) {
      const double lo = static_cast<double>(o) * ratio, hi = lo + ratio;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (overlap > 0.0) t.push_back({i, overlap / ratio});
      }
      continue;
    }
    const double x = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const double x0 = std::floor(x);
    const double f = x - x0;
    const long i0 = static_cast<long>(x0);
    if (algo == ResizeAlgorithm::bilinear) {
      t.push_back({clampi(i0), 1.0 - f});
      t.push_back({clampi(i0 + 1), f});
    } else {
      for (long d = -1; d <= 2; ++d) t.push_back({clampi(i0 + d), cubic_weight(f - static_cast<double>(d))});
    }
  }
  return taps;
}

}  // namespace

Image resize_to(const Image& image, std::size_t height, std::size_t width, ResizeAlgorithm algorithm) {
  if (height == 0 || width == 0) throw ContractError("resize: target dimension is zero");
  const auto tx = axis_taps(image.width, width, algorithm);
  const auto ty = axis_taps(image.height, height, algorithm);
  const std::size_t C = image.channels;
  std::vector<double> tmp(image.height * width * C, 0.0);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (const auto& tap : tx[x])
        for (std::size_t c = 0; c < C; ++c) tmp[(y * width + x) * C + c] += tap.weight * image.at(y, tap.index, c);
  Image out(height, width, C);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (const auto& tap : ty[y]) acc += tap.weight * tmp[(tap.index * width + x) * C + c];
        out.at(y, x, c) = static_cast<float>(acc);
      }
  out.clamp();
  return out;
}

Image apply_resize(const Image& image, const ResizeSpec& spec) {
  if (!(spec.scale > 0.0)) throw ContractError("resize: scale must be positive");
  const auto h = static_cast<std::size_t>(std::llround(spec.scale * static_cast<double>(image.height)));
  const auto w = static_cast<std::size_t>(std::llround(spec.scale * static_cast<double>(image.width)));
  if (h == 0 || w == 0) {
    throw ContractError("resize: scale " + std::to_string(spec.scale) + " maps " + std::to_string(image.height) + "x" +
                        std::to_string(image.width) + " to a zero dimension");
  }
  return resize_to(image, h, w, spec.algorithm);
}

Image add_gaussian_noise(const Image& image, double sigma_8bit, Rng& rng) {
  if (sigma_8bit < 0.0) throw ContractError("gaussian noise sigma must be non-negative");
  if (sigma_8bit == 0.0) return image;
  const double sigma = sigma_8bit / 255.0;
  Image out = image;
  for (auto& p : out.pixels) p = static_cast<float>(p + sigma * rng.normal());
  out.clamp();
  return out;
}

Image add_poisson_noise(const Image& image, double scale, Rng& rng) {
  if (!(scale > 0.0)) throw ContractError("poisson noise scale must be positive");
  const double levels = 255.0 * scale;
  Image out = image;
  for (auto& p : out.pixels) {
    const double lambda = std::max(0.0, static_cast<double>(p)) * levels;
    p = static_cast<float>(static_cast<double>(rng.poisson(lambda)) / levels);
  }
  out.clamp();
  return out;
}

namespace {

constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24,  40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55,  64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

std::array<double, 64> scaled_table(const std::array<int, 64>& base, int quality) {
  const long scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<double, 64> out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const long q = (base[i] * scale + 50) / 100;
    out[i] = static_cast<double>(std::clamp<long>(q, 1, 255));
  }
  return out;
}

struct DctBasis {
  std::array<double, 64> c{};  // c[u*8 + x] = C(u)/2 * cos((2x+1) u pi / 16)
  DctBasis() {
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(0.5) : 1.0;
      for (int x = 0; x < 8; ++x) c[u * 8 + x] = 0.5 * cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
};

const DctBasis& dct_basis() {
  static const DctBasis basis;
  return basis;
}

// In-place quantize/dequantize of one 8x8 block of level-shifted samples.
void jpeg_block(std::array<double, 64>& block, const std::array<double, 64>& table) {
  const auto& c = dct_basis().c;
  std::array<double, 64> tmp{}, coef{};
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int y = 0; y < 8; ++y) s += c[v * 8 + y] * block[y * 8 + x];
      tmp[v * 8 + x] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0;
      for (int x = 0; x < 8; ++x) s += c[u * 8 + x] * tmp[v * 8 + x];
      const double q = table[v * 8 + u];
      coef[v * 8 + u] = std::nearbyint(s / q) * q;
    }
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0;
      for (int v = 0; v < 8; ++v) s += c[v * 8 + y] * coef[v * 8 + u];
      tmp[y * 8 + u] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int u = 0; u < 8; ++u) s += c[u * 8 + x] * tmp[y * 8 + u];
      block[y * 8 + x] = s;
    }
}

}  // namespace

Image jpeg_artifacts(const Image& image, int quality) {
  if (quality < 1 || quality > 100) throw ContractError("jpeg quality must be in [1,100], got " + std::to_string(quality));
  const auto luma = scaled_table(kLumaTable, quality);
  const auto chroma = scaled_table(kChromaTable, quality);
  const std::size_t H = image.height, W = image.width, C = image.channels;
  const std::size_t ph = (H + 7) / 8 * 8, pw = (W + 7) / 8 * 8;

  // Planes in 0..255 (YCbCr for color input), edge-replicated to whole blocks.
  std::vector<std::vector<double>> planes(C, std::vector<double>(ph * pw));
  for (std::size_t y = 0; y < ph; ++y) {
    for (std::size_t x = 0; x < pw; ++x) {
      const std::size_t sy = std::min(y, H - 1), sx = std::min(x, W - 1);
      std::array<double, 3> v{};
      for (std::size_t c = 0; c < C; ++c) v[c] = std::nearbyint(std::clamp(image.at(sy, sx, c), 0.0f, 1.0f) * 255.0f);
      if (C == 3) {
        const double R = v[0], G = v[1], B = v[2];
        planes[0][y * pw + x] = 0.299 * R + 0.587 * G + 0.114 * B;
        planes[1][y * pw + x] = -0.168736 * R - 0.331264 * G + 0.5 * B + 128.0;
        planes[2][y * pw + x] = 0.5 * R - 0.418688 * G - 0.081312 * B + 128.0;
      } else {
        planes[0][y * pw + x] = v[0];
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    const auto& table = c == 0 ? luma : chroma;
    for (std::size_t by = 0; by < ph; by += 8)
      for (std::size_t bx = 0; bx < pw; bx += 8) {
        std::array<double, 64> block{};
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) block[y * 8 + x] = planes[c][(by + y) * pw + bx + x] - 128.0;
        jpeg_block(block, table);
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) planes[c][(by + y) * pw + bx + x] = block[y * 8 + x] + 128.0;
      }
  }
  Image out(H, W, C);
  auto to_unit = [](double v) { return static_cast<float>(std::clamp(std::nearbyint(v), 0.0, 255.0) / 255.0); };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t i = y * pw + x;
      if (C == 3) {
        const double Y = planes[0][i], cb = planes[1][i] - 128.0, cr = planes[2][i] - 128.0;
        out.at(y, x, 0) = to_unit(Y + 1.402 * cr);
        out.at(y, x, 1) = to_unit(Y - 0.344136 * cb - 0.714136 * cr);
        out.at(y, x, 2) = to_unit(Y + 1.772 * cb);
      } else {
        out.at(y, x, 0) = to_unit(planes[0][i]);
      }
    }
  return out;
}

namespace {

BlurSpec sample_blur(Rng& rng, double sigma_min, double sigma_max) {
  BlurSpec b;
  b.kernel_size = kKernelSizeMin + 2 * static_cast<int>(rng.uniform_int(0, (kKernelSizeMax - kKernelSizeMin) / 2));
  if (rng.bernoulli(0.5)) {
    b.kind = BlurKind::isotropic;
    b.sigma_x = b.sigma_y = rng.uniform(sigma_min, sigma_max);
    b.theta = 0.0;
  } else {
    b.kind = BlurKind::anisotropic;
    b.sigma_x = rng.uniform(sigma_min, sigma_max);
    b.sigma_y = rng.uniform(sigma_min, sigma_max);
    b.theta = rng.uniform(0.0, std::numbers::pi);
  }
  return b;
}

NoiseSpec sample_noise(Rng& rng, const StageRanges& r) {
  NoiseSpec n;
  if (rng.bernoulli(0.5)) {
    n.kind = NoiseKind::gaussian;
    n.gaussian_sigma = rng.uniform(r.gaussian_min, r.gaussian_max);
  } else {
    n.kind = NoiseKind::poisson;
    n.poisson_scale = rng.uniform(r.poisson_min, r.poisson_max);
  }
  return n;
}

ResizeAlgorithm sample_algorithm(Rng& rng) { return static_cast<ResizeAlgorithm>(rng.uniform_int(0, 2)); }

}  // namespace

DegradationPlan sample_plan(Rng& rng, const SamplerOptions& options, std::size_t height, std::size_t width) {
  DegradationPlan plan;
  plan.original_height = height;
  plan.original_width = width;
  plan.wide_range = options.wide_range;
  const double s1_lo = options.wide_range ? kWideSigmaMin : kStage1Ranges.sigma_min;
  const double s1_hi = options.wide_range ? kWideSigmaMax : kStage1Ranges.sigma_max;
  const double s2_lo = options.wide_range ? kWideSigmaMin : kStage2Ranges.sigma_min;
  const double s2_hi = options.wide_range ? kWideSigmaMax : kStage2Ranges.sigma_max;

  plan.stage1.blur = sample_blur(rng, s1_lo, s1_hi);
  plan.stage1.resize.algorithm = sample_algorithm(rng);
  plan.stage2.blur = sample_blur(rng, s2_lo, s2_hi);
  plan.stage2.resize.algorithm = sample_algorithm(rng);
  if (options.wide_range) {
    // Net factor d ~ U[1,12], split geometrically between the two stages.
    const double d = rng.uniform(kWideDownsampleMin, kWideDownsampleMax);
    const double u = rng.uniform();
    plan.stage1.resize.scale = std::pow(d, -u);
    plan.stage2.resize.scale = std::pow(d, -(1.0 - u));
  } else {
    plan.stage1.resize.scale = rng.uniform(kStage1Ranges.scale_min, kStage1Ranges.scale_max);
    plan.stage2.resize.scale = rng.uniform(kStage2Ranges.scale_min, kStage2Ranges.scale_max);
  }
  plan.stage1.noise = sample_noise(rng, kStage1Ranges);
  plan.stage2.noise = sample_noise(rng, kStage2Ranges);
  const bool jpeg = rng.bernoulli(options.jpeg_probability);
  const int quality = static_cast<int>(rng.uniform_int(kJpegQualityMin, kJpegQualityMax));
  if (jpeg) plan.final_jpeg = NoiseSpec{NoiseKind::jpeg, 0.0, 1.0, quality};
  plan.noise_seed = rng();
  return plan;
}

double net_downsampling(const DegradationPlan& plan) {
  return 1.0 / (plan.stage1.resize.scale * plan.stage2.resize.scale);
}

namespace {

Image apply_noise(const Image& image, const NoiseSpec& noise, Rng& rng) {
  switch (noise.kind) {
    case NoiseKind::gaussian: return add_gaussian_noise(image, noise.gaussian_sigma, rng);
    case NoiseKind::poisson: return add_poisson_noise(image, noise.poisson_scale, rng);
    case NoiseKind::jpeg: return jpeg_artifacts(image, noise.jpeg_quality);
  }
  return image;
}

Image run_stage(const Image& image, const DegradationStage& stage, Rng& rng) {
  Image out = apply_blur(image, stage.blur);
  const auto h = std::max<long long>(1, std::llround(stage.resize.scale * static_cast<double>(out.height)));
  const auto w = std::max<long long>(1, std::llround(stage.resize.scale * static_cast<double>(out.width)));
  out = resize_to(out, static_cast<std::size_t>(h), static_cast<std::size_t>(w), stage.resize.algorithm);
  return apply_noise(out, stage.noise, rng);
}

}  // namespace

Image degrade(const Image& image, const DegradationPlan& plan) {
  if (image.height != plan.original_height || image.width != plan.original_width) {
    throw DimensionError("degrade: image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         ", plan expects " + std::to_string(plan.original_height) + "x" +
                         std::to_string(plan.original_width));
  }
  Rng rng1(plan.noise_seed, 1);
  Rng rng2(plan.noise_seed, 2);
  Image out = run_stage(image, plan.stage1, rng1);
  out = run_stage(out, plan.stage2, rng2);
  if (plan.final_jpeg) out = jpeg_artifacts(out, plan.final_jpeg->jpeg_quality);
  return resize_to(out, image.height, image.width, ResizeAlgorithm::bicubic);
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit_stage(std::ostringstream& os, const std::string& p, const DegradationStage& s) {
  os << p << ".blur.kind = " << to_string(s.blur.kind) << '\n'
     << p << ".blur.kernel_size = " << s.blur.kernel_size << '\n'
     << p << ".blur.sigma_x = " << fmt_double(s.blur.sigma_x) << '\n'
     << p << ".blur.sigma_y = " << fmt_double(s.blur.sigma_y) << '\n'
     << p << ".blur.theta = " << fmt_double(s.blur.theta) << '\n'
     << p << ".resize.algorithm = " << to_string(s.resize.algorithm) << '\n'
     << p << ".resize.scale = " << fmt_double(s.resize.scale) << '\n'
     << p << ".noise.kind = " << to_string(s.noise.kind) << '\n'
     << p << ".noise.gaussian_sigma = " << fmt_double(s.noise.gaussian_sigma) << '\n'
     << p << ".noise.poisson_scale = " << fmt_double(s.noise.poisson_scale) << '\n'
     << p << ".noise.jpeg_quality = " << s.noise.jpeg_quality << '\n';
}

template <typename E>
E parse_enum(const std::string& v, std::initializer_list<E> options, const std::string& key) {
  for (E e : options)
    if (to_string(e) == v) return e;
  throw FormatError("plan: bad value '" + v + "' for " + key);
}

}  // namespace

std::string format_plan(const DegradationPlan& plan) {
  std::ostringstream os;
  os << "original_height = " << plan.original_height << '\n'
     << "original_width = " << plan.original_width << '\n'
     << "wide_range = " << (plan.wide_range ? "true" : "false") << '\n';
  emit_stage(os, "stage1", plan.stage1);
  emit_stage(os, "stage2", plan.stage2);
  os << "final_jpeg.quality = " << (plan.final_jpeg ? std::to_string(plan.final_jpeg->jpeg_quality) : "none") << '\n'
     << "noise_seed = " << plan.noise_seed << '\n';
  return os.str();
}

DegradationPlan parse_plan(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("plan: missing key " + key);
    return it->second;
  };
  auto num = [&](const std::string& key) {
    const auto& v = get(key);
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') throw FormatError("plan: bad number '" + v + "' for " + key);
    return d;
  };
  auto integer = [&](const std::string& key) {
    const auto& v = get(key);
    try {
      std::size_t pos = 0;
      const auto r = std::stoull(v, &pos);
      if (pos != v.size()) throw FormatError("");
      return r;
    } catch (...) {
      throw FormatError("plan: bad integer '" + v + "' for " + key);
    }
  };
  auto stage = [&](const std::string& p) {
    DegradationStage s;
    s.blur.kind = parse_enum(get(p + ".blur.kind"), {BlurKind::isotropic, BlurKind::anisotropic}, p + ".blur.kind");
    s.blur.kernel_size = static_cast<int>(integer(p + ".blur.kernel_size"));
    s.blur.sigma_x = num(p + ".blur.sigma_x");
    s.blur.sigma_y = num(p + ".blur.sigma_y");
    s.blur.theta = num(p + ".blur.theta");
    s.resize.algorithm = parse_enum(get(p + ".resize.algorithm"),
                                    {ResizeAlgorithm::area, ResizeAlgorithm::bilinear, ResizeAlgorithm::bicubic},
                                    p + ".resize.algorithm");
    s.resize.scale = num(p + ".resize.scale");
    s.noise.kind = parse_enum(get(p + ".noise.kind"), {NoiseKind::gaussian, NoiseKind::poisson, NoiseKind::jpeg},
                              p + ".noise.kind");
    s.noise.gaussian_sigma = num(p + ".noise.gaussian_sigma");
    s.noise.poisson_scale = num(p + ".noise.poisson_scale");
    s.noise.jpeg_quality = static_cast<int>(integer(p + ".noise.jpeg_quality"));
    return s;
  };
  DegradationPlan plan;
  plan.original_height = integer("original_height");
  plan.original_width = integer("original_width");
  const auto& wide = get("wide_range");
  if (wide != "true" && wide != "false") throw FormatError("plan: bad value '" + wide + "' for wide_range");
  plan.wide_range = wide == "true";
  plan.stage1 = stage("stage1");
  plan.stage2 = stage("stage2");
  if (get("final_jpeg.quality") != "none") {
    plan.final_jpeg = NoiseSpec{NoiseKind::jpeg, 0.0, 1.0, static_cast<int>(integer("final_jpeg.quality"))};
  }
  plan.noise_seed = integer("noise_seed");
  return plan;
}

}  // namespace blindrest
