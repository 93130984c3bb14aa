#include "blindrest/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "blindrest/errors.hpp"
#include "blindrest/parallel.hpp"
#include "blindrest/rng.hpp"

namespace blindrest {

std::string to_string(Generator g) {
  switch (g) {
    case Generator::gradients: return "gradients";
    case Generator::checker: return "checker";
    case Generator::gaussian_blobs: return "gaussian-blobs";
    case Generator::fractal_noise: return "fractal-noise";
    case Generator::mixed: return "mixed";
  }
  return "?";
}

Generator parse_generator(const std::string& name) {
  for (auto g : {Generator::gradients, Generator::checker, Generator::gaussian_blobs, Generator::fractal_noise,
                 Generator::mixed}) {
    if (to_string(g) == name) return g;
  }
  throw ContractError("unknown generator '" + name + "'");
}

void validate(const DatasetSpec& spec) {
  if (spec.count < 1) throw ContractError("dataset count must be at least 1");
  if (spec.size < 8 || spec.size % 8 != 0) {
    throw ContractError("dataset size must be a positive multiple of 8, got " + std::to_string(spec.size));
  }
}

namespace {

using Color = std::array<float, 3>;

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

Image gradients(std::size_t n, Rng& rng) {
  const Color a = random_color(rng);
  const Color b = random_color(rng);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double bend = rng.uniform(-0.5, 0.5);  // mild curvature
  Image img(n, n, 3);
  const double half = 0.5 * static_cast<double>(n - 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = (static_cast<double>(x) - half) / n, v = (static_cast<double>(y) - half) / n;
      double t = 0.5 + (u * dx + v * dy) + bend * (u * u + v * v);
      t = std::clamp(t, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(a[c] + (b[c] - a[c]) * t);
    }
  return img;
}

Image checker(std::size_t n, Rng& rng) {
  static constexpr std::size_t kCells[] = {2, 4, 8};
  const std::size_t cell = kCells[rng.uniform_int(0, 2)];
  Color a = random_color(rng), b = random_color(rng);
  // Keep the two colors distinct after 8-bit quantization.
  if (std::fabs(a[0] - b[0]) < 0.1f) b[0] = a[0] < 0.5f ? a[0] + 0.4f : a[0] - 0.4f;
  Image img(n, n, 3);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Color& col = ((x / cell + y / cell) % 2 == 0) ? a : b;
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
    }
  return img;
}

Image gaussian_blobs(std::size_t n, Rng& rng) {
  Image img(n, n, 3);
  const Color bg = random_color(rng);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 0.6f * bg[i % 3];
  const auto blobs = rng.uniform_int(3, 6);
  const double fn = static_cast<double>(n);
  for (std::int64_t k = 0; k < blobs; ++k) {
    const double cx = rng.uniform(0.0, fn), cy = rng.uniform(0.0, fn);
    const double s = rng.uniform(fn / 10.0, fn / 3.0);
    const Color col = random_color(rng);
    const double amp = rng.uniform(0.3, 0.8);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double w = amp * std::exp(-r2 / (2.0 * s * s));
        for (std::size_t c = 0; c < 3; ++c) {
          float& p = img.at(y, x, c);
          p = static_cast<float>(p * (1.0 - w) + col[c] * w);
        }
      }
  }
  return img;
}

// Multi-octave value noise, each octave doubling frequency at 0.7x amplitude.
std::vector<double> value_noise(std::size_t n, Rng& rng) {
  std::vector<double> acc(n * n, 0.0);
  double amp = 1.0;
  for (std::size_t cells = 2; cells <= n; cells *= 2, amp *= 0.7) {
    std::vector<double> lattice((cells + 1) * (cells + 1));
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    const double step = static_cast<double>(cells) / static_cast<double>(n);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double gx = (x + 0.5) * step, gy = (y + 0.5) * step;
        const auto ix = static_cast<std::size_t>(gx), iy = static_cast<std::size_t>(gy);
        double fx = gx - ix, fy = gy - iy;
        fx = fx * fx * (3 - 2 * fx);
        fy = fy * fy * (3 - 2 * fy);
        const auto L = [&](std::size_t a, std::size_t b) { return lattice[b * (cells + 1) + a]; };
        const double top = L(ix, iy) * (1 - fx) + L(ix + 1, iy) * fx;
        const double bot = L(ix, iy + 1) * (1 - fx) + L(ix + 1, iy + 1) * fx;
        acc[y * n + x] += amp * (top * (1 - fy) + bot * fy);
      }
  }
  return acc;
}

Image fractal_noise(std::size_t n, Rng& rng) {
  const auto shared = value_noise(n, rng);
  Image img(n, n, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto own = value_noise(n, rng);
    std::vector<double> ch(n * n);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = 0.7 * shared[i] + 0.3 * own[i];
    const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
    const double span = std::max(*hi - *lo, 1e-9);
    const double floor_ = rng.uniform(0.0, 0.2), ceil_ = rng.uniform(0.8, 1.0);
    for (std::size_t i = 0; i < ch.size(); ++i) {
      img.pixels[i * 3 + c] = static_cast<float>(floor_ + (ceil_ - floor_) * (ch[i] - *lo) / span);
    }
  }
  return img;
}

}  // namespace

Image synth_image(const DatasetSpec& spec, std::size_t index) {
  Rng rng(spec.seed, stream_id({0x5917, index}));
  Generator g = spec.generator;
  if (g == Generator::mixed) g = static_cast<Generator>(rng.uniform_int(0, 3));
  Image img;
  switch (g) {
    case Generator::gradients: img = gradients(spec.size, rng); break;
    case Generator::checker: img = checker(spec.size, rng); break;
    case Generator::gaussian_blobs: img = gaussian_blobs(spec.size, rng); break;
    case Generator::fractal_noise: img = fractal_noise(spec.size, rng); break;
    case Generator::mixed: break;
  }
  img.clamp();
  return quantize8(img);
}

std::vector<Image> synth_dataset(const DatasetSpec& spec, std::size_t jobs) {
  validate(spec);
  std::vector<Image> out(spec.count);
  parallel_for(spec.count, jobs, [&](std::size_t i) { out[i] = synth_image(spec, i); });
  return out;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<std::string>& entries) {
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  for (const auto& e : entries) out << e << '\n';
  if (!out) throw IoError("failed writing manifest " + manifest.string());
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot read manifest " + manifest.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(manifest.parent_path() / line);
  }
  return out;
}

}  // namespace blindrest
