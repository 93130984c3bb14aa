#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "blindrest/image.hpp"
#include "blindrest/rng.hpp"
#include "blindrest/tensor.hpp"

namespace blindrest {

enum class BlurKind { isotropic, anisotropic };
enum class ResizeAlgorithm { area, bilinear, bicubic };
enum class NoiseKind { gaussian, poisson, jpeg };

struct BlurSpec {
  BlurKind kind = BlurKind::isotropic;
  int kernel_size = 7;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double theta = 0.0;  // radians, rotation of the x axis
  bool operator==(const BlurSpec&) const = default;
};

struct ResizeSpec {
  ResizeAlgorithm algorithm = ResizeAlgorithm::bilinear;
  double scale = 1.0;
  bool operator==(const ResizeSpec&) const = default;
};

// Only the field of the active kind is meaningful.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double gaussian_sigma = 0.0;  // 8-bit units
  double poisson_scale = 1.0;
  int jpeg_quality = 95;
  bool operator==(const NoiseSpec&) const = default;
};

struct DegradationStage {
  BlurSpec blur;
  ResizeSpec resize;
  NoiseSpec noise;
  bool operator==(const DegradationStage&) const = default;
};

struct DegradationPlan {
  DegradationStage stage1;
  DegradationStage stage2;
  std::optional<NoiseSpec> final_jpeg;
  std::size_t original_height = 0;
  std::size_t original_width = 0;
  bool wide_range = false;
  std::uint64_t noise_seed = 0;  // keys the noise draws of degrade()
  bool operator==(const DegradationPlan&) const = default;
};

// Parameter intervals for one stage of the sampler.
struct StageRanges {
  double sigma_min, sigma_max;
  double scale_min, scale_max;
  double gaussian_min, gaussian_max;
  double poisson_min, poisson_max;
};

inline constexpr StageRanges kStage1Ranges{0.2, 3.0, 0.15, 1.5, 1.0, 30.0, 0.05, 3.0};
inline constexpr StageRanges kStage2Ranges{0.2, 1.5, 0.3, 1.2, 1.0, 25.0, 0.05, 2.5};
inline constexpr int kKernelSizeMin = 7;
inline constexpr int kKernelSizeMax = 21;
inline constexpr int kJpegQualityMin = 30;
inline constexpr int kJpegQualityMax = 95;
inline constexpr double kWideSigmaMin = 0.1;
inline constexpr double kWideSigmaMax = 12.0;
inline constexpr double kWideDownsampleMin = 1.0;
inline constexpr double kWideDownsampleMax = 12.0;

struct SamplerOptions {
  bool wide_range = false;
  double jpeg_probability = 0.75;
};

// Normalized (rotated) bivariate Gaussian sampled at integer offsets, [k,k].
Tensor gaussian_kernel(const BlurSpec& spec);

// Correlation with reflect-101 borders; output size unchanged.
Image apply_blur(const Image& image, const BlurSpec& spec);

// Output dims are round(scale * dims); a zero dimension is a contract error.
Image apply_resize(const Image& image, const ResizeSpec& spec);
Image resize_to(const Image& image, std::size_t height, std::size_t width, ResizeAlgorithm algorithm);

Image add_gaussian_noise(const Image& image, double sigma_8bit, Rng& rng);
Image add_poisson_noise(const Image& image, double scale, Rng& rng);

// JPEG loss without entropy coding: BT.601 YCbCr, 8x8 DCT, libjpeg-scaled
// Annex K tables, no chroma subsampling, 8-bit input and output.
Image jpeg_artifacts(const Image& image, int quality);

DegradationPlan sample_plan(Rng& rng, const SamplerOptions& options, std::size_t height, std::size_t width);

// Stage 1 then stage 2 (blur, resize, noise each), optional final JPEG, then
// bicubic resize back to the original size.
Image degrade(const Image& image, const DegradationPlan& plan);

// Net downsampling factor of the two resize stages.
double net_downsampling(const DegradationPlan& plan);

// One `key = value` per line; parse_plan inverts format_plan exactly.
std::string format_plan(const DegradationPlan& plan);
DegradationPlan parse_plan(const std::string& text);

std::string to_string(BlurKind k);
std::string to_string(ResizeAlgorithm a);
std::string to_string(NoiseKind k);

}  // namespace blindrest
