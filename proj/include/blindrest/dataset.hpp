#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blindrest/image.hpp"

namespace blindrest {

enum class Generator { gradients, checker, gaussian_blobs, fractal_noise, mixed };

std::string to_string(Generator g);
Generator parse_generator(const std::string& name);

struct DatasetSpec {
  std::size_t count = 64;
  std::size_t size = 32;  // square side; multiple of 8
  Generator generator = Generator::mixed;
  std::uint64_t seed = 0;
};

void validate(const DatasetSpec& spec);

// One RGB image per index, each drawn from its own stream, quantized to 8-bit
// levels so a PNG round trip is exact.
Image synth_image(const DatasetSpec& spec, std::size_t index);
std::vector<Image> synth_dataset(const DatasetSpec& spec, std::size_t jobs = 1);

// Plain-text index, one image path per line (relative to the manifest directory).
void write_manifest(const std::filesystem::path& manifest, const std::vector<std::string>& entries);
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);

}  // namespace blindrest
