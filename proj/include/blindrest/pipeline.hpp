#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "blindrest/config.hpp"
#include "blindrest/guidance.hpp"

namespace blindrest {

enum class Stage { restore, diffuse_pretrain, diffuse_finetune };
std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

std::filesystem::path checkpoint_path(const RunConfig& config, Stage stage);
std::filesystem::path loss_csv_path(const RunConfig& config, Stage stage);

// Writes the HQ images and manifest.txt; returns the image count.
std::size_t cmd_synth(const RunConfig& config);

// One LQ PNG and one plan file per manifest entry of `input` (default: the dataset dir).
std::size_t cmd_degrade(const RunConfig& config, const std::optional<std::filesystem::path>& input = std::nullopt);

struct TrainReport {
  std::size_t start_iteration = 0;
  std::size_t end_iteration = 0;
  std::size_t target_iterations = 0;
  std::vector<float> losses;  // this invocation only
};

// Resumes from an existing checkpoint of the same stage. `stop_after` caps the
// iterations run by this invocation; the checkpoint is saved on exit.
TrainReport cmd_train(const RunConfig& config, Stage stage, std::optional<std::size_t> stop_after = std::nullopt);

/// Every trained component, loaded from the three stage checkpoints.
struct TrainedModels {
  RestorationNet restoration;
  LatentCodec codec;
  Denoiser denoiser;
  Conditioner conditioner;
  NoiseSchedule schedule;

  DiffusionModels diffusion() const { return {denoiser, conditioner, codec, schedule}; }
};

// Throws DependencyError naming the first stage whose checkpoint is missing or unfinished.
TrainedModels load_trained_models(const RunConfig& config);

/// Input prepared for the networks: short side lifted to the working size,
/// then reflect-padded to a size both stages accept.
struct WorkingImage {
  Image image;
  std::size_t original_height = 0, original_width = 0;
  std::size_t scaled_height = 0, scaled_width = 0;

  static WorkingImage prepare(const Image& input, std::size_t working_size, std::size_t multiple);
  // Crops the padding and resizes back to the original dims.
  Image finish(const Image& processed) const;
};

std::size_t required_input_multiple(const TrainedModels& models);

struct RestoreResult {
  Image reg;
  Image diff;
  std::filesystem::path output_dir;
};

// Writes reg.png, diff.png and manifest.txt.
RestoreResult cmd_restore(const RunConfig& config, const std::filesystem::path& input, double scale,
                          const std::optional<std::filesystem::path>& output = std::nullopt);

// Writes one PNG per scale, contact_sheet.png, sweep.csv and manifest.txt.
// With seeds > 1 the CSV holds means over seeds seed .. seed+seeds-1.
std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::filesystem::path& input,
                                const std::vector<double>& scales, std::size_t seeds,
                                const std::optional<std::filesystem::path>& hq = std::nullopt,
                                const std::optional<std::filesystem::path>& output = std::nullopt);

}  // namespace blindrest
