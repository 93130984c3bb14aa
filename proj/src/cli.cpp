#include "blindrest/cli.hpp"

#include <CLI11.hpp>
#include <optional>

#include "blindrest/errors.hpp"
#include "blindrest/pipeline.hpp"

namespace blindrest {

namespace fs = std::filesystem;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind image restoration: degradation synthesis, two-stage training, guided sampling"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  app.add_option("--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override run.seed");
  app.add_option("--jobs", jobs, "Worker threads (never changes outputs)")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Write the synthetic HQ dataset and manifest");
  std::optional<std::size_t> count, size;
  std::optional<std::string> generator;
  synth->add_option("--count", count, "Number of images");
  synth->add_option("--size", size, "Square side in pixels (multiple of 8)");
  synth->add_option("--generator", generator, "gradients|checker|gaussian-blobs|fractal-noise|mixed");

  auto* degrade = app.add_subcommand("degrade", "Degrade every manifest image and write its plan");
  std::optional<std::string> degrade_input;
  bool wide = false;
  degrade->add_option("--input", degrade_input, "Directory with manifest.txt (default: paths.dataset)");
  degrade->add_flag("--wide", wide, "Use the wide degradation ranges");

  auto* train = app.add_subcommand("train", "Train one pipeline stage, resuming from its checkpoint");
  std::string stage_name;
  std::optional<std::size_t> stop_after;
  train->add_option("--stage", stage_name, "restore|diffuse-pretrain|diffuse-finetune")->required();
  train->add_option("--stop-after", stop_after, "Run at most this many iterations in this invocation");

  auto* restore = app.add_subcommand("restore", "Restore one image: writes I_reg, I_diff and a manifest");
  std::string restore_input;
  std::optional<double> scale;
  std::optional<std::string> restore_output;
  restore->add_option("input", restore_input, "Low-quality PNG")->required();
  restore->add_option("--scale", scale, "Guidance gradient scale s (default guidance.scale)");
  restore->add_option("--output", restore_output, "Output directory");

  auto* sweep = app.add_subcommand("sweep", "Guided sampling over several scales with a contact sheet and CSV");
  std::string sweep_input;
  std::optional<std::string> scales_text, hq, sweep_output;
  std::optional<std::size_t> seeds;
  sweep->add_option("input", sweep_input, "Low-quality PNG")->required();
  sweep->add_option("--scales", scales_text, "Comma-separated scales (default guidance.scales)");
  sweep->add_option("--hq", hq, "Ground-truth PNG for the psnr_vs_HQ column");
  sweep->add_option("--seeds", seeds, "Average the CSV over this many consecutive seeds");
  sweep->add_option("--output", sweep_output, "Output directory");

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    RunConfig config = config_path ? load_config(*config_path) : parse_config("", fs::current_path());
    if (seed) config.seed = *seed;
    if (jobs) config.jobs = *jobs;

    if (*synth) {
      if (count) config.dataset_count = *count;
      if (size) config.dataset_size = *size;
      if (generator) config.generator = parse_generator(*generator);
      config.validate();
      const auto n = cmd_synth(config);
      out << "wrote " << n << " images to " << config.resolve(config.dataset_dir).string() << "\n";
    } else if (*degrade) {
      if (wide) config.wide_degradation = true;
      config.validate();
      std::optional<fs::path> input;
      if (degrade_input) input = fs::path(*degrade_input);
      const auto n = cmd_degrade(config, input);
      out << "degraded " << n << " images into " << config.resolve(config.degraded_dir).string() << "\n";
    } else if (*train) {
      const Stage stage = parse_stage(stage_name);
      config.validate();
      const auto report = cmd_train(config, stage, stop_after);
      out << to_string(stage) << ": iterations " << report.start_iteration << " -> " << report.end_iteration << " of "
          << report.target_iterations;
      if (!report.losses.empty()) out << ", last loss " << report.losses.back();
      out << "\n";
    } else if (*restore) {
      config.validate();
      std::optional<fs::path> output;
      if (restore_output) output = fs::path(*restore_output);
      const auto r = cmd_restore(config, restore_input, scale.value_or(config.guidance_scale), output);
      out << "wrote " << (r.output_dir / "reg.png").string() << " and " << (r.output_dir / "diff.png").string() << "\n";
    } else if (*sweep) {
      if (scales_text) config.sweep_scales = parse_scale_list(*scales_text);
      config.validate();
      std::optional<fs::path> hq_path, output;
      if (hq) hq_path = fs::path(*hq);
      if (sweep_output) output = fs::path(*sweep_output);
      const auto rows = cmd_sweep(config, sweep_input, config.sweep_scales, seeds.value_or(config.sweep_seeds), hq_path,
                                  output);
      out << format_sweep_csv(rows);
    }
  } catch (const DependencyError& e) {
    err << "dependency error: " << e.what() << "\n";
    return kExitDependency;
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace blindrest
