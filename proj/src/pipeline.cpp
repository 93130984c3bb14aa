#include "blindrest/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blindrest/checkpoint.hpp"
#include "blindrest/dataset.hpp"
#include "blindrest/errors.hpp"
#include "blindrest/metrics.hpp"
#include "blindrest/parallel.hpp"

namespace blindrest {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDegradeStream = 0xde6a;

enum SeedTag : std::uint64_t {
  kRestoreInit = 1,
  kRestoreTrain,
  kDenoiserInit,
  kPretrainTrain,
  kFinetuneTrain,
  kCodecInit,
  kCodecTrain,
};

std::uint64_t derive_seed(std::uint64_t seed, SeedTag tag) { return stream_id({seed, tag}); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::vector<NamedParam> prefixed(const ParamList& params, const std::string& prefix) {
  std::vector<NamedParam> out;
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
  return out;
}

std::vector<NamedParam> strip_prefix(const std::vector<NamedParam>& tensors, const std::string& prefix) {
  std::vector<NamedParam> out;
  for (const auto& t : tensors)
    if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.tensor});
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string file_digest(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Image> load_dataset(const RunConfig& config, Stage stage) {
  const fs::path manifest = config.resolve(config.dataset_dir) / "manifest.txt";
  if (!fs::exists(manifest)) {
    throw DependencyError("stage " + to_string(stage) + " needs the synthesized dataset (" + manifest.string() +
                          "); run synth first");
  }
  std::vector<Image> images;
  for (const auto& p : read_manifest(manifest)) images.push_back(load_image(p));
  if (images.empty()) throw ContractError("dataset manifest " + manifest.string() + " lists no images");
  return images;
}

std::optional<Checkpoint> load_if_present(const fs::path& path, const std::string& kind) {
  if (!fs::exists(path)) return std::nullopt;
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != kind) throw FormatError(path.string() + " holds a " + ckpt.kind + " checkpoint, expected " + kind);
  return ckpt;
}

// Loads a stage checkpoint some later stage depends on; it must have finished.
Checkpoint require_stage(const RunConfig& config, Stage needed, const std::string& requester) {
  const fs::path path = checkpoint_path(config, needed);
  if (!fs::exists(path)) {
    throw DependencyError(requester + " requires the " + to_string(needed) +
                          " checkpoint, which does not exist (" + path.string() + ")");
  }
  Checkpoint ckpt = load_checkpoint(path);
  const auto target = std::stoull(ckpt.config.at("target_iterations"));
  if (ckpt.iteration < target) {
    throw DependencyError(requester + " requires a finished " + to_string(needed) + " stage (" +
                          std::to_string(ckpt.iteration) + " of " + std::to_string(target) + " iterations)");
  }
  return ckpt;
}

void check_config_matches(const Checkpoint& ckpt, const std::map<std::string, std::string>& expected,
                          const fs::path& path) {
  for (const auto& [k, v] : expected) {
    auto it = ckpt.config.find(k);
    if (it == ckpt.config.end() || it->second != v) {
      throw ContractError("checkpoint " + path.string() + " was written with " + k + " = " +
                          (it == ckpt.config.end() ? "<unset>" : it->second) + ", config says " + v);
    }
  }
}

std::map<std::string, std::string> diffusion_config_map(const RunConfig& config) {
  auto m = config.denoiser_config().to_map();
  m["codec"] = to_string(config.codec);
  m["codec_latent_channels"] = std::to_string(config.codec_latent_channels);
  m["T"] = std::to_string(config.diffusion_T);
  m["beta_start"] = fmt(config.beta_start);
  m["beta_end"] = fmt(config.beta_end);
  return m;
}

/// Keeps the per-iteration loss CSV consistent with the checkpoint: rows at or
/// beyond the resume point are dropped, new rows are appended and flushed.
class LossLog {
 public:
  LossLog(const fs::path& path, std::size_t resume_iteration) : path_(path) {
    std::string kept = "iteration,loss\n";
    if (resume_iteration > 0 && fs::exists(path)) {
      std::istringstream in(read_file(path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        if (std::stoull(line.substr(0, comma)) < resume_iteration) kept += line + "\n";
      }
    }
    write_file_atomic(path, kept);
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot append to " + path.string());
  }

  void add(std::size_t iteration, float loss) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", iteration, static_cast<double>(loss));
    out_ << buf;
    out_.flush();
    if (!out_) throw IoError("error writing " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

// Runs `step` until the trainer is done or `stop_after` iterations have run,
// checkpointing periodically and on exit.
template <typename Trainer, typename Save>
TrainReport run_training(Trainer& trainer, std::size_t target, const RunConfig& config, Stage stage,
                         std::optional<std::size_t> stop_after, Save save) {
  TrainReport report;
  report.start_iteration = trainer.iteration();
  report.target_iterations = target;
  LossLog log(loss_csv_path(config, stage), trainer.iteration());
  while (!trainer.done() && (!stop_after || report.losses.size() < *stop_after)) {
    const std::size_t it = trainer.iteration();
    const float loss = trainer.step();
    report.losses.push_back(loss);
    log.add(it, loss);
    if (trainer.iteration() % config.checkpoint_every == 0 && !trainer.done()) save(trainer.iteration());
  }
  save(trainer.iteration());
  report.end_iteration = trainer.iteration();
  return report;
}

TrainReport train_restore_stage(const RunConfig& config, std::optional<std::size_t> stop_after) {
  const auto dataset = load_dataset(config, Stage::restore);
  const fs::path path = checkpoint_path(config, Stage::restore);
  RestorationNet net(config.restoration, derive_seed(config.seed, kRestoreInit));
  RestorationTrainOptions options;
  options.seed = derive_seed(config.seed, kRestoreTrain);
  options.iterations = config.restore_iterations;
  options.batch = config.restore_batch;
  options.lr = config.restore_lr;
  options.cosine_decay = config.restore_cosine_decay;
  options.jobs = config.jobs;
  options.degrader = standard_degrader(config.sampler_options());
  RestorationTrainer trainer(net, dataset, options);

  auto ckpt_config = config.restoration.to_map();
  if (auto existing = load_if_present(path, "restore")) {
    check_config_matches(*existing, ckpt_config, path);
    load_params(net.parameters(), strip_prefix(existing->tensors, "net/"));
    trainer.resume(existing->iteration, existing->tensors);
  }
  ckpt_config["target_iterations"] = std::to_string(config.restore_iterations);
  return run_training(trainer, config.restore_iterations, config, Stage::restore, stop_after, [&](std::size_t it) {
    Checkpoint ckpt;
    ckpt.kind = "restore";
    ckpt.config = ckpt_config;
    ckpt.iteration = it;
    ckpt.tensors = prefixed(net.parameters(), "net/");
    for (auto& t : trainer.optimizer().export_state()) ckpt.tensors.push_back(std::move(t));
    save_checkpoint(path, ckpt);
  });
}

TrainReport train_pretrain_stage(const RunConfig& config, std::optional<std::size_t> stop_after) {
  const auto dataset = load_dataset(config, Stage::diffuse_pretrain);
  const fs::path path = checkpoint_path(config, Stage::diffuse_pretrain);
  const auto schedule = config.schedule();
  LatentCodec codec(config.codec, config.restoration.in_channels, config.codec_latent_channels,
                    derive_seed(config.seed, kCodecInit));
  Denoiser denoiser(config.denoiser_config(), derive_seed(config.seed, kDenoiserInit));
  auto existing = load_if_present(path, "diffuse-pretrain");
  auto ckpt_config = diffusion_config_map(config);
  if (existing) {
    check_config_matches(*existing, ckpt_config, path);
    load_params(codec.parameters(), strip_prefix(existing->tensors, "codec/"));
    load_params(denoiser.parameters(), strip_prefix(existing->tensors, "denoiser/"));
  } else {
    CodecTrainOptions co;
    co.seed = derive_seed(config.seed, kCodecTrain);
    co.iterations = config.codec_iterations;
    co.batch = config.diffusion_batch;
    train_codec(codec, dataset, co);
  }
  DiffusionTrainOptions options;
  options.seed = derive_seed(config.seed, kPretrainTrain);
  options.iterations = config.pretrain_iterations;
  options.batch = config.diffusion_batch;
  options.lr = config.diffusion_lr;
  options.jobs = config.jobs;
  DiffusionTrainer trainer(DiffusionMode::pretrain, denoiser, nullptr, codec, nullptr, dataset, schedule, options);
  if (existing) trainer.resume(existing->iteration, existing->tensors);
  ckpt_config["target_iterations"] = std::to_string(config.pretrain_iterations);
  return run_training(trainer, config.pretrain_iterations, config, Stage::diffuse_pretrain, stop_after,
                      [&](std::size_t it) {
                        Checkpoint ckpt;
                        ckpt.kind = "diffuse-pretrain";
                        ckpt.config = ckpt_config;
                        ckpt.iteration = it;
                        ckpt.tensors = prefixed(denoiser.parameters(), "denoiser/");
                        for (auto& t : prefixed(codec.parameters(), "codec/")) ckpt.tensors.push_back(std::move(t));
                        for (auto& t : trainer.optimizer().export_state()) ckpt.tensors.push_back(std::move(t));
                        save_checkpoint(path, ckpt);
                      });
}

TrainReport train_finetune_stage(const RunConfig& config, std::optional<std::size_t> stop_after) {
  const Checkpoint restore_ckpt = require_stage(config, Stage::restore, "stage diffuse-finetune");
  const Checkpoint pretrain_ckpt = require_stage(config, Stage::diffuse_pretrain, "stage diffuse-finetune");
  const auto dataset = load_dataset(config, Stage::diffuse_finetune);
  const fs::path path = checkpoint_path(config, Stage::diffuse_finetune);
  const auto schedule = config.schedule();

  RestorationNet net(config.restoration, derive_seed(config.seed, kRestoreInit));
  check_config_matches(restore_ckpt, config.restoration.to_map(), checkpoint_path(config, Stage::restore));
  load_params(net.parameters(), strip_prefix(restore_ckpt.tensors, "net/"));
  LatentCodec codec(config.codec, config.restoration.in_channels, config.codec_latent_channels, 0);
  Denoiser denoiser(config.denoiser_config(), 0);
  auto ckpt_config = diffusion_config_map(config);
  check_config_matches(pretrain_ckpt, ckpt_config, checkpoint_path(config, Stage::diffuse_pretrain));
  load_params(codec.parameters(), strip_prefix(pretrain_ckpt.tensors, "codec/"));
  load_params(denoiser.parameters(), strip_prefix(pretrain_ckpt.tensors, "denoiser/"));
  Conditioner conditioner(denoiser, codec.latent_channels());

  auto existing = load_if_present(path, "diffuse-finetune");
  if (existing) {
    check_config_matches(*existing, ckpt_config, path);
    load_params(conditioner.parameters(), strip_prefix(existing->tensors, "conditioner/"));
  }
  DiffusionTrainOptions options;
  options.seed = derive_seed(config.seed, kFinetuneTrain);
  options.iterations = config.finetune_iterations;
  options.batch = config.diffusion_batch;
  options.lr = config.diffusion_lr;
  options.jobs = config.jobs;
  options.degrader = standard_degrader(config.sampler_options());
  DiffusionTrainer trainer(DiffusionMode::finetune, denoiser, &conditioner, codec, &net, dataset, schedule, options);
  if (existing) trainer.resume(existing->iteration, existing->tensors);
  ckpt_config["target_iterations"] = std::to_string(config.finetune_iterations);
  return run_training(trainer, config.finetune_iterations, config, Stage::diffuse_finetune, stop_after,
                      [&](std::size_t it) {
                        Checkpoint ckpt;
                        ckpt.kind = "diffuse-finetune";
                        ckpt.config = ckpt_config;
                        ckpt.iteration = it;
                        ckpt.tensors = prefixed(conditioner.parameters(), "conditioner/");
                        for (auto& t : trainer.optimizer().export_state()) ckpt.tensors.push_back(std::move(t));
                        save_checkpoint(path, ckpt);
                      });
}

// Index into [0, n) mirroring about the edges without repeating them.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

Image crop(const Image& image, std::size_t h, std::size_t w) {
  Image out(h, w, image.channels);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y, x, c);
  return out;
}

std::string run_manifest(const RunConfig& config, const std::string& command, const fs::path& input,
                         const std::string& extra) {
  std::ostringstream o;
  o << "command = " << command << "\n";
  if (!input.empty()) o << "input = " << input.filename().string() << "\ninput_fnv1a64 = " << file_digest(input) << "\n";
  o << extra << "\n# effective config\n" << format_config(config);
  return o.str();
}

}  // namespace

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::restore: return "restore";
    case Stage::diffuse_pretrain: return "diffuse-pretrain";
    case Stage::diffuse_finetune: return "diffuse-finetune";
  }
  return "?";
}

Stage parse_stage(const std::string& text) {
  if (text == "restore") return Stage::restore;
  if (text == "diffuse-pretrain") return Stage::diffuse_pretrain;
  if (text == "diffuse-finetune") return Stage::diffuse_finetune;
  throw ContractError("unknown stage '" + text + "' (expected restore, diffuse-pretrain or diffuse-finetune)");
}

fs::path checkpoint_path(const RunConfig& config, Stage stage) {
  return config.resolve(config.checkpoint_dir) / (to_string(stage) + ".ckpt");
}

fs::path loss_csv_path(const RunConfig& config, Stage stage) {
  return config.resolve(config.checkpoint_dir) / (to_string(stage) + "_loss.csv");
}

std::size_t cmd_synth(const RunConfig& config) {
  const DatasetSpec spec = config.dataset_spec();
  validate(spec);
  const auto images = synth_dataset(spec, config.jobs);
  const fs::path dir = config.resolve(config.dataset_dir);
  ensure_dir(dir);
  std::vector<std::string> names(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "hq_%04zu.png", i);
    names[i] = name;
  }
  parallel_for(images.size(), config.jobs, [&](std::size_t i) { save_image(images[i], dir / names[i]); });
  write_manifest(dir / "manifest.txt", names);
  write_file_atomic(dir / "run.txt", run_manifest(config, "synth", {}, ""));
  return images.size();
}

std::size_t cmd_degrade(const RunConfig& config, const std::optional<fs::path>& input) {
  const fs::path in_dir = input ? *input : config.resolve(config.dataset_dir);
  const fs::path manifest = in_dir / "manifest.txt";
  if (!fs::exists(manifest)) throw IoError("no manifest.txt in input directory " + in_dir.string());
  const auto paths = read_manifest(manifest);
  for (const auto& p : paths)
    if (!fs::exists(p)) throw IoError("input image " + p.string() + " does not exist");
  const fs::path out_dir = config.resolve(config.degraded_dir);
  ensure_dir(out_dir);
  const auto options = config.sampler_options();
  std::vector<std::string> names(paths.size());
  parallel_for(paths.size(), config.jobs, [&](std::size_t i) {
    const Image hq = load_image(paths[i]);
    Rng rng(config.seed, stream_id({kDegradeStream, i}));
    const DegradationPlan plan = sample_plan(rng, options, hq.height, hq.width);
    const Image lq = degrade(hq, plan);
    const std::string stem = paths[i].stem().string();
    names[i] = stem + ".png";
    save_image(lq, out_dir / names[i]);
    write_file_atomic(out_dir / (stem + ".plan.txt"), format_plan(plan));
  });
  write_manifest(out_dir / "manifest.txt", names);
  write_file_atomic(out_dir / "run.txt", run_manifest(config, "degrade", {}, "source = " + in_dir.filename().string()));
  return paths.size();
}

TrainReport cmd_train(const RunConfig& config, Stage stage, std::optional<std::size_t> stop_after) {
  ensure_dir(config.resolve(config.checkpoint_dir));
  switch (stage) {
    case Stage::restore: return train_restore_stage(config, stop_after);
    case Stage::diffuse_pretrain: return train_pretrain_stage(config, stop_after);
    case Stage::diffuse_finetune: return train_finetune_stage(config, stop_after);
  }
  throw ContractError("unknown stage");
}

TrainedModels load_trained_models(const RunConfig& config) {
  const Checkpoint restore_ckpt = require_stage(config, Stage::restore, "restoring");
  const Checkpoint pretrain_ckpt = require_stage(config, Stage::diffuse_pretrain, "restoring");
  const Checkpoint finetune_ckpt = require_stage(config, Stage::diffuse_finetune, "restoring");
  const fs::path finetune_path = checkpoint_path(config, Stage::diffuse_finetune);

  RestorationNet net(config.restoration, 0);
  check_config_matches(restore_ckpt, config.restoration.to_map(), checkpoint_path(config, Stage::restore));
  load_params(net.parameters(), strip_prefix(restore_ckpt.tensors, "net/"));
  LatentCodec codec(config.codec, config.restoration.in_channels, config.codec_latent_channels, 0);
  Denoiser denoiser(config.denoiser_config(), 0);
  const auto dcfg = diffusion_config_map(config);
  check_config_matches(pretrain_ckpt, dcfg, checkpoint_path(config, Stage::diffuse_pretrain));
  load_params(codec.parameters(), strip_prefix(pretrain_ckpt.tensors, "codec/"));
  load_params(denoiser.parameters(), strip_prefix(pretrain_ckpt.tensors, "denoiser/"));
  Conditioner conditioner(denoiser, codec.latent_channels());
  check_config_matches(finetune_ckpt, dcfg, finetune_path);
  load_params(conditioner.parameters(), strip_prefix(finetune_ckpt.tensors, "conditioner/"));
  return TrainedModels{std::move(net), std::move(codec), std::move(denoiser), std::move(conditioner),
                       config.schedule()};
}

std::size_t required_input_multiple(const TrainedModels& models) {
  // The denoiser halves the latent twice; the codec divides the image side first.
  return std::lcm(models.restoration.config().required_multiple(), 4 * models.codec.downsampling());
}

WorkingImage WorkingImage::prepare(const Image& input, std::size_t working_size, std::size_t multiple) {
  WorkingImage w;
  w.original_height = input.height;
  w.original_width = input.width;
  Image scaled = input;
  const std::size_t short_side = std::min(input.height, input.width);
  if (short_side < working_size) {
    const double f = static_cast<double>(working_size) / static_cast<double>(short_side);
    const auto h = input.height == short_side ? working_size : static_cast<std::size_t>(std::lround(input.height * f));
    const auto wd = input.width == short_side ? working_size : static_cast<std::size_t>(std::lround(input.width * f));
    scaled = resize_to(input, h, wd, ResizeAlgorithm::bicubic);
  }
  w.scaled_height = scaled.height;
  w.scaled_width = scaled.width;
  const std::size_t H = (scaled.height + multiple - 1) / multiple * multiple;
  const std::size_t W = (scaled.width + multiple - 1) / multiple * multiple;
  w.image = Image(H, W, scaled.channels);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < scaled.channels; ++c) {
        w.image.at(y, x, c) = scaled.at(reflect_index(static_cast<std::ptrdiff_t>(y), scaled.height),
                                        reflect_index(static_cast<std::ptrdiff_t>(x), scaled.width), c);
      }
  return w;
}

Image WorkingImage::finish(const Image& processed) const {
  Image out = crop(processed, scaled_height, scaled_width);
  if (scaled_height != original_height || scaled_width != original_width) {
    out = resize_to(out, original_height, original_width, ResizeAlgorithm::bicubic);
  }
  return out;
}

RestoreResult cmd_restore(const RunConfig& config, const fs::path& input, double scale,
                          const std::optional<fs::path>& output) {
  if (!std::isfinite(scale) || scale < 0.0) throw ContractError("scale must be finite and >= 0");
  if (!fs::exists(input)) throw IoError("input image " + input.string() + " does not exist");
  const TrainedModels models = load_trained_models(config);
  const Image lq = load_image(input);
  if (lq.channels != config.restoration.in_channels) {
    throw DimensionError("input has " + std::to_string(lq.channels) + " channels, the model expects " +
                         std::to_string(config.restoration.in_channels));
  }
  const auto work = WorkingImage::prepare(lq, config.dataset_size, required_input_multiple(models));
  const Image reg_work = models.restoration.restore(work.image);
  const auto guided = guided_restore(models.diffusion(), reg_work, scale, config.sample_steps, config.seed,
                                     config.chain_through_zt);

  RestoreResult result;
  result.reg = work.finish(reg_work);
  result.diff = work.finish(guided.diff);
  result.output_dir = output ? *output : config.resolve(config.output_dir) / ("restore_" + input.stem().string());
  ensure_dir(result.output_dir);
  save_image(result.reg, result.output_dir / "reg.png");
  save_image(result.diff, result.output_dir / "diff.png");
  std::ostringstream extra;
  extra << format_sampler_manifest(models.schedule, guided.sample.steps, config.seed, scale);
  extra << "chain_through_zt = " << (config.chain_through_zt ? "true" : "false") << "\n";
  extra << "working_size = " << work.image.height << "x" << work.image.width << "\n";
  extra << "D_latent = " << fmt(guided.sample.d_latent) << "\n";
  write_file_atomic(result.output_dir / "manifest.txt", run_manifest(config, "restore", input, extra.str()));
  return result;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config, const fs::path& input, const std::vector<double>& scales,
                                std::size_t seeds, const std::optional<fs::path>& hq_path,
                                const std::optional<fs::path>& output) {
  if (scales.empty()) throw ContractError("sweep needs at least one scale");
  if (seeds == 0) throw ContractError("sweep needs at least one seed");
  if (!fs::exists(input)) throw IoError("input image " + input.string() + " does not exist");
  const TrainedModels models = load_trained_models(config);
  const Image lq = load_image(input);
  std::optional<Image> hq;
  if (hq_path) {
    hq = load_image(*hq_path);
    require_same_dims(*hq, lq, "sweep ground truth");
  }
  const auto work = WorkingImage::prepare(lq, config.dataset_size, required_input_multiple(models));
  const Image reg_work = models.restoration.restore(work.image);
  const Image reg = work.finish(reg_work);

  std::vector<SweepRow> mean(scales.size());
  std::vector<Image> first_images;
  for (std::size_t k = 0; k < seeds; ++k) {
    const auto rows = sweep_scale(models.diffusion(), reg_work, std::nullopt, scales, config.sample_steps,
                                  config.seed + k, config.jobs);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Image diff = work.finish(rows[i].diff);
      if (k == 0) {
        mean[i].scale = rows[i].scale;
        mean[i].diff = diff;
        first_images.push_back(diff);
      }
      mean[i].d_latent += rows[i].d_latent / static_cast<double>(seeds);
      mean[i].psnr_vs_reg += psnr(diff, reg) / static_cast<double>(seeds);
      if (hq) mean[i].psnr_vs_hq = mean[i].psnr_vs_hq.value_or(0.0) + psnr(diff, *hq) / static_cast<double>(seeds);
    }
  }

  const fs::path dir = output ? *output : config.resolve(config.output_dir) / ("sweep_" + input.stem().string());
  ensure_dir(dir);
  std::vector<Image> sheet{lq, reg};
  for (std::size_t i = 0; i < scales.size(); ++i) {
    save_image(mean[i].diff, dir / ("scale_" + short_fmt(scales[i]) + ".png"));
    sheet.push_back(mean[i].diff);
  }
  save_image(contact_sheet(sheet, sheet.size()), dir / "contact_sheet.png");
  write_file_atomic(dir / "sweep.csv", format_sweep_csv(mean));
  std::ostringstream extra;
  std::istringstream sampler(format_sampler_manifest(
      models.schedule, spaced_steps(models.schedule.T, config.sample_steps), config.seed, scales.front()));
  for (std::string line; std::getline(sampler, line);)
    if (line.rfind("scale = ", 0) != 0) extra << line << "\n";
  extra << "scales =";
  for (double s : scales) extra << " " << fmt(s);
  extra << "\nseeds = " << seeds << "\n";
  extra << "contact_sheet = LQ, I_reg, then I_diff per scale (seed " << config.seed << ")\n";
  write_file_atomic(dir / "manifest.txt", run_manifest(config, "sweep", input, extra.str()));
  return mean;
}

}  // namespace blindrest
