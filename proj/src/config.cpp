#include "blindrest/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "blindrest/checkpoint.hpp"
#include "blindrest/errors.hpp"

namespace blindrest {

namespace fs = std::filesystem;

fs::path RunConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec spec;
  spec.count = dataset_count;
  spec.size = dataset_size;
  spec.generator = generator;
  spec.seed = seed;
  return spec;
}

SamplerOptions RunConfig::sampler_options() const { return {wide_degradation, jpeg_probability}; }

NoiseSchedule RunConfig::schedule() const { return make_schedule(diffusion_T, beta_start, beta_end); }

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c = denoiser;
  c.latent_channels = codec == CodecKind::identity ? restoration.in_channels : codec_latent_channels;
  return c;
}

void RunConfig::validate() const {
  if (jobs == 0) throw ContractError("run.jobs must be >= 1");
  if (checkpoint_every == 0) throw ContractError("run.checkpoint_every must be >= 1");
  blindrest::validate(dataset_spec());
  if (!(jpeg_probability >= 0.0 && jpeg_probability <= 1.0)) throw ContractError("degradation.jpeg_probability must be in [0,1]");
  restoration.validate();
  if (restore_batch == 0 || diffusion_batch == 0) throw ContractError("batch sizes must be >= 1");
  if (!(restore_lr > 0.0f) || !(diffusion_lr > 0.0f)) throw ContractError("learning rates must be positive");
  const auto s = schedule();
  if (sample_steps < 1 || sample_steps > s.T) throw ContractError("diffusion.steps must be in [1, T]");
  denoiser_config().validate();
  if (!std::isfinite(guidance_scale) || guidance_scale < 0.0) throw ContractError("guidance.scale must be >= 0");
  if (sweep_scales.empty()) throw ContractError("guidance.scales must not be empty");
  for (double v : sweep_scales)
    if (!std::isfinite(v) || v < 0.0) throw ContractError("guidance.scales entries must be >= 0");
  if (sweep_seeds == 0) throw ContractError("guidance.seeds must be >= 1");
}

std::vector<double> parse_scale_list(const std::string& text) {
  std::vector<double> out;
  if (text.find_first_not_of(" \t") == std::string::npos) throw ContractError("scale list is empty");
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) throw ContractError("empty entry in scale list '" + text + "'");
    const auto e = item.find_last_not_of(" \t");
    const std::string token = item.substr(b, e - b + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) throw ContractError("not a number in scale list: '" + token + "'");
    if (!std::isfinite(v) || v < 0.0) throw ContractError("scales must be finite and >= 0, got " + token);
    out.push_back(v);
  }
  if (out.empty()) throw ContractError("scale list is empty");
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  if constexpr (std::is_unsigned_v<T>) {
    if (text.find('-') != std::string::npos) throw ContractError("config key " + key + " must be non-negative");
  }
  std::istringstream in(text);
  T v{};
  if (!(in >> v) || !(in >> std::ws).eof()) throw ContractError("config key " + key + ": bad value '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ContractError("config key " + key + ": expected true or false, got '" + text + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

template <typename T>
Setter number(T RunConfig::*field, const char* key) {
  return [field, key](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(key, v); };
}

template <typename T, typename S>
Setter nested(S RunConfig::*outer, T S::*field, const char* key) {
  return [outer, field, key](RunConfig& c, const std::string& v) { (c.*outer).*field = parse_number<T>(key, v); };
}

Setter path(fs::path RunConfig::*field) {
  return [field](RunConfig& c, const std::string& v) { c.*field = v; };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.seed", number(&RunConfig::seed, "run.seed")},
      {"run.jobs", number(&RunConfig::jobs, "run.jobs")},
      {"run.checkpoint_every", number(&RunConfig::checkpoint_every, "run.checkpoint_every")},
      {"paths.dataset", path(&RunConfig::dataset_dir)},
      {"paths.degraded", path(&RunConfig::degraded_dir)},
      {"paths.checkpoints", path(&RunConfig::checkpoint_dir)},
      {"paths.outputs", path(&RunConfig::output_dir)},
      {"dataset.count", number(&RunConfig::dataset_count, "dataset.count")},
      {"dataset.size", number(&RunConfig::dataset_size, "dataset.size")},
      {"dataset.generator", [](RunConfig& c, const std::string& v) { c.generator = parse_generator(v); }},
      {"degradation.mode",
       [](RunConfig& c, const std::string& v) {
         if (v != "standard" && v != "wide") throw ContractError("degradation.mode must be standard or wide");
         c.wide_degradation = v == "wide";
       }},
      {"degradation.jpeg_probability", number(&RunConfig::jpeg_probability, "degradation.jpeg_probability")},
      {"restoration.unshuffle_factor", nested(&RunConfig::restoration, &RestorationConfig::unshuffle_factor, "restoration.unshuffle_factor")},
      {"restoration.rstb_count", nested(&RunConfig::restoration, &RestorationConfig::rstb_count, "restoration.rstb_count")},
      {"restoration.stl_per_rstb", nested(&RunConfig::restoration, &RestorationConfig::stl_per_rstb, "restoration.stl_per_rstb")},
      {"restoration.heads", nested(&RunConfig::restoration, &RestorationConfig::heads, "restoration.heads")},
      {"restoration.window", nested(&RunConfig::restoration, &RestorationConfig::window, "restoration.window")},
      {"restoration.embed_dim", nested(&RunConfig::restoration, &RestorationConfig::embed_dim, "restoration.embed_dim")},
      {"restoration.mlp_ratio", nested(&RunConfig::restoration, &RestorationConfig::mlp_ratio, "restoration.mlp_ratio")},
      {"restoration.upsample_features", nested(&RunConfig::restoration, &RestorationConfig::upsample_features, "restoration.upsample_features")},
      {"restoration.leaky_slope", nested(&RunConfig::restoration, &RestorationConfig::leaky_slope, "restoration.leaky_slope")},
      {"restoration.iterations", number(&RunConfig::restore_iterations, "restoration.iterations")},
      {"restoration.batch", number(&RunConfig::restore_batch, "restoration.batch")},
      {"restoration.lr", number(&RunConfig::restore_lr, "restoration.lr")},
      {"restoration.lr_decay",
       [](RunConfig& c, const std::string& v) {
         if (v != "cosine" && v != "constant") throw ContractError("restoration.lr_decay must be cosine or constant");
         c.restore_cosine_decay = v == "cosine";
       }},
      {"diffusion.T", number(&RunConfig::diffusion_T, "diffusion.T")},
      {"diffusion.beta_start", number(&RunConfig::beta_start, "diffusion.beta_start")},
      {"diffusion.beta_end", number(&RunConfig::beta_end, "diffusion.beta_end")},
      {"diffusion.codec", [](RunConfig& c, const std::string& v) { c.codec = parse_codec_kind(v); }},
      {"diffusion.latent_channels", number(&RunConfig::codec_latent_channels, "diffusion.latent_channels")},
      {"diffusion.codec_iterations", number(&RunConfig::codec_iterations, "diffusion.codec_iterations")},
      {"diffusion.channels0", nested(&RunConfig::denoiser, &DenoiserConfig::channels0, "diffusion.channels0")},
      {"diffusion.channels1", nested(&RunConfig::denoiser, &DenoiserConfig::channels1, "diffusion.channels1")},
      {"diffusion.time_dim", nested(&RunConfig::denoiser, &DenoiserConfig::time_dim, "diffusion.time_dim")},
      {"diffusion.embed_dim", nested(&RunConfig::denoiser, &DenoiserConfig::embed_dim, "diffusion.embed_dim")},
      {"diffusion.context_dim", nested(&RunConfig::denoiser, &DenoiserConfig::context_dim, "diffusion.context_dim")},
      {"diffusion.groups", nested(&RunConfig::denoiser, &DenoiserConfig::groups, "diffusion.groups")},
      {"diffusion.pretrain_iterations", number(&RunConfig::pretrain_iterations, "diffusion.pretrain_iterations")},
      {"diffusion.finetune_iterations", number(&RunConfig::finetune_iterations, "diffusion.finetune_iterations")},
      {"diffusion.batch", number(&RunConfig::diffusion_batch, "diffusion.batch")},
      {"diffusion.lr", number(&RunConfig::diffusion_lr, "diffusion.lr")},
      {"diffusion.steps", number(&RunConfig::sample_steps, "diffusion.steps")},
      {"guidance.scale", number(&RunConfig::guidance_scale, "guidance.scale")},
      {"guidance.scales", [](RunConfig& c, const std::string& v) { c.sweep_scales = parse_scale_list(v); }},
      {"guidance.seeds", number(&RunConfig::sweep_seeds, "guidance.seeds")},
      {"guidance.chain_through_zt",
       [](RunConfig& c, const std::string& v) { c.chain_through_zt = parse_bool("guidance.chain_through_zt", v); }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ContractError("config key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters().find(full);
      if (it == setters().end()) throw ContractError("unknown config key " + full);
      it->second(c, value.data());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file " + path.string() + " does not exist");
  const auto base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_config(read_file(path), base);
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  o << "[run]\nseed = " << c.seed << "\njobs = " << c.jobs << "\ncheckpoint_every = " << c.checkpoint_every << "\n\n";
  o << "[paths]\ndataset = " << c.dataset_dir.string() << "\ndegraded = " << c.degraded_dir.string()
    << "\ncheckpoints = " << c.checkpoint_dir.string() << "\noutputs = " << c.output_dir.string() << "\n\n";
  o << "[dataset]\ncount = " << c.dataset_count << "\nsize = " << c.dataset_size
    << "\ngenerator = " << to_string(c.generator) << "\n\n";
  o << "[degradation]\nmode = " << (c.wide_degradation ? "wide" : "standard")
    << "\njpeg_probability = " << fmt(c.jpeg_probability) << "\n\n";
  o << "[restoration]\n";
  for (const auto& [k, v] : c.restoration.to_map()) {
    if (k == "in_channels") continue;
    o << k << " = " << (k == "leaky_slope" ? fmt(c.restoration.leaky_slope) : v) << "\n";
  }
  o << "iterations = " << c.restore_iterations << "\nbatch = " << c.restore_batch << "\nlr = " << fmt(c.restore_lr)
    << "\nlr_decay = " << (c.restore_cosine_decay ? "cosine" : "constant") << "\n\n";
  o << "[diffusion]\nT = " << c.diffusion_T << "\nbeta_start = " << fmt(c.beta_start) << "\nbeta_end = " << fmt(c.beta_end)
    << "\ncodec = " << to_string(c.codec) << "\nlatent_channels = " << c.codec_latent_channels
    << "\ncodec_iterations = " << c.codec_iterations;
  for (const auto& [k, v] : c.denoiser.to_map()) {
    if (k == "latent_channels") continue;
    o << "\n" << k << " = " << v;
  }
  o << "\npretrain_iterations = " << c.pretrain_iterations << "\nfinetune_iterations = " << c.finetune_iterations
    << "\nbatch = " << c.diffusion_batch << "\nlr = " << fmt(c.diffusion_lr) << "\nsteps = " << c.sample_steps << "\n\n";
  o << "[guidance]\nscale = " << fmt(c.guidance_scale) << "\nscales = ";
  for (std::size_t i = 0; i < c.sweep_scales.size(); ++i) o << (i ? "," : "") << fmt(c.sweep_scales[i]);
  o << "\nseeds = " << c.sweep_seeds << "\nchain_through_zt = " << (c.chain_through_zt ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace blindrest
