#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blindrest/checkpoint.hpp"
#include "blindrest/cli.hpp"
#include "blindrest/config.hpp"
#include "blindrest/errors.hpp"
#include "blindrest/metrics.hpp"
#include "blindrest/pipeline.hpp"

using namespace blindrest;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "blindrest_unit_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return read_file(p); }

constexpr const char* kTinyConfig = R"(# small enough to train in seconds
[run]
seed = 3
checkpoint_every = 4

[dataset]
count = 6

[restoration]
iterations = 6
batch = 2

[diffusion]
pretrain_iterations = 6
finetune_iterations = 6
batch = 2
steps = 5
channels0 = 8
channels1 = 16
embed_dim = 32

[guidance]
scales = 0, 50, 200
)";

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(const fs::path& dir, std::vector<std::string> args) {
  std::vector<std::string> full{"blindrest", "--config", (dir / "run.ini").string()};
  full.insert(full.end(), args.begin(), args.end());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(full, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path tiny_project(const std::string& name) {
  const fs::path dir = fresh_dir(name);
  std::ofstream(dir / "run.ini") << kTinyConfig;
  return dir;
}

// One trained tiny project shared by the tests that only read from it.
const fs::path& trained_project() {
  static const fs::path dir = [] {
    const fs::path d = tiny_project("trained");
    for (auto args : std::vector<std::vector<std::string>>{{"synth"},
                                                           {"degrade"},
                                                           {"train", "--stage", "restore"},
                                                           {"train", "--stage", "diffuse-pretrain"},
                                                           {"train", "--stage", "diffuse-finetune"}}) {
      const Run r = cli(d, args);
      if (r.code != 0) throw std::runtime_error("setup failed: " + r.err);
    }
    return d;
  }();
  return dir;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("checkpoint round trip and corruption") {
    const fs::path dir = fresh_dir("ckpt");
    Checkpoint c;
    c.kind = "restore";
    c.config = {{"a", "1"}, {"b", "two words"}};
    c.iteration = 42;
    c.tensors.push_back({"w", Tensor({2, 3}, std::vector<float>{1, 2, 3, 4, 5, -6.5f})});
    c.tensors.push_back({"empty_scalar", Tensor({1}, 0.25f)});
    save_checkpoint(dir / "x.ckpt", c);
    const Checkpoint back = load_checkpoint(dir / "x.ckpt");
    CHECK(back.kind == "restore");
    CHECK(back.config == c.config);
    CHECK(back.iteration == 42);
    CHECK(back.tensor("w").shape() == Shape{2, 3});
    CHECK(back.tensor("w").data()[5] == -6.5f);
    CHECK_THROWS_AS(back.tensor("missing"), FormatError);
    CHECK_FALSE(fs::exists(dir / "x.ckpt.tmp"));

    const std::string bytes = slurp(dir / "x.ckpt");
    write_file_atomic(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), FormatError);
    write_file_atomic(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
    write_file_atomic(dir / "trail.ckpt", bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(dir / "trail.ckpt"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
  }

  TEST_CASE("empty config is valid and equals the defaults") {
    const RunConfig c = parse_config("");
    CHECK_NOTHROW(c.validate());
    CHECK(c.dataset_count == 64);
    CHECK(c.dataset_size == 32);
    CHECK(c.codec == CodecKind::identity);
    CHECK(c.sweep_scales == std::vector<double>{0, 50, 200, 1000});
    CHECK(c.sample_steps == 50);
    CHECK(c.diffusion_T == 1000);
  }

  TEST_CASE("config parsing rejects unknown keys and bad values") {
    CHECK_THROWS_AS(parse_config("[run]\nsede = 3\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[nope]\nx = 1\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[run]\nseed = -3\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[run]\nseed = 3x\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[degradation]\nmode = extreme\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[guidance]\nscales =\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[guidance]\nchain_through_zt = maybe\n"), ContractError);
    CHECK_THROWS_AS(parse_config("[diffusion]\nsteps = 0\n").validate(), ContractError);
  }

  TEST_CASE("config paths resolve against the base directory and format round trips") {
    const RunConfig c = parse_config("[run]\nseed = 9\n[paths]\ndataset = imgs\n[degradation]\nmode = wide\n", "/base");
    CHECK(c.resolve(c.dataset_dir) == fs::path("/base/imgs"));
    CHECK(c.wide_degradation);
    const std::string text = format_config(c);
    CHECK(format_config(parse_config(text, "/base")) == text);
  }

  TEST_CASE("scale lists") {
    CHECK(parse_scale_list("0,50,200") == std::vector<double>{0, 50, 200});
    CHECK(parse_scale_list(" 1.5 , 2 ") == std::vector<double>{1.5, 2});
    CHECK_THROWS_AS(parse_scale_list(""), ContractError);
    CHECK_THROWS_AS(parse_scale_list("1,,2"), ContractError);
    CHECK_THROWS_AS(parse_scale_list("1,-2"), ContractError);
  }

  TEST_CASE("synth with count 0 fails and writes nothing") {
    const fs::path dir = tiny_project("count0");
    const Run r = cli(dir, {"synth", "--count", "0"});
    CHECK(r.code == kExitInvalid);
    CHECK(r.err.find("count") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "data"));
  }

  TEST_CASE("default synth writes 64 images of 32x32 deterministically") {
    const fs::path a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
    std::ofstream(a / "run.ini") << "";
    std::ofstream(b / "run.ini") << "";
    REQUIRE(cli(a, {"synth"}).code == 0);
    REQUIRE(cli(b, {"synth"}).code == 0);
    const auto entries = read_manifest(a / "data/hq/manifest.txt");
    CHECK(entries.size() == 64);
    const Image first = load_image(entries.front());
    CHECK(first.height == 32);
    CHECK(first.width == 32);
    for (const auto& e : entries) CHECK(slurp(e) == slurp(b / "data/hq" / e.filename()));
  }

  TEST_CASE("unwritable output is an I/O error") {
    const fs::path dir = tiny_project("unwritable");
    std::ofstream(dir / "blocker") << "a file, not a directory";
    std::ofstream(dir / "run.ini", std::ios::app) << "[paths]\ndataset = blocker/hq\n";
    CHECK(cli(dir, {"synth"}).code == kExitIo);
  }

  TEST_CASE("degrade is deterministic and its plans parse back") {
    const fs::path a = tiny_project("degrade_a"), b = tiny_project("degrade_b");
    for (const auto& d : {a, b}) {
      REQUIRE(cli(d, {"synth"}).code == 0);
      REQUIRE(cli(d, {"degrade"}).code == 0);
    }
    const auto lq = read_manifest(a / "data/lq/manifest.txt");
    REQUIRE(lq.size() == 6);
    for (const auto& p : lq) {
      CHECK(slurp(p) == slurp(b / "data/lq" / p.filename()));
      const fs::path plan_file = fs::path(p).replace_extension(".plan.txt");
      const std::string text = slurp(plan_file);
      CHECK(text == slurp(b / "data/lq" / plan_file.filename()));
      CHECK(format_plan(parse_plan(text)) == text);
      CHECK(load_image(p).height == 32);
    }
    CHECK(cli(a, {"degrade", "--input", (a / "missing").string()}).code == kExitIo);
  }

  TEST_CASE("wide degradation reaches large blur over many images") {
    const fs::path dir = tiny_project("wide");
    std::ofstream(dir / "run.ini", std::ios::app) << "[degradation]\nmode = wide\n";
    REQUIRE(cli(dir, {"synth", "--count", "1000", "--size", "8"}).code == 0);
    REQUIRE(cli(dir, {"degrade"}).code == 0);
    double max_sigma = 0;
    for (const auto& p : read_manifest(dir / "data/lq/manifest.txt")) {
      const auto plan = parse_plan(slurp(fs::path(p).replace_extension(".plan.txt")));
      CHECK(plan.wide_range);
      max_sigma = std::max({max_sigma, plan.stage1.blur.sigma_x, plan.stage1.blur.sigma_y, plan.stage2.blur.sigma_x,
                            plan.stage2.blur.sigma_y});
    }
    CHECK(max_sigma > 3.0);
  }

  TEST_CASE("training stages check their prerequisites") {
    const fs::path dir = tiny_project("deps");
    REQUIRE(cli(dir, {"synth"}).code == 0);
    const Run r = cli(dir, {"train", "--stage", "diffuse-finetune"});
    CHECK(r.code == kExitDependency);
    CHECK(r.err.find("restore") != std::string::npos);
    CHECK(cli(dir, {"restore", (dir / "data/hq/hq_0000.png").string()}).code == kExitDependency);
    CHECK(cli(dir, {"train", "--stage", "polish"}).code == kExitInvalid);
  }

  TEST_CASE("interrupted training resumes at the saved iteration") {
    const fs::path dir = tiny_project("resume");
    REQUIRE(cli(dir, {"synth"}).code == 0);
    REQUIRE(cli(dir, {"degrade"}).code == 0);
    REQUIRE(cli(dir, {"train", "--stage", "restore", "--stop-after", "3"}).code == 0);
    CHECK(load_checkpoint(dir / "checkpoints/restore.ckpt").iteration == 3);
    const Run r = cli(dir, {"train", "--stage", "restore"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("3 -> 6") != std::string::npos);
    CHECK(load_checkpoint(dir / "checkpoints/restore.ckpt").iteration == 6);
    CHECK(count_lines(slurp(dir / "checkpoints/restore_loss.csv")) == 7);

    // The split run lands on the same weights as an uninterrupted one.
    const fs::path whole = tiny_project("resume_whole");
    REQUIRE(cli(whole, {"synth"}).code == 0);
    REQUIRE(cli(whole, {"degrade"}).code == 0);
    REQUIRE(cli(whole, {"train", "--stage", "restore"}).code == 0);
    CHECK(slurp(whole / "checkpoints/restore.ckpt") == slurp(dir / "checkpoints/restore.ckpt"));
    CHECK(slurp(whole / "checkpoints/restore_loss.csv") == slurp(dir / "checkpoints/restore_loss.csv"));
  }

  TEST_CASE("restore writes both stages deterministically with s defaulting to 0") {
    const fs::path& dir = trained_project();
    const fs::path input = dir / "data/lq/hq_0001.png";
    REQUIRE(cli(dir, {"restore", input.string(), "--output", (dir / "r1").string()}).code == 0);
    REQUIRE(cli(dir, {"restore", input.string(), "--output", (dir / "r2").string()}).code == 0);
    for (const char* f : {"reg.png", "diff.png", "manifest.txt"}) CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
    const std::string manifest = slurp(dir / "r1/manifest.txt");
    CHECK(manifest.find("scale = 0\n") != std::string::npos);
    CHECK(manifest.find("seed = 3\n") != std::string::npos);
    CHECK(manifest.find("steps = 5\n") != std::string::npos);
    CHECK(manifest.find("input_fnv1a64") != std::string::npos);
  }

  TEST_CASE("a 48x32 input comes back 48x32") {
    const fs::path& dir = trained_project();
    Image odd(48, 32, 3);
    for (std::size_t i = 0; i < odd.size(); ++i) odd.pixels[i] = float(i % 251) / 250.0f;
    save_image(odd, dir / "odd.png");
    REQUIRE(cli(dir, {"restore", (dir / "odd.png").string(), "--scale", "50", "--output", (dir / "odd")}).code == 0);
    for (const char* f : {"reg.png", "diff.png"}) {
      const Image out = load_image(dir / "odd" / f);
      CHECK(out.height == 48);
      CHECK(out.width == 32);
    }
  }

  TEST_CASE("sweep writes one image and row per scale plus a sheet") {
    const fs::path& dir = trained_project();
    const fs::path input = dir / "data/lq/hq_0002.png";
    const Run r = cli(dir, {"sweep", input.string(), "--hq", (dir / "data/hq/hq_0002.png").string(), "--output",
                            (dir / "sweep").string()});
    REQUIRE(r.code == 0);
    for (const char* f : {"scale_0.png", "scale_50.png", "scale_200.png", "contact_sheet.png", "manifest.txt"})
      CHECK(fs::exists(dir / "sweep" / f));
    const std::string csv = slurp(dir / "sweep/sweep.csv");
    CHECK(count_lines(csv) == 4);
    CHECK(csv.find("\n200,") != std::string::npos);
    CHECK(cli(dir, {"sweep", input.string(), "--scales", ""}).code == kExitInvalid);
    CHECK(cli(dir, {"sweep", input.string(), "--scales", "5,-1"}).code == kExitInvalid);
  }

  TEST_CASE("missing inputs and bad flags") {
    const fs::path& dir = trained_project();
    CHECK(cli(dir, {"restore", (dir / "nope.png").string()}).code == kExitIo);
    CHECK(cli(dir, {"frobnicate"}).code != 0);
    CHECK(cli(dir, {}).code != 0);
  }
}
