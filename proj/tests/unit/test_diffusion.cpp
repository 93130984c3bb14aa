#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "blindrest/dataset.hpp"
#include "blindrest/diffusion.hpp"
#include "blindrest/errors.hpp"
#include "blindrest/metrics.hpp"

using namespace blindrest;

namespace {

const NoiseSchedule& desk_schedule() {
  static const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  return s;
}

// Returns the noise that actually separates z_t from a known clean latent.
EpsModel oracle_eps(const Tensor& z, const NoiseSchedule& schedule) {
  return [z, &schedule](const Tensor& z_t, int t) {
    const double ab = schedule.alpha_bar(t);
    std::vector<float> eps(z.numel());
    for (std::size_t i = 0; i < eps.size(); ++i)
      eps[i] = static_cast<float>((double(z_t.data()[i]) - std::sqrt(ab) * z.data()[i]) / std::sqrt(1.0 - ab));
    return Tensor(z.shape(), std::move(eps));
  };
}

double relative_error(const Tensor& a, const Tensor& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num += std::pow(double(a.data()[i]) - b.data()[i], 2);
    den += std::pow(double(b.data()[i]), 2);
  }
  return std::sqrt(num / den);
}

std::vector<Image> tiny_dataset(std::size_t count, std::uint64_t seed = 0) {
  DatasetSpec spec;
  spec.count = count;
  spec.size = 16;
  spec.seed = seed;
  return synth_dataset(spec);
}

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.channels0 = 8;
  c.channels1 = 16;
  c.embed_dim = 32;
  return c;
}

}  // namespace

TEST_SUITE("diffusion") {
  TEST_CASE("prior skip adds sqrt(1 - abar_t) z_t per batch entry") {
    Rng rng(40, 0);
    const Tensor zt = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
    const Tensor out = oracle::random_tensor({2, 3, 4, 4}, rng);
    const std::vector<int> t{1, 1000};
    const Tensor eps = add_prior_skip(out, zt, t, desk_schedule());
    for (std::size_t b = 0; b < 2; ++b) {
      const double gain = std::sqrt(1.0 - desk_schedule().alpha_bar(t[b]));
      for (std::size_t i = b * 48; i < (b + 1) * 48; ++i)
        CHECK(eps.data()[i] == doctest::Approx(out.data()[i] + gain * zt.data()[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(add_prior_skip(out, zt, {5}, desk_schedule()), DimensionError);
  }

  TEST_CASE("linear schedule examples") {
    const auto& s = desk_schedule();
    CHECK(s.alpha_bar(1000) < 0.01);
    CHECK(s.alpha_bar(1) == 1.0 - s.betas[1]);
    double running = 1.0;
    for (int t = 1; t <= 1000; ++t) {
      running *= 1.0 - s.betas[static_cast<std::size_t>(t)];
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      CHECK(std::abs(s.alpha_bar(t) - running) <= 1e-6 * running);
      CHECK(std::abs(s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alphas[static_cast<std::size_t>(t)]) <= 1e-6);
      CHECK(s.betas[static_cast<std::size_t>(t)] > 0.0);
      CHECK(s.betas[static_cast<std::size_t>(t)] < 1.0);
    }
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ContractError);
    CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), ContractError);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ContractError);
  }

  TEST_CASE("forward diffusion examples") {
    const auto& s = desk_schedule();
    Rng rng(1, 0);
    const Tensor z = oracle::random_tensor({2, 3, 4, 4}, rng);
    const Tensor eps = oracle::random_tensor({2, 3, 4, 4}, rng);
    const Tensor zeros(z.shape(), 0.0f);
    const Tensor a = forward_diffuse(z, 300, zeros, s);
    const Tensor b = forward_diffuse(zeros, 300, eps, s);
    for (std::size_t i = 0; i < z.numel(); ++i) {
      CHECK(a.data()[i] == doctest::Approx(std::sqrt(s.alpha_bar(300)) * z.data()[i]).epsilon(1e-6));
      CHECK(b.data()[i] == doctest::Approx(std::sqrt(1 - s.alpha_bar(300)) * eps.data()[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(forward_diffuse(z, 0, eps, s), ContractError);
    CHECK_THROWS_AS(forward_diffuse(z, 1001, eps, s), ContractError);
  }

  TEST_CASE("forward diffusion keeps unit variance") {
    Rng rng(2, 0);
    const Shape shape{100000};
    const Tensor z = gaussian_noise(shape, rng);
    const Tensor eps = gaussian_noise(shape, rng);
    const Tensor zt = forward_diffuse(z, 500, eps, desk_schedule());
    double s = 0, s2 = 0;
    for (float v : zt.data()) {
      s += v;
      s2 += double(v) * v;
    }
    const double n = 100000, var = s2 / n - (s / n) * (s / n);
    CHECK(std::abs(var - 1.0) <= 0.02);
  }

  TEST_CASE("spaced steps examples") {
    const auto all = spaced_steps(1000, 1000);
    REQUIRE(all.size() == 1000);
    for (int i = 0; i < 1000; ++i) CHECK(all[static_cast<std::size_t>(i)] == 1000 - i);
    CHECK(spaced_steps(1000, 2) == std::vector<int>{1000, 1});
    const auto fifty = spaced_steps(1000, 50);
    REQUIRE(fifty.size() == 50);
    CHECK(fifty.front() == 1000);
    CHECK(fifty.back() == 1);
    for (std::size_t i = 1; i < fifty.size(); ++i) CHECK(fifty[i] < fifty[i - 1]);
    CHECK_THROWS_AS(spaced_steps(1000, 1001), ContractError);
  }

  TEST_CASE("retimed step variance follows consecutive retained alpha bars") {
    const auto& s = desk_schedule();
    const auto c = step_coefficients(s, 980, 960);
    const double ab = s.alpha_bar(980), abp = s.alpha_bar(960);
    CHECK(c.variance == doctest::Approx((1 - abp) / (1 - ab) * (1 - ab / abp)).epsilon(1e-12));
    CHECK(step_coefficients(s, 20, 0).variance == 0.0);
  }

  TEST_CASE("clean-latent estimate inverts forward diffusion") {
    Rng rng(3, 0);
    for (int t : {1, 250, 999, 1000}) {
      const Tensor z = oracle::random_tensor({1, 3, 8, 8}, rng);
      const Tensor eps = gaussian_noise(z.shape(), rng);
      const Tensor back = estimate_z0(forward_diffuse(z, t, eps, desk_schedule()), t, eps, desk_schedule());
      double worst = 0;
      for (std::size_t i = 0; i < z.numel(); ++i) worst = std::max(worst, double(std::abs(back.data()[i] - z.data()[i])));
      INFO("t = " << t);
      CHECK(worst <= 1e-5 / std::sqrt(desk_schedule().alpha_bar(t)));
    }
  }

  TEST_CASE("an oracle denoiser walks the full chain back to the source") {
    Rng rng(4, 0);
    const Tensor z = oracle::random_tensor({1, 3, 6, 6}, rng);
    for (int steps : {1000, 50}) {
      const Tensor out = ddpm_sample(oracle_eps(z, desk_schedule()), z.shape(), steps, desk_schedule(), 17);
      INFO(steps << " steps");
      CHECK(relative_error(out, z) <= 1e-3);
    }
  }

  TEST_CASE("final step is noise-free and steps are deterministic") {
    Rng rng(5, 0);
    const Tensor z = oracle::random_tensor({1, 3, 4, 4}, rng);
    const Tensor zt = oracle::random_tensor({1, 3, 4, 4}, rng);
    const EpsModel model = oracle_eps(z, desk_schedule());
    Rng r1(1, 1), r2(2, 2);
    const Tensor a = ddpm_step(model, zt, 21, 0, desk_schedule(), r1);
    const Tensor b = ddpm_step(model, zt, 21, 0, desk_schedule(), r2);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    Rng r3(3, 3), r4(3, 3), r5(4, 4);
    const Tensor c = ddpm_step(model, zt, 41, 21, desk_schedule(), r3);
    const Tensor d = ddpm_step(model, zt, 41, 21, desk_schedule(), r4);
    const Tensor e = ddpm_step(model, zt, 41, 21, desk_schedule(), r5);
    CHECK(std::equal(c.data().begin(), c.data().end(), d.data().begin()));
    CHECK_FALSE(std::equal(c.data().begin(), c.data().end(), e.data().begin()));
  }

  TEST_CASE("denoiser output matches its input shape") {
    const Denoiser net(small_config(), 1);
    Rng rng(6, 0);
    const Tensor x = oracle::random_tensor({2, 3, 16, 12}, rng);
    CHECK(net.forward(x, std::vector<int>{3, 900}).shape() == x.shape());
    CHECK_THROWS(net.forward(oracle::random_tensor({1, 3, 10, 12}, rng), 5));
  }

  TEST_CASE("a fresh conditioner leaves the base prediction untouched") {
    const Denoiser base(small_config(), 2);
    const Conditioner cond(base, 3);
    CHECK(cond.input_channels() == 6);
    Rng rng(7, 0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor zt = oracle::random_tensor({1, 3, 8, 8}, rng, -3, 3);
      const Tensor c = oracle::random_tensor({1, 3, 8, 8}, rng, -3, 3);
      const int t = static_cast<int>(rng.uniform_int(1, 1000));
      const Tensor a = base.forward(zt, t);
      const Tensor b = conditioned_eps(base, cond, zt, {t}, c);
      for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, double(std::abs(a.data()[i] - b.data()[i])));
    }
    CHECK(worst == 0.0);
  }

  TEST_CASE("conditioner channel contract") {
    const Denoiser base(small_config(), 3);
    CHECK_THROWS_AS(Conditioner(base, 0), ContractError);
    const Conditioner cond(base, 5);
    CHECK(cond.input_channels() == 8);
    Rng rng(8, 0);
    CHECK_THROWS_AS(conditioned_eps(base, cond, oracle::random_tensor({1, 3, 8, 8}, rng), {5},
                                    oracle::random_tensor({1, 3, 8, 8}, rng)),
                    DimensionError);
  }

  TEST_CASE("the prompt pathway is wired but never trained") {
    Denoiser net(small_config(), 4);
    for (const auto& p : net.parameters()) CHECK(p.tensor.impl() != net.context().impl());
    Rng rng(9, 0);
    const Tensor x = oracle::random_tensor({1, 3, 8, 8}, rng);
    const Tensor a = net.forward(x, 300);
    net.set_context(Tensor(net.context().shape(), 0.5f));
    const Tensor b = net.forward(x, 300);
    CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    CHECK_THROWS_AS(net.set_context(Tensor({1, 3}, 0.0f)), DimensionError);
  }

  TEST_CASE("finetuning freezes the base and starts where pretraining ended") {
    const auto data = tiny_dataset(6);
    const auto& s = desk_schedule();
    const LatentCodec codec;
    const RestorationNet restoration({}, 5);
    Denoiser base(small_config(), 6);
    DiffusionTrainOptions opt;
    opt.seed = 2;
    opt.iterations = 4;
    opt.batch = 2;
    {
      DiffusionTrainer pre(DiffusionMode::pretrain, base, nullptr, codec, nullptr, data, s, opt);
      while (!pre.done()) pre.step();
    }
    const auto base_hash = param_hash(base.parameters());
    Conditioner cond(base, 3);
    const auto cond_hash = param_hash(cond.parameters());

    float pre_loss = 0;
    {
      DiffusionTrainer pre(DiffusionMode::pretrain, base, nullptr, codec, nullptr, data, s, opt);
      DiffusionTrainer fine(DiffusionMode::finetune, base, &cond, codec, &restoration, data, s, opt);
      const auto pb = pre.batch(0), fb = fine.batch(0);
      CHECK(std::equal(pb.z_t.data().begin(), pb.z_t.data().end(), fb.z_t.data().begin()));
      CHECK(pb.t == fb.t);
      pre_loss = pre.evaluate(fb);
    }
    DiffusionTrainer fine(DiffusionMode::finetune, base, &cond, codec, &restoration, data, s, opt);
    const float first = fine.step();
    CHECK(first == pre_loss);
    while (!fine.done()) fine.step();
    CHECK(param_hash(base.parameters()) == base_hash);
    CHECK(param_hash(cond.parameters()) != cond_hash);
    for (float v : base.context().data()) CHECK(v == 0.0f);
  }

  TEST_CASE("diffusion training is deterministic and validates inputs") {
    const auto data = tiny_dataset(4);
    const LatentCodec codec;
    auto run = [&](std::size_t jobs) {
      Denoiser net(small_config(), 7);
      DiffusionTrainOptions opt;
      opt.seed = 3;
      opt.iterations = 3;
      opt.batch = 2;
      opt.jobs = jobs;
      return train_denoiser(DiffusionMode::pretrain, net, nullptr, codec, nullptr, data, desk_schedule(), opt);
    };
    CHECK(run(1) == run(3));
    Denoiser net(small_config(), 8);
    Conditioner cond(net, 3);
    CHECK_THROWS_AS(train_denoiser(DiffusionMode::finetune, net, &cond, codec, nullptr, data, desk_schedule(), {}),
                    ContractError);
    const std::vector<Image> none;
    CHECK_THROWS_AS(train_denoiser(DiffusionMode::pretrain, net, nullptr, codec, nullptr, none, desk_schedule(), {}),
                    ContractError);
  }

  TEST_CASE("identity codec is exact") {
    const LatentCodec codec;
    const auto img = tiny_dataset(1)[0];
    const Tensor z = codec.encode(img);
    const Tensor back = codec.decode(z);
    CHECK(from_tensor(back)[0] == img);
  }

  TEST_CASE("trained tiny-ae reconstructs held-out images") {
    DatasetSpec train_spec;
    train_spec.count = 64;
    train_spec.seed = 21;
    DatasetSpec held_spec = train_spec;
    held_spec.count = 16;
    held_spec.seed = 22;
    const auto train = synth_dataset(train_spec), held = synth_dataset(held_spec);
    LatentCodec codec(CodecKind::tiny_ae, 3, 8, 4);
    CHECK(codec.downsampling() == 4);
    CHECK(codec.encode(held[0]).shape() == Shape{1, 8, 8, 8});
    train_codec(codec, train, {});
    double mean = 0;
    for (const auto& img : held) {
      NoGradGuard guard;
      mean += psnr(from_tensor(codec.decode(codec.encode(img)))[0], img) / double(held.size());
    }
    MESSAGE("tiny-ae held-out psnr " << mean);
    CHECK(mean >= 25.0);
  }

  TEST_CASE("sampler manifest records the chain") {
    const auto text = format_sampler_manifest(desk_schedule(), spaced_steps(1000, 3), 9, 50.0);
    CHECK(text.find("1000") != std::string::npos);
    CHECK(text.find("seed") != std::string::npos);
  }
}
