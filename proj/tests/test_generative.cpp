#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "semcom/error.hpp"
#include "semcom/generative.hpp"
#include "semcom/rng.hpp"
#include "semcom/synthetic.hpp"

using namespace semcom;
using namespace semcom::generative;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

LatentFeature latent(int h, int w, int d, std::uint64_t seed) {
  LatentFeature z{h, w, d, {}, 1, kInf, 64 * 64 * 3};
  CounterRng rng(seed);
  for (int i = 0; i < h * w * d; ++i) z.values.push_back(static_cast<float>(rng.normal_at(i)));
  return z;
}

nn::Matrix random_latents(int rows, int cols, std::uint64_t seed) {
  nn::Matrix m(rows, cols);
  CounterRng rng(seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal_at(i));
  return m;
}

GenerativeConfig tiny_config(Method method) {
  GenerativeConfig cfg;
  cfg.method = method;
  cfg.steps = 60;
  cfg.batch = 16;
  cfg.seed = 4;
  cfg.head.hidden = 64;
  cfg.head.variance_hidden = 32;
  return cfg;
}

}  // namespace

TEST_SUITE("generative") {
  TEST_CASE("compress_latent: identity, pooling by two and the 1.3% operating point") {
    const auto z = latent(8, 8, 4, 1);
    const auto same = compress_latent(z, 1.0);
    CHECK(same.values == z.values);
    CHECK(same.compression_ratio() == doctest::Approx(256.0 / 12288.0));

    const auto half = compress_latent(z, 0.01);
    CHECK(half.height == 4);
    CHECK(half.size() == 64);
    CHECK(half.scale_factor == 2);
    CHECK(half.compression_ratio() == doctest::Approx(64.0 / 12288.0));
    double manual = 0.0;
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) manual += z.at(y, x, 1);
    CHECK(half.at(0, 0, 1) == doctest::Approx(manual / 4.0));

    const auto target = compress_latent(z, 0.013);
    CHECK(target.compression_ratio() <= 0.013);
    CHECK(target.height == 4);

    try {
      compress_latent(z, 1e-5);
      FAIL("expected RatioUnachievable");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::RatioUnachievable);
    }
    CHECK_THROWS_AS(compress_latent(z, 0.0), Error);
  }

  TEST_CASE("noise schedules must decrease inside (0, 1)") {
    const auto s = NoiseSchedule::linear(100);
    CHECK(s.timesteps() == 100);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(100) < s.alpha_bar(1));
    CHECK_THROWS_AS(NoiseSchedule({0.9, 0.95}), Error);
    CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5}), Error);
    CHECK_THROWS_AS(NoiseSchedule({}), Error);
  }

  TEST_CASE("snr_to_timestep: limits, brute force and monotonicity") {
    const auto sched = NoiseSchedule::linear(100);
    CHECK(snr_to_timestep(kInf, sched) == 1);
    CHECK(snr_to_timestep(-kInf, sched) == 100);

    const auto small = NoiseSchedule::linear(10, 0.05, 0.4);
    for (double snr : {-3.0, 0.0, 2.5, 7.0}) {
      int best = 1;
      double err = 1e300;
      for (int t = 1; t <= 10; ++t) {
        const double a = small.alpha_bar(t);
        const double e = std::abs((1.0 - a) / a - std::pow(10.0, -snr / 10.0));
        if (e < err) {
          err = e;
          best = t;
        }
      }
      CHECK(snr_to_timestep(snr, small) == best);
    }

    int prev = 100;
    for (double snr = -10.0; snr <= 40.0; snr += 0.25) {
      const int t = snr_to_timestep(snr, sched);
      CHECK(t <= prev);
      prev = t;
    }
  }

  TEST_CASE("gaussian KL: zero for identical distributions, hand value") {
    CHECK(gaussian_kl(0.3, std::log(0.2), 0.3, 0.2) == doctest::Approx(0.0));
    CHECK(gaussian_kl(0.0, 0.0, 0.0, 2.0) == doctest::Approx(0.5 * (0.5 + std::log(2.0) - 1.0)).epsilon(1e-12));
    CHECK(gaussian_kl(0.0, 0.0, 0.0, 2.0) == doctest::Approx(0.0966).epsilon(1e-3));
  }

  TEST_CASE("guidance loss matches a scalar oracle on 100 instances") {
    const auto sched = NoiseSchedule::linear(100);
    CounterRng rng(13);
    std::uint64_t k = 0;
    for (int inst = 0; inst < 100; ++inst) {
      const int n = 1 + static_cast<int>(rng.below(20));
      const int t = 1 + static_cast<int>(rng.below(100));
      std::vector<double> mu(n), lv(n), z(n);
      for (int i = 0; i < n; ++i) {
        mu[i] = rng.normal_at(k++);
        lv[i] = rng.normal_at(k++) - 1.0;
        z[i] = rng.normal_at(k++);
      }
      const double a = sched.alpha_bar(t);
      double want = 0.0;
      for (int i = 0; i < n; ++i)
        want += oracle::scalar_kl(mu[i], std::exp(lv[i] / 2.0), std::sqrt(a) * z[i], std::sqrt(1.0 - a));
      want /= n;
      const double got = guidance_loss(mu, lv, z, t, sched);
      CHECK(std::abs(got - want) <= 1e-6);
      CHECK(got >= 0.0);
    }
  }

  TEST_CASE("guidance loss is zero at the forward-process marginal") {
    const auto sched = NoiseSchedule::linear(100);
    const int t = 30;
    const double a = sched.alpha_bar(t);
    std::vector<double> z{0.5, -1.0, 2.0}, mu, lv;
    for (double v : z) {
      mu.push_back(std::sqrt(a) * v);
      lv.push_back(std::log(1.0 - a));
    }
    CHECK(guidance_loss(mu, lv, z, t, sched) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(guidance_loss(mu, lv, z, 0, sched), Error);
  }

  TEST_CASE("guidance loss gradients match central differences") {
    const auto sched = NoiseSchedule::linear(100);
    CounterRng rng(17);
    for (int inst = 0; inst < 10; ++inst) {
      const int n = 6, t = 5 + 9 * inst;
      std::vector<double> mu(n), lv(n), z(n), dmu(n), dlv(n);
      for (int i = 0; i < n; ++i) {
        mu[i] = rng.normal();
        lv[i] = rng.normal() - 1.0;
        z[i] = rng.normal();
      }
      guidance_loss_grad(mu, lv, z, t, sched, dmu, dlv);
      const double h = 1e-5;
      for (int i = 0; i < n; ++i) {
        for (auto* v : {&mu, &lv}) {
          const double orig = (*v)[i];
          (*v)[i] = orig + h;
          const double hi = guidance_loss(mu, lv, z, t, sched);
          (*v)[i] = orig - h;
          const double lo = guidance_loss(mu, lv, z, t, sched);
          (*v)[i] = orig;
          const double fd = (hi - lo) / (2 * h);
          const double an = v == &mu ? dmu[i] : dlv[i];
          CHECK(std::abs(an - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
        }
      }
    }
  }

  TEST_CASE("head loss gradients match finite differences and one step descends") {
    const auto sched = NoiseSchedule::linear(100);
    for (Method m : {Method::Full, Method::VaeOnly, Method::DirectMse}) {
      CAPTURE(method_name(m));
      auto cfg = tiny_config(m);
      VaeHeadConfig hc;
      hc.input_dim = 6;
      hc.latent_dim = 5;
      hc.hidden = 12;
      hc.variance_hidden = 7;
      hc.linear = m == Method::DirectMse;
      hc.seed = 2;
      VaeHead head(hc);
      const nn::Matrix y = random_latents(6, 4, 1);
      const nn::Matrix z = random_latents(5, 4, 2);
      const std::vector<double> snr{5.0, 7.5, 9.0, 12.0};
      const CounterRng eps(3, 1);

      for (auto* p : head.params()) p->grad.setZero();
      const double before = head_loss(head, cfg, sched, y, snr, z, eps, true).total;
      int checked = 0;
      for (auto* p : head.params()) {
        Eigen::Index idx = 0;
        Eigen::Map<const Eigen::VectorXf>(p->grad.data(), p->grad.size()).cwiseAbs().maxCoeff(&idx);
        const float orig = p->value.data()[idx];
        const float h = 1e-2f;
        p->value.data()[idx] = orig + h;
        const double hi = head_loss(head, cfg, sched, y, snr, z, eps, false).total;
        p->value.data()[idx] = orig - h;
        const double lo = head_loss(head, cfg, sched, y, snr, z, eps, false).total;
        p->value.data()[idx] = orig;
        const double fd = (hi - lo) / (2.0 * h);
        if (std::abs(fd) < 1e-5) continue;
        CHECK(std::abs(p->grad.data()[idx] - fd) <= 2e-2 * std::abs(fd));
        ++checked;
      }
      CHECK(checked >= 2);

      for (auto* p : head.params()) p->value -= 1e-3f * p->grad;
      CHECK(head_loss(head, cfg, sched, y, snr, z, eps, false).total < before);
    }
  }

  TEST_CASE("the VAE-only ablation drops the guidance term") {
    CHECK(tiny_config(Method::VaeOnly).effective_lambda() == 0.0);
    CHECK(tiny_config(Method::DirectMse).effective_lambda() == 0.0);
    CHECK(tiny_config(Method::Full).effective_lambda() > 0.0);
    CHECK(parse_method("generative_full") == Method::Full);
    CHECK_FALSE(parse_method("cddm"));
  }

  TEST_CASE("trained head: sampling hooks, determinism, SNR sensitivity and normality") {
    const auto sched = NoiseSchedule::linear(100);
    const nn::Matrix latents = random_latents(256, 64, 9);
    auto result = train_generative(tiny_config(Method::Full), latents, 8, 8, 4, sched);
    CHECK(result.losses.back().total < result.losses.front().total);
    auto& head = result.head;

    LatentFeature rx{4, 4, 4, std::vector<float>(64), 2, 9.0, 12288};
    CounterRng rng(1);
    for (auto& v : rx.values) v = static_cast<float>(rng.normal());

    const auto a = vae_reconstruct(rx, 9.0, head, 11);
    const auto b = vae_reconstruct(rx, 9.0, head, 11);
    CHECK(a.sample == b.sample);
    const auto c = vae_reconstruct(rx, 5.0, head, 11);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.log_var.size(); ++i)
      max_diff = std::max(max_diff, std::abs(static_cast<double>(a.log_var[i]) - c.log_var[i]));
    CHECK(max_diff > 1e-6);
    for (float lv : a.log_var) CHECK(std::isfinite(lv));

    head.set_log_var_override(-std::numeric_limits<float>::infinity());
    const auto exact = vae_reconstruct(rx, 9.0, head, 11);
    CHECK(exact.sample == exact.mu);
    head.set_log_var_override(std::nullopt);

    std::vector<double> standardized;
    for (std::uint64_t seed = 0; standardized.size() < 10000; ++seed) {
      const auto out = vae_reconstruct(rx, 7.0, head, seed);
      for (std::size_t i = 0; i < out.sample.size() && standardized.size() < 10000; ++i)
        standardized.push_back((static_cast<double>(out.sample[i]) - out.mu[i]) / std::exp(out.log_var[i] / 2.0));
    }
    const auto ks = oracle::ks_test(standardized, oracle::standard_normal_cdf);
    CHECK(ks.p_value > 0.01);

    LatentFeature wrong{2, 2, 4, std::vector<float>(16), 4, 9.0, 12288};
    CHECK_THROWS_AS(vae_reconstruct(wrong, 9.0, head, 1), Error);
  }

  TEST_CASE("KS oracle rejects a clearly non-normal sample") {
    std::vector<double> uniform;
    CounterRng rng(5);
    for (int i = 0; i < 10000; ++i) uniform.push_back(rng.uniform(-1.7, 1.7));
    CHECK(oracle::ks_test(uniform, oracle::standard_normal_cdf).p_value < 1e-6);
  }

  TEST_CASE("reverse_denoise: identity at step 0, NoBackbone when untrained") {
    const auto sched = NoiseSchedule::linear(100);
    const auto z = latent(8, 8, 4, 3);
    CHECK(reverse_denoise(z, 0, sched, nullptr).values == z.values);
    Denoiser untrained;
    try {
      reverse_denoise(z, 10, sched, &untrained);
      FAIL("expected NoBackbone");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NoBackbone);
    }
  }

  TEST_CASE("prompt vocabulary") {
    CHECK(prompt_class(std::nullopt) == 0);
    CHECK(prompt_class(std::string("circle")) == 1);
    CHECK(prompt_class(std::string("a big triangle")) == 3);
    CHECK_THROWS_AS(prompt_class(std::string("hexagon")), Error);
  }

  TEST_CASE("a small trained backbone denoises forward-process latents") {
    synthetic::SceneOptions opts;
    opts.max_shapes = 1;
    const auto scenes = synthetic::generate_synthetic(1064, 19, opts);
    std::vector<ImageTensor> images;
    std::vector<int> labels;
    for (const auto& s : scenes) {
      images.push_back(s.image);
      labels.push_back(static_cast<int>(s.shape) + 1);
    }
    AutoencoderConfig ac;
    ac.seed = 1;
    LatentAutoencoder ae(ac);
    ae.train(images, 600, 32, 2e-3, 1);
    std::vector<const ImageTensor*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    const nn::Matrix lat = ae.encode_batch(ptrs);

    const auto sched = NoiseSchedule::linear(100);
    BackboneConfig bc;
    bc.seed = 2;
    Denoiser backbone(bc);
    backbone.train(lat.leftCols(1000), std::span<const int>(labels).first(1000), sched, 3000, 64, 1e-3, 0.15, 3);
    REQUIRE(backbone.ready());

    const int t_star = snr_to_timestep(5.0, sched);
    const double a = sched.alpha_bar(t_star);
    CounterRng noise(8);
    double before = 0.0, after = 0.0;
    for (int j = 0; j < 64; ++j) {
      const Eigen::Index col = 1000 + j;
      LatentFeature zt{8, 8, 4, std::vector<float>(256), 1, 5.0, 12288};
      for (int i = 0; i < 256; ++i) {
        zt.values[i] = static_cast<float>(std::sqrt(a) * lat(i, col) + std::sqrt(1.0 - a) * noise.normal_at(j * 256 + i));
      }
      const auto out = reverse_denoise(zt, t_star, sched, &backbone);
      for (int i = 0; i < 256; ++i) {
        before += std::pow(zt.values[i] - lat(i, col), 2);
        after += std::pow(out.values[i] - lat(i, col), 2);
      }
    }
    CHECK(after < before);
  }
}
