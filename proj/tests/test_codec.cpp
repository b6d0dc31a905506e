#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "semcom/codec.hpp"
#include "semcom/error.hpp"
#include "semcom/rng.hpp"

using namespace semcom;
using namespace semcom::codec;

namespace {

ImageTensor noise_image(int h, int w, std::uint64_t seed) {
  ImageTensor im(h, w, 3);
  CounterRng rng(seed);
  for (auto& v : im.values()) v = static_cast<float>(rng.uniform());
  return im;
}

PatchGrid labelled_grid(const std::vector<bool>& critical) {
  PatchGrid g;
  g.patch_size = 1;
  g.rows = 1;
  g.cols = static_cast<int>(critical.size());
  g.mask = BinaryMask(1, g.cols);
  for (int i = 0; i < g.cols; ++i) {
    g.labels.push_back(critical[i] ? PatchLabel::Critical : PatchLabel::Background);
    g.mask.set(0, i, critical[i]);
  }
  return g;
}

std::vector<int> priority_order(const std::vector<bool>& critical, const std::vector<double>& scores) {
  std::vector<int> order(critical.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (critical[a] != critical[b]) return static_cast<bool>(critical[a]);
    const double sa = scores.empty() ? 0.0 : scores[a];
    const double sb = scores.empty() ? 0.0 : scores[b];
    return sa > sb;
  });
  return order;
}

CodecModel small_model(bool mask_input = false, std::uint64_t seed = 3) {
  CodecConfig cfg;
  cfg.code_width = 16;
  cfg.hifi_hidden = {32};
  cfg.light_hidden = {32};
  cfg.mask_input = mask_input;
  cfg.seed = seed;
  return CodecModel(cfg);
}

}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("partition: full and empty masks") {
    const auto im = noise_image(16, 16, 1);
    CHECK(partition(im, BinaryMask(16, 16, true), 8).critical_count() == 4);
    CHECK(partition(im, BinaryMask(16, 16, false), 8).critical_count() == 0);
  }

  TEST_CASE("partition: one masked quadrant of a 4x4 image with 2x2 patches") {
    const auto im = noise_image(4, 4, 1);
    BinaryMask m(4, 4);
    for (int y = 2; y < 4; ++y)
      for (int x = 0; x < 2; ++x) m.set(y, x, true);
    const auto g = partition(im, m, 2);
    CHECK(g.critical_count() == 1);
    CHECK(g.critical(2));
    CHECK(g.critical_region() == m);
  }

  TEST_CASE("partition: exactly half covered goes critical, below half does not") {
    const auto im = noise_image(8, 8, 1);
    BinaryMask m(8, 8);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 8; ++x) m.set(y, x, true);
    CHECK(partition(im, m, 8).critical_count() == 1);
    m.set(0, 0, false);
    CHECK(partition(im, m, 8).critical_count() == 0);
    CHECK(partition(im, m, 8, 0.0).critical_count() == 1);
  }

  TEST_CASE("partition rejects indivisible geometry") {
    CHECK_THROWS_AS(partition(noise_image(10, 10, 1), BinaryMask(10, 10), 8), Error);
  }

  TEST_CASE("patch extract and insert are inverse") {
    const auto im = noise_image(16, 16, 2);
    ImageTensor copy(16, 16, 3);
    std::vector<float> buf(8 * 8 * 3);
    for (std::size_t i = 0; i < 4; ++i) {
      extract_patch(im, 8, i, buf);
      insert_patch(copy, 8, i, buf);
    }
    CHECK(copy == im);
  }

  TEST_CASE("attention: symmetric features give uniform scores, one patch gives 1") {
    nn::Matrix f = nn::Matrix::Ones(kPatchFeatureDim, 6);
    AttentionHead head(kPatchFeatureDim, 8, 4);
    for (double s : head.scores(f, query_embedding(f))) CHECK(s == doctest::Approx(1.0 / 6.0));
    nn::Matrix one = nn::Matrix::Random(kPatchFeatureDim, 1);
    CHECK(head.scores(one, query_embedding(one))[0] == doctest::Approx(1.0));
  }

  TEST_CASE("attention matches a scalar softmax(QK^T / sqrt d)") {
    nn::Matrix wq(2, 3), wk(2, 3), f(3, 3);
    wq << 0.5f, -1.0f, 0.25f, 1.0f, 0.0f, -0.5f;
    wk << 1.0f, 0.5f, 0.0f, -0.25f, 1.0f, 0.75f;
    f << 0.1f, 0.9f, 0.4f, 0.3f, 0.2f, 0.8f, 0.7f, 0.5f, 0.6f;
    nn::Vector q(3);
    q << 0.2f, 0.4f, 0.6f;
    const auto got = attention_scores(f, q, wq, wk);

    double qp[2], logits[3], z = 0.0;
    for (int r = 0; r < 2; ++r) {
      qp[r] = 0.0;
      for (int c = 0; c < 3; ++c) qp[r] += static_cast<double>(wq(r, c)) * q(c);
    }
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int r = 0; r < 2; ++r) {
        double k = 0.0;
        for (int c = 0; c < 3; ++c) k += static_cast<double>(wk(r, c)) * f(c, j);
        dot += k * qp[r];
      }
      logits[j] = dot / std::sqrt(2.0);
      z += std::exp(logits[j]);
    }
    for (int j = 0; j < 3; ++j) CHECK(got[j] == doctest::Approx(std::exp(logits[j]) / z).epsilon(1e-9));
    CHECK_THROWS_AS(attention_scores(f, q, wq, nn::Matrix(3, 3)), Error);
  }

  TEST_CASE("allocation: worked examples") {
    CHECK(allocate_bandwidth(labelled_grid({false, false, false, false}), 100, 1.0).per_patch_symbols ==
          std::vector<int>{25, 25, 25, 25});
    CHECK(allocate_bandwidth(labelled_grid({true, true, false, false}), 100, 4.0).per_patch_symbols ==
          std::vector<int>{40, 40, 10, 10});
    const auto p = allocate_bandwidth(labelled_grid({true, false, false}), 100, 2.33);
    CHECK(p.per_patch_symbols == std::vector<int>{54, 23, 23});
    CHECK(p.sum() == 100);
  }

  TEST_CASE("allocation: 2.33 example has the smallest ratio error of any integer plan") {
    double best = 1e9;
    std::vector<int> arg;
    for (int c = 1; c <= 98; ++c)
      for (int b1 = 1; c + b1 <= 99; ++b1) {
        const int b2 = 100 - c - b1;
        const double err = std::max(std::abs(static_cast<double>(c) / b1 - 2.33), std::abs(static_cast<double>(c) / b2 - 2.33));
        if (err < best - 1e-12) {
          best = err;
          arg = {c, b1, b2};
        }
      }
    CHECK(arg == std::vector<int>{54, 23, 23});
  }

  TEST_CASE("allocation agrees with an exhaustive search on small grids") {
    CounterRng rng(77);
    for (int n = 1; n <= 5; ++n)
      for (int trial = 0; trial < 6; ++trial) {
        std::vector<bool> critical(n);
        for (int i = 0; i < n; ++i) critical[i] = rng.uniform() < 0.5;
        std::vector<double> scores;
        if (trial % 2) {
          for (int i = 0; i < n; ++i) scores.push_back(std::floor(rng.uniform() * 3.0));
        }
        for (double w : {1.0, 2.33, 4.0})
          for (int total = n; total <= 60; ++total) {
            const auto got = allocate_bandwidth(labelled_grid(critical), total, w, scores).per_patch_symbols;
            const auto want = oracle::best_integer_plan(oracle::ideal_shares(critical, total, w), total,
                                                        priority_order(critical, scores));
            REQUIRE(got == want);
          }
      }
  }

  TEST_CASE("allocation: conservation and the integer-rounding ratio bound") {
    for (int nc = 1; nc <= 4; ++nc)
      for (int nb = 1; nb <= 4; ++nb) {
        std::vector<bool> critical(nc + nb, false);
        std::fill(critical.begin(), critical.begin() + nc, true);
        for (double w : {1.0, 2.33, 4.0})
          for (int total = nc + nb; total <= 200; ++total) {
            const auto plan = allocate_bandwidth(labelled_grid(critical), total, w);
            CHECK(plan.sum() == total);
            const int min_b = *std::min_element(plan.per_patch_symbols.begin() + nc, plan.per_patch_symbols.end());
            if (min_b < 4) continue;
            for (int i = 0; i < nc; ++i)
              for (int j = nc; j < nc + nb; ++j) {
                const double ratio = static_cast<double>(plan.per_patch_symbols[i]) / plan.per_patch_symbols[j];
                CHECK(std::abs(ratio - w) <= w / min_b + 1e-12);
              }
          }
      }
  }

  TEST_CASE("allocation errors") {
    CHECK_THROWS_AS(allocate_bandwidth(labelled_grid({true, false}), 1, 2.0), Error);
    CHECK_THROWS_AS(allocate_bandwidth(labelled_grid({true, false}), 10, 0.5), Error);
    const std::vector<double> bad{1.0};
    CHECK_THROWS_AS(allocate_bandwidth(labelled_grid({true, false}), 10, 2.0, bad), Error);
  }

  TEST_CASE("side information round-trips bit-exactly") {
    const auto im = noise_image(64, 64, 3);
    BinaryMask m(64, 64);
    for (int y = 10; y < 40; ++y)
      for (int x = 5; x < 33; ++x) m.set(y, x, true);
    const auto grid = partition(im, m, 8);
    const SideInfo side{64, 64, 3, grid, allocate_bandwidth(grid, 768, 4.0)};
    const auto bytes = serialize(side);
    CHECK(bytes[0] == 'S');
    CHECK(bytes[3] == '1');
    CHECK(deserialize(bytes) == side);
  }

  TEST_CASE("corrupt side information is rejected") {
    const auto im = noise_image(64, 64, 3);
    BinaryMask m(64, 64);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 32; ++x) m.set(y, x, true);
    const auto grid = partition(im, m, 8);
    const SideInfo side{64, 64, 3, grid, allocate_bandwidth(grid, 768, 4.0)};
    auto bytes = serialize(side);
    SUBCASE("bad magic") {
      bytes[0] = 'X';
      CHECK_THROWS_AS(deserialize(bytes), Error);
    }
    SUBCASE("truncated") {
      bytes.resize(bytes.size() - 3);
      CHECK_THROWS_AS(deserialize(bytes), Error);
    }
    SUBCASE("trailing bytes") {
      bytes.push_back(0);
      CHECK_THROWS_AS(deserialize(bytes), Error);
    }
    SUBCASE("shuffled budgets fail validation or length checks") {
      auto shuffled = side;
      std::reverse(shuffled.plan.per_patch_symbols.begin(), shuffled.plan.per_patch_symbols.end());
      auto model = small_model();
      CodecConfig cfg = model.config();
      cfg.code_width = 64;
      CodecModel wide(cfg);
      const auto enc = encode(im, grid, side.plan, wide);
      try {
        decode(enc.symbols, deserialize(serialize(shuffled)), wide);
        FAIL("expected CorruptSideInfo");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::CorruptSideInfo);
      }
      channel::SymbolVector shorter = enc.symbols;
      shorter.values.pop_back();
      CHECK_THROWS_AS(decode(shorter, side, wide), Error);
    }
  }

  TEST_CASE("encode produces exactly the planned number of unit-power symbols") {
    auto model = small_model();
    const auto im = noise_image(64, 64, 5);
    BinaryMask m(64, 64);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 24; ++x) m.set(y, x, true);
    const auto grid = partition(im, m, 8);
    const auto plan = allocate_bandwidth(grid, 512, 2.33);
    const auto enc = encode(im, grid, plan, model);
    CHECK(enc.symbols.length() == 512);
    CHECK(enc.symbols.mean_power() == doctest::Approx(1.0));
    const auto out = decode(enc.symbols, enc.side, model);
    CHECK(out.height() == 64);
    CHECK(out.channels() == 3);
    BudgetPlan too_wide = plan;
    too_wide.per_patch_symbols[0] = 17;
    too_wide.total = 10000;
    CHECK_THROWS_AS(encode(im, grid, too_wide, model), Error);
  }

  TEST_CASE("path exclusivity") {
    auto model = small_model(true);
    const auto im = noise_image(64, 64, 6);
    const auto background = uniform_grid(64, 64, 8, PatchLabel::Background);
    const auto critical = uniform_grid(64, 64, 8, PatchLabel::Critical);
    const auto plan_b = allocate_bandwidth(background, 640, 1.0);
    const auto plan_c = allocate_bandwidth(critical, 640, 1.0);
    const auto enc_b = encode(im, background, plan_b, model);
    const auto enc_c = encode(im, critical, plan_c, model);
    const auto ref_b = decode(enc_b.symbols, enc_b.side, model);
    const auto ref_c = decode(enc_c.symbols, enc_c.side, model);

    for (auto* p : model.path(Path::Hifi).encoder.params()) p->value.array() += 0.1f;
    for (auto* p : model.path(Path::Hifi).decoder.params()) p->value.array() -= 0.1f;
    CHECK(decode(encode(im, background, plan_b, model).symbols, enc_b.side, model) == ref_b);
    CHECK_FALSE(decode(encode(im, critical, plan_c, model).symbols, enc_c.side, model) == ref_c);

    auto fresh = small_model(true);
    for (auto* p : fresh.path(Path::Light).decoder.params()) p->value.array() *= 0.5f;
    CHECK(decode(encode(im, critical, plan_c, fresh).symbols, enc_c.side, fresh) == ref_c);
  }

  TEST_CASE("weight 1 with identical paths and no mask input ignores the mask") {
    auto model = small_model(false);
    auto light = model.path(Path::Light).encoder.params();
    auto hifi = model.path(Path::Hifi).encoder.params();
    for (std::size_t i = 0; i < light.size(); ++i) light[i]->value = hifi[i]->value;
    light = model.path(Path::Light).decoder.params();
    hifi = model.path(Path::Hifi).decoder.params();
    for (std::size_t i = 0; i < light.size(); ++i) light[i]->value = hifi[i]->value;

    const auto im = noise_image(64, 64, 8);
    BinaryMask a(64, 64), b(64, 64);
    for (int y = 0; y < 30; ++y)
      for (int x = 0; x < 30; ++x) a.set(y, x, true);
    for (int y = 20; y < 64; ++y)
      for (int x = 40; x < 64; ++x) b.set(y, x, true);
    auto run = [&](const BinaryMask& m) {
      const auto g = partition(im, m, 8);
      const auto enc = encode(im, g, allocate_bandwidth(g, 768, 1.0), model);
      return decode(enc.symbols, enc.side, model);
    };
    // batch composition differs between the two masks, so allow GEMM rounding
    const auto ra = run(a), rb = run(b);
    float worst = 0.0f;
    for (std::size_t i = 0; i < ra.size(); ++i) worst = std::max(worst, std::abs(ra.values()[i] - rb.values()[i]));
    CHECK(worst < 1e-5f);
  }

  TEST_CASE("the high-fidelity path is the larger network") {
    CodecModel model{CodecConfig{}};
    CHECK(model.parameter_count(Path::Hifi) > model.parameter_count(Path::Light));
  }
}
