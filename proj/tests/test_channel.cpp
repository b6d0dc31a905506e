#include <doctest.h>

#include <cmath>
#include <limits>

#include "semcom/channel.hpp"
#include "semcom/error.hpp"

using namespace semcom;

TEST_SUITE("channel") {
  TEST_CASE("noise variance follows the dB definition") {
    CHECK(channel::noise_variance(0.0) == doctest::Approx(1.0));
    CHECK(channel::noise_variance(10.0) == doctest::Approx(0.1));
    CHECK(channel::noise_variance(5.0) == doctest::Approx(std::pow(10.0, -0.5)));
    CHECK(channel::noise_variance(std::numeric_limits<double>::infinity()) == 0.0);
  }

  TEST_CASE("empirical noise power within 2% at the default SNR points") {
    channel::SymbolVector zeros{std::vector<double>(1'000'000, 0.0)};
    for (double snr : channel::snr_sweep_points()) {
      const auto out = channel::transmit(zeros, {snr, 99});
      const double ratio = out.mean_power() / std::pow(10.0, -snr / 10.0);
      CHECK(ratio == doctest::Approx(1.0).epsilon(0.02));
    }
  }

  TEST_CASE("noise mean is near zero") {
    channel::SymbolVector zeros{std::vector<double>(200'000, 0.0)};
    const auto out = channel::transmit(zeros, {0.0, 5});
    double mean = 0.0;
    for (double v : out.values) mean += v;
    mean /= static_cast<double>(out.length());
    // 4 standard errors of the sample mean
    CHECK(std::abs(mean) < 4.0 / std::sqrt(200'000.0));
  }

  TEST_CASE("same seed and stream reproduce bit-identical output") {
    channel::SymbolVector v{{0.5, -1.0, 2.0, 0.0}};
    CHECK(channel::transmit(v, {7.0, 3}, 1) == channel::transmit(v, {7.0, 3}, 1));
    CHECK_FALSE(channel::transmit(v, {7.0, 3}, 1) == channel::transmit(v, {7.0, 3}, 2));
    CHECK_FALSE(channel::transmit(v, {7.0, 3}) == channel::transmit(v, {7.0, 4}));
  }

  TEST_CASE("infinite SNR is noiseless") {
    channel::SymbolVector v{{0.5, -1.0, 2.0}};
    CHECK(channel::transmit(v, {channel::parse_snr_db("inf"), 1}) == v);
  }

  TEST_CASE("float and double paths draw the same noise") {
    channel::SymbolVector v{{0.0, 0.0, 0.0}};
    std::vector<float> f(3, 0.0f);
    channel::add_awgn(f, {9.0, 11}, 4);
    const auto d = channel::transmit(v, {9.0, 11}, 4);
    for (int i = 0; i < 3; ++i) CHECK(f[i] == doctest::Approx(d.values[i]).epsilon(1e-6));
  }

  TEST_CASE("power normalisation") {
    const auto n = channel::power_normalize({{3.0, 4.0}});
    CHECK(n.mean_power() == doctest::Approx(1.0));
    CHECK(n.values[0] / n.values[1] == doctest::Approx(0.75));
    CHECK_THROWS_AS(channel::power_normalize({{0.0, 0.0}}), Error);
  }

  TEST_CASE("SNR parsing and sweep points") {
    CHECK(std::isinf(channel::parse_snr_db("inf")));
    CHECK(channel::parse_snr_db("7.5") == 7.5);
    CHECK_THROWS_AS(channel::parse_snr_db("loud"), Error);
    CHECK(channel::snr_sweep_points() == std::vector<double>{5, 7, 9, 12});
    CHECK(channel::snr_sweep_points(std::vector<double>{3}) == std::vector<double>{3});
    CHECK_THROWS_AS(channel::snr_sweep_points(std::vector<double>{}), Error);
    CHECK(channel::format_snr_db(std::numeric_limits<double>::infinity()) == "inf");
  }
}
