#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "advlab/features.hpp"

using namespace advlab;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed, double amp = 0.5) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

}  // namespace

TEST_CASE("constant signal frames equal the Hamming window") {
  FeatureExtractor fe(FeatureConfig{});
  auto frames = fe.frame_and_window(Tensor::vector(std::vector<double>(440, 1.0)));
  const auto w = hamming_window(200);
  REQUIRE(frames.shape() == Shape{4, 200});
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t i = 0; i < 200; ++i) CHECK(frames.at(f * 200 + i) == w[i]);
}

TEST_CASE("frame count boundaries and shape law") {
  FeatureConfig cfg;
  FeatureExtractor fe(cfg);
  CHECK(fe.frame_and_window(Tensor::vector(noise(200, 1))).dim(0) == 1);
  CHECK(fe.frame_and_window(Tensor::vector(noise(280, 1))).dim(0) == 2);
  CHECK(fe.frame_and_window(Tensor::vector(noise(279, 1))).dim(0) == 1);
  for (std::size_t len : {200u, 333u, 8000u}) CHECK(cfg.num_frames(len) == (len - 200) / 80 + 1);
  CHECK_THROWS_AS(fe.frame_and_window(Tensor::vector(noise(199, 1))), ShapeError);
}

TEST_CASE("frame i covers samples from i*hop") {
  FeatureExtractor fe(FeatureConfig{});
  std::vector<double> ramp(400);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i) / 400.0;
  auto frames = fe.frame_and_window(Tensor::vector(ramp));
  const auto w = hamming_window(200);
  CHECK(frames.at(2 * 200 + 10) == doctest::Approx(ramp[160 + 10] * w[10]).epsilon(1e-15));
}

TEST_CASE("zero frame has zero magnitude") {
  FeatureExtractor fe(FeatureConfig{});
  for (double v : fe.dft_magnitude(Tensor::zeros({2, 200})).to_vector()) CHECK(v == 0.0);
}

TEST_CASE("magnitude spectrum matches a direct DFT summation") {
  FeatureConfig cfg;
  FeatureExtractor fe(cfg);
  const auto x = noise(200, 2);
  const auto mag = fe.dft_magnitude(Tensor({1, 200}, x)).to_vector();
  for (std::size_t k = 0; k < cfg.num_bins(); ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < 200; ++n) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * n) / 256.0;
      re += x[n] * std::cos(ang);
      im -= x[n] * std::sin(ang);
    }
    CHECK(mag[k] == doctest::Approx(std::hypot(re, im)).epsilon(1e-10));
  }
}

TEST_CASE("bin-centered cosine concentrates energy at its bin") {
  FeatureExtractor fe(FeatureConfig{});
  const std::size_t bin = 20;
  std::vector<double> x(200);
  for (std::size_t n = 0; n < 200; ++n) x[n] = std::cos(2.0 * std::numbers::pi * bin * n / 256.0);
  const auto mag = fe.dft_magnitude(Tensor({1, 200}, x)).to_vector();
  const auto peak = std::max_element(mag.begin(), mag.end()) - mag.begin();
  CHECK(peak == static_cast<std::ptrdiff_t>(bin));
}

TEST_CASE("Parseval relation on zero-padded frames") {
  FeatureConfig cfg;
  FeatureExtractor fe(cfg);
  const auto x = noise(200, 3);
  const auto p = fe.power_spectrum(Tensor({1, 200}, x)).to_vector();
  // Full spectrum energy from the one-sided half: DC and Nyquist once, the rest twice.
  double spec = p[0] + p[128];
  for (std::size_t k = 1; k < 128; ++k) spec += 2.0 * p[k];
  double time = 0.0;
  for (double v : x) time += v * v;
  CHECK(spec / 256.0 == doctest::Approx(time).epsilon(1e-8));
}

TEST_CASE("mel filterbank shape, positivity and ordering") {
  FeatureConfig cfg;
  const auto m = mel_matrix(cfg);
  REQUIRE(m.shape() == Shape{40, 129});
  const auto pts = mel_bin_points(cfg);
  for (std::size_t r = 0; r < 40; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 129; ++k) {
      CHECK(m.at(r * 129 + k) >= 0.0);
      s += m.at(r * 129 + k);
    }
    CHECK(s > 0.0);
    CHECK(m.at(r * 129 + pts[r + 1]) == 1.0);
    CHECK(pts[r] < pts[r + 1]);
  }
}

TEST_CASE("mel center bin spot check") {
  FeatureConfig cfg;
  const auto pts = mel_bin_points(cfg);
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double lo = mel(50.0), hi = mel(4000.0);
  const std::size_t i = 21;
  const double center_hz = hz(lo + (hi - lo) * i / 41.0);
  CHECK(pts[i] == static_cast<std::size_t>(std::lround(center_hz * 256.0 / 8000.0)));
}

TEST_CASE("too many mels for the FFT resolution is rejected") {
  FeatureConfig cfg;
  cfg.n_mels = 120;
  CHECK_THROWS_AS(mel_matrix(cfg), std::invalid_argument);
}

TEST_CASE("invalid feature configs are rejected") {
  FeatureConfig cfg;
  cfg.frame_len = 300;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.fmax = 5000.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.n_mels = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero signal hits the log floor") {
  FeatureExtractor fe(FeatureConfig{});
  for (double v : fe.log_mel(std::vector<double>(400, 0.0))) CHECK(v == std::log(kLogMelFloor));
}

TEST_CASE("doubling amplitude quadruples every mel energy") {
  FeatureExtractor fe(FeatureConfig{});
  auto x = noise(600, 4);
  auto y = x;
  for (auto& v : y) v *= 2.0;
  const auto a = fe.log_mel(x), b = fe.log_mel(y);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::exp(b[i]) - kLogMelFloor == doctest::Approx(4.0 * (std::exp(a[i]) - kLogMelFloor)).epsilon(1e-9));
}

TEST_CASE("log-mel gradient passes the finite-difference check") {
  FeatureExtractor fe(FeatureConfig{});
  auto f = [&](const Tensor& x) { return scale(sum(fe.log_mel(x)), 1e-2); };
  CHECK(grad_check(f, Tensor::vector(noise(360, 5))).max_rel_error < 1e-4);
}

TEST_CASE("log-mel is deterministic") {
  FeatureExtractor fe(FeatureConfig{});
  const auto x = noise(800, 6);
  CHECK(fe.log_mel(x) == fe.log_mel(x));
}
