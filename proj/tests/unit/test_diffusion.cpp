#include <cmath>

#include <doctest.h>

#include "advlab/diffusion.hpp"
#include "advlab/rng.hpp"
#include "fixtures.hpp"

using namespace advlab;

TEST_CASE("schedule endpoints, monotonicity and cumulative product") {
  const auto s = make_schedule(50, 1e-4, 0.05);
  CHECK(s.beta.size() == 51);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.beta[1] == 1e-4);
  CHECK(s.beta[50] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(s.alpha_bar[1] == 1.0 - s.beta[1]);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 50; ++t) {
    CHECK(s.beta[t] >= s.beta[t - 1]);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.alpha_bar[t] > 0.0);
    prod *= 1.0 - (1e-4 + (0.05 - 1e-4) * static_cast<double>(t - 1) / 49.0);
  }
  CHECK(std::abs(s.alpha_bar[50] - prod) < 1e-12);
}

TEST_CASE("invalid schedules are rejected") {
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), std::invalid_argument);
}

TEST_CASE("q_sample identity and zero-noise cases") {
  const auto s = make_schedule(50, 1e-4, 0.05);
  const auto x = fixtures::noise(100, 1);
  const auto z = fixtures::noise(100, 2, 1.0);
  CHECK(q_sample(x, 0, z, s) == x);
  const auto xt = q_sample(x, 20, std::vector<double>(100, 0.0), s);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(xt[i] == std::sqrt(s.alpha_bar[20]) * x[i]);
  CHECK_THROWS_AS(q_sample(x, 51, z, s), std::out_of_range);
  CHECK_THROWS_AS(q_sample(x, 5, std::vector<double>(3), s), ShapeError);
}

TEST_CASE("q_sample variance matches 1 - alpha_bar") {
  const auto s = make_schedule(50, 1e-4, 0.05);
  Rng rng(3);
  for (std::size_t t : {1u, 25u, 50u}) {
    const auto xt = q_sample(std::vector<double>(10000, 0.0), t, rng.normal_vector(10000), s);
    double m = 0.0, v = 0.0;
    for (double x : xt) m += x;
    m /= 1e4;
    for (double x : xt) v += (x - m) * (x - m);
    v /= 1e4;
    CHECK(std::abs(v / (1.0 - s.alpha_bar[t]) - 1.0) < 0.05);
  }
}

TEST_CASE("denoiser output shape and checkpoint shape checks") {
  Denoiser d(DenoiserConfig{}, 1);
  CHECK(d.predict_noise(fixtures::noise(300, 1), 7).size() == 300);
  DenoiserConfig other;
  other.channels = 16;
  CHECK_THROWS_AS(Denoiser(other, d.params()), ShapeError);
  DenoiserConfig bad;
  bad.dilations = {1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("denoiser gradient passes the finite-difference check") {
  const Denoiser d = Denoiser(DenoiserConfig{}, 2).frozen();
  auto f = [&](const Tensor& x) { auto e = d.predict_noise(x, 9); return sum(e * e); };
  CHECK(grad_check(f, Tensor::vector(fixtures::noise(64, 3))).max_rel_error < 1e-4);
}

TEST_CASE("predicting zero noise scores about one") {
  // The output layer of a fresh denoiser is scaled down, so its prediction is
  // near zero and the loss is close to E|eps|^2 / N = 1.
  const auto s = make_schedule(50, 1e-4, 0.05);
  const auto test = fixtures::corpus().split(Split::kTest);
  const double mse = noise_prediction_mse(Denoiser(DenoiserConfig{}, 0), test, s, 0);
  CHECK(mse == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("short training lowers held-out loss and is deterministic") {
  const auto s = make_schedule(50, 1e-4, 0.05);
  const auto& c = fixtures::corpus();
  const auto train = c.split(Split::kTrain);
  const auto test = c.split(Split::kTest);
  const std::vector<Utterance> held(test.begin(), test.begin() + 8);
  DenoiserTrainConfig tc;
  tc.steps = 60;
  tc.batch_size = 4;
  tc.crop = 400;
  tc.lr = 2e-3;
  Denoiser a(DenoiserConfig{}, 0), b(DenoiserConfig{}, 0);
  const double before = noise_prediction_mse(a, held, s, 5);
  const auto ha = train_denoiser(a, train, s, tc);
  train_denoiser(b, train, s, tc);
  CHECK(a.params() == b.params());
  for (double l : ha.step_loss) CHECK(std::isfinite(l));
  CHECK(noise_prediction_mse(a, held, s, 5) < before);
  CHECK_THROWS_AS(train_denoiser(a, {}, s, tc), std::invalid_argument);
}

TEST_CASE("purify: identity at zero, determinism, range, bounds") {
  const auto s = make_schedule(50, 1e-4, 0.05);
  const Denoiser d(DenoiserConfig{}, 4);
  const auto x = fixtures::corpus().split(Split::kTest)[0].samples;
  std::vector<double> head(x.begin(), x.begin() + 500);
  CHECK(purify(d, s, head, 0) == head);
  const auto a = purify(d, s, head, 5, {7, true}), b = purify(d, s, head, 5, {7, true});
  CHECK(a == b);
  CHECK(a != purify(d, s, head, 5, {8, true}));
  const auto det = purify(d, s, head, 5, {7, false});
  CHECK(det != a);
  for (double v : purify(d, s, head, 50, {1, true})) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.0);
  }
  CHECK_THROWS_AS(purify(d, s, head, 51), std::out_of_range);
}

TEST_CASE("reconstruction error follows from the noise prediction") {
  // With a perfect noise prediction x0 is recovered exactly; here we check the
  // closed form against a direct computation for an untrained net.
  const auto s = make_schedule(50, 1e-4, 0.05);
  const Denoiser d(DenoiserConfig{}, 5);
  const auto x = fixtures::noise(200, 6);
  const auto z = fixtures::noise(200, 7, 1.0);
  const auto xt = q_sample(x, 10, z, s);
  const auto eps = d.predict_noise(xt, 10);
  double want = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = (xt[i] - std::sqrt(1 - s.alpha_bar[10]) * eps[i]) / std::sqrt(s.alpha_bar[10]);
    want += (x[i] - x0) * (x[i] - x0);
  }
  CHECK(reconstruction_mse(d, s, x, 10, z) == doctest::Approx(want / 200.0).epsilon(1e-12));
}
