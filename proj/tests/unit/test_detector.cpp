#include <algorithm>
#include <doctest.h>

#include "advlab/attacks.hpp"
#include "advlab/detector.hpp"
#include "fixtures.hpp"

using namespace advlab;

namespace {

// Clean train utterances and their loud-noise-perturbed copies: an easy,
// cheap stand-in for adversarial audio.
void toy_sets(std::vector<std::vector<double>>& clean, std::vector<std::vector<double>>& adv) {
  const auto train = fixtures::corpus().split(Split::kTrain);
  for (std::size_t i = 0; i < 40; ++i) {
    clean.push_back(train[i].samples);
    auto x = train[i].samples;
    const auto n = fixtures::noise(x.size(), 100 + i, 0.045);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k] + n[k], -1.0, 1.0);
    adv.push_back(std::move(x));
  }
}

}  // namespace

TEST_CASE("detector needs exactly two classes") {
  EncoderConfig c = default_detector_config();
  c.n_speakers = 3;
  CHECK_THROWS_AS(Detector(EmbeddingModel(c, FeatureConfig{}, 0)), std::invalid_argument);
}

TEST_CASE("untrained detector is near chance and scores are probabilities") {
  std::vector<std::vector<double>> clean, adv;
  toy_sets(clean, adv);
  const Detector d(default_detector_config(), FeatureConfig{}, 0);
  const double acc = detector_accuracy(d, clean, adv);
  CHECK(acc >= 25.0);
  CHECK(acc <= 75.0);
  for (const auto& x : clean) {
    const auto r = d.detect(x);
    CHECK(r.score >= 0.0);
    CHECK(r.score <= 1.0);
    CHECK((r.label == DetectLabel::kAdversarial) == (r.score > 0.5));
  }
}

TEST_CASE("detector training separates the classes and is deterministic") {
  std::vector<std::vector<double>> clean, adv;
  toy_sets(clean, adv);
  DetectorTrainConfig cfg;
  cfg.epochs = 4;
  Detector a(default_detector_config(), FeatureConfig{}, 1), b(default_detector_config(), FeatureConfig{}, 1);
  const auto ra = train_detector(a, clean, adv, cfg);
  const auto rb = train_detector(b, clean, adv, cfg);
  CHECK(a.model().params() == b.model().params());
  CHECK(ra.holdout_accuracy == rb.holdout_accuracy);
  CHECK(ra.holdout_size == 8);
  CHECK(a.detect(adv[0]).label == DetectLabel::kAdversarial);
  CHECK(a.detect(clean[0]).label == DetectLabel::kClean);
  CHECK_THROWS_AS(train_detector(a, clean, {}, cfg), std::invalid_argument);
}

TEST_CASE("gating passes clean-classified audio through byte-identically") {
  std::vector<std::vector<double>> clean, adv;
  toy_sets(clean, adv);
  Detector d(default_detector_config(), FeatureConfig{}, 1);
  DetectorTrainConfig cfg;
  cfg.epochs = 4;
  train_detector(d, clean, adv, cfg);
  const auto s = make_schedule(50, 1e-4, 0.05);
  const Denoiser den(DenoiserConfig{}, 0);
  std::size_t passed = 0, purified = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto* x : {&clean[i], &adv[i]}) {
      const auto out = gated_purify(d, den, s, *x, 3, {9, true});
      if (d.detect(*x).label == DetectLabel::kClean) {
        CHECK(out == *x);
        ++passed;
      } else {
        CHECK(out == purify(den, s, *x, 3, {9, true}));
        ++purified;
      }
    }
  }
  CHECK(passed > 0);
  CHECK(purified > 0);
}
