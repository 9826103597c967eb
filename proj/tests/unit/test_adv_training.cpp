#include <cmath>

#include <doctest.h>

#include "advlab/adv_training.hpp"
#include "fixtures.hpp"

using namespace advlab;

TEST_CASE("adversarial batch doubles the batch and keeps source labels") {
  const auto& t = fixtures::trained();
  const auto test = fixtures::corpus().split(Split::kTest);
  AttackSettings s;
  s.pgd.iterations = 3;
  const std::vector<Utterance> one(test.begin(), test.begin() + 1);
  const auto b1 = make_adv_batch(t.model, one, t.centroids, s, 0);
  REQUIRE(b1.size() == 2);
  CHECK(b1[0].label == one[0].speaker);
  CHECK(b1[1].label == one[0].speaker);

  const std::vector<Utterance> four(test.begin(), test.begin() + 4);
  const auto b4 = make_adv_batch(t.model, four, t.centroids, s, 1);
  REQUIRE(b4.size() == 8);
  std::size_t adv = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b4[i].adversarial);
    CHECK_FALSE(b4[4 + i].adversarial);
    CHECK(b4[i].label == four[i].speaker);
    CHECK(b4[4 + i].label == four[i].speaker);
    CHECK(b4[4 + i].samples == four[i].samples);
    const double eps = 0.05 * peak_abs(four[i].samples);
    for (std::size_t k = 0; k < four[i].samples.size(); ++k) {
      const double d = b4[i].samples[k] - four[i].samples[k];
      adv += std::abs(d) > eps + 1e-15 || std::abs(b4[i].samples[k]) > 1.0;
    }
  }
  CHECK(adv == 0);
}

TEST_CASE("fine-tuning is deterministic given the seed") {
  const auto& t = fixtures::trained();
  const auto& c = fixtures::corpus();
  const auto train = c.split(Split::kTrain);
  const std::vector<Utterance> sub(train.begin(), train.begin() + 8);
  AdvTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.attack.pgd.iterations = 2;
  EmbeddingModel a = t.model, b = t.model;
  const auto ha = adversarial_finetune(a, sub, c.split(Split::kEnroll), cfg);
  const auto hb = adversarial_finetune(b, sub, c.split(Split::kEnroll), cfg);
  CHECK(a.params() == b.params());
  CHECK(ha.epoch_loss == hb.epoch_loss);
  REQUIRE(ha.epoch_loss.size() == 1);
  CHECK(std::isfinite(ha.epoch_loss[0]));
  CHECK_FALSE(a.params() == t.model.params());
}

TEST_CASE("invalid fine-tuning configs are rejected") {
  AdvTrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.adv_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
