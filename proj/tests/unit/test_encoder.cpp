#include <cmath>
#include <random>

#include <doctest.h>

#include "advlab/encoder.hpp"
#include "advlab/metrics.hpp"
#include "advlab/synth.hpp"

using namespace advlab;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed, double amp = 0.3) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

const Corpus& small_corpus() {
  static const Corpus c = make_corpus(20, 10, 0);
  return c;
}

}  // namespace

TEST_CASE("embedding is deterministic and finite") {
  EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 1);
  const auto x = noise(2000, 1);
  const auto a = m.embed(x), b = m.embed(x);
  CHECK(a == b);
  CHECK(a.size() == 32);
  for (double v : a) CHECK(std::isfinite(v));
}

TEST_CASE("constant input gives finite embeddings") {
  EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 1);
  for (double v : m.embed(std::vector<double>(1000, 0.0))) CHECK(std::isfinite(v));
}

TEST_CASE("too-short input is rejected") {
  EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 1);
  CHECK(m.min_samples() == 200 + 3 * 80);
  CHECK_THROWS_AS(m.embed(noise(m.min_samples() - 1, 2)), ShapeError);
  CHECK_NOTHROW(m.embed(noise(m.min_samples(), 2)));
}

TEST_CASE("cosine to a fixed vector is differentiable end to end") {
  const EmbeddingModel m = EmbeddingModel(EncoderConfig{}, FeatureConfig{}, 3).frozen();
  const auto e = Tensor::vector(noise(32, 4, 1.0));
  auto f = [&](const Tensor& x) { return cosine_similarity(m.embed(x), e); };
  CHECK(grad_check(f, Tensor::vector(noise(800, 5))).max_rel_error < 1e-4);
}

TEST_CASE("zero margin reduces ArcFace to scaled-cosine softmax") {
  const auto e = Tensor::vector(noise(8, 6, 1.0));
  const Tensor w({5, 8}, noise(40, 7, 1.0));
  const double arc = arcface_loss(e, w, 2, 0.0, 32.0).item();
  const auto logits = cosine_logits(e, w, 32.0).to_vector();
  double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  CHECK(std::abs(arc - (mx + std::log(z) - logits[2])) < 1e-12);
}

TEST_CASE("true-class logit of an aligned embedding is s*cos(m)") {
  // With two orthogonal classes and the embedding on class 0, the loss is
  // log(exp(s cos m) + exp(0)) - s cos m.
  const Tensor w({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const double s = 32.0, m = 0.2;
  const double loss = arcface_loss(Tensor::vector({3.0, 0.0}), w, 0, m, s).item();
  const double t = s * std::cos(m);
  CHECK(loss == doctest::Approx(std::log(std::exp(t) + 1.0) - t).epsilon(1e-12));
}

TEST_CASE("ArcFace rejects an invalid label") {
  const Tensor w({3, 4}, noise(12, 8));
  CHECK_THROWS(arcface_loss(Tensor::vector(noise(4, 9)), w, 3, 0.2, 32.0));
}

TEST_CASE("invalid encoder configs are rejected") {
  EncoderConfig c;
  c.embedding_dim = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.arcface_margin = 2.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.arcface_scale = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint parameters must match the config") {
  EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 1);
  EncoderConfig other;
  other.embedding_dim = 16;
  CHECK_THROWS_AS(EmbeddingModel(other, FeatureConfig{}, m.params()), ShapeError);
}

TEST_CASE("training lowers the loss and separates speakers") {
  const auto& c = small_corpus();
  EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 0);
  TrainConfig tc;
  tc.epochs = 30;
  const auto hist = train_encoder(m, c.split(Split::kTrain), tc);
  REQUIRE(hist.epoch_loss.size() == 30);
  CHECK(hist.epoch_loss[1] < hist.epoch_loss[0]);
  CHECK(hist.epoch_loss[2] < hist.epoch_loss[1]);
  CHECK(hist.epoch_loss[4] < hist.epoch_loss[0]);

  const auto test = c.split(Split::kTest);
  const auto emb = embed_all(m, test);
  double same = 0.0, cross = 0.0;
  std::size_t ns = 0, nc = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    for (std::size_t j = i + 1; j < test.size(); ++j) {
      const double s = cosine(emb[i], emb[j]);
      if (test[i].speaker == test[j].speaker) {
        same += s;
        ++ns;
      } else {
        cross += s;
        ++nc;
      }
    }
  CHECK(same / ns - cross / nc >= 0.3);
}

TEST_CASE("training is deterministic given the seed") {
  const auto train = small_corpus().split(Split::kTrain);
  std::vector<Utterance> sub(train.begin(), train.begin() + 20);
  for (auto& u : sub) u.speaker %= 20;
  TrainConfig tc;
  tc.epochs = 1;
  EmbeddingModel a(EncoderConfig{}, FeatureConfig{}, 5), b(EncoderConfig{}, FeatureConfig{}, 5);
  train_encoder(a, sub, tc);
  train_encoder(b, sub, tc);
  CHECK(a.params() == b.params());
}

TEST_CASE("training rejects an empty corpus") {
  EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 0);
  CHECK_THROWS_AS(train_encoder(m, {}, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("centroids: unit norm, single utterance, duplicates, missing speaker") {
  const EmbeddingModel m(EncoderConfig{}, FeatureConfig{}, 2);
  std::vector<Utterance> enroll;
  for (std::size_t s = 0; s < 20; ++s) enroll.push_back({"u" + std::to_string(s), s, noise(1000, 10 + s)});
  const auto c = speaker_centroids(m, enroll, 20);
  for (std::size_t s = 0; s < 20; ++s) {
    double n = 0.0;
    for (double v : c.row(s)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    const auto e = m.embed(enroll[s].samples);
    double en = 0.0;
    for (double v : e) en += v * v;
    for (std::size_t d = 0; d < c.dim; ++d) CHECK(c.row(s)[d] == doctest::Approx(e[d] / std::sqrt(en)).epsilon(1e-12));
  }
  auto dup = enroll;
  dup.push_back(enroll[3]);
  const auto c2 = speaker_centroids(m, dup, 20);
  for (std::size_t d = 0; d < c.dim; ++d) CHECK(c2.row(3)[d] == doctest::Approx(c.row(3)[d]).epsilon(1e-12));
  enroll.pop_back();
  CHECK_THROWS_AS(speaker_centroids(m, enroll, 20), std::invalid_argument);
}
