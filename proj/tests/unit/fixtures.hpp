#pragma once

#include <random>
#include <vector>

#include "advlab/encoder.hpp"
#include "advlab/synth.hpp"

namespace fixtures {

inline std::vector<double> noise(std::size_t n, unsigned seed, double amp = 0.3) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

inline const advlab::Corpus& corpus() {
  static const advlab::Corpus c = advlab::make_corpus(20, 10, 0);
  return c;
}

// The default encoder trained on the default corpus, shared across tests.
struct Trained {
  advlab::EmbeddingModel model;
  advlab::Centroids centroids;
};

inline const Trained& trained() {
  static const Trained t = [] {
    advlab::EmbeddingModel m(advlab::EncoderConfig{}, advlab::FeatureConfig{}, 0);
    advlab::TrainConfig tc;
    tc.epochs = 30;
    advlab::train_encoder(m, corpus().split(advlab::Split::kTrain), tc);
    auto c = advlab::speaker_centroids(m, corpus().split(advlab::Split::kEnroll), 20);
    return Trained{m.frozen(), std::move(c)};
  }();
  return t;
}

}  // namespace fixtures
