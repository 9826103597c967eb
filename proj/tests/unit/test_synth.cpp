#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include <doctest.h>

#include "advlab/synth.hpp"

using namespace advlab;

TEST_CASE("speaker parameters are deterministic and in range") {
  const auto a = make_speaker(0), b = make_speaker(0);
  CHECK(a.f0_hz == b.f0_hz);
  CHECK(a.tilt_db_per_octave == b.tilt_db_per_octave);
  std::set<long> f0s;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = make_speaker(s);
    f0s.insert(std::lround(p.f0_hz));
    CHECK(p.f0_hz >= SpeakerRanges::kF0Min);
    CHECK(p.f0_hz <= SpeakerRanges::kF0Max);
    CHECK(p.jitter >= SpeakerRanges::kJitterMin);
    CHECK(p.jitter <= SpeakerRanges::kJitterMax);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(p.formants[i].center_hz >= SpeakerRanges::kFormantMin[i]);
      CHECK(p.formants[i].center_hz <= SpeakerRanges::kFormantMax[i]);
      CHECK(p.formants[i].center_hz < 4000.0);
    }
  }
  CHECK(f0s.size() >= 15);
}

TEST_CASE("utterances are peak-normalized and deterministic") {
  const auto sp = make_speaker(3);
  const auto x = synth_utterance(sp, {}, 11), y = synth_utterance(sp, {}, 11);
  CHECK(x == y);
  CHECK(x.size() == 8000);
  CHECK(peak_abs(x) == 0.9);
  CHECK_THROWS_AS(synth_utterance(sp, {8000.0, 0.4, 0.9}, 1), std::invalid_argument);
}

TEST_CASE("dominant peak of a jitter-free voice sits near f0") {
  auto sp = make_speaker(5);
  sp.jitter = 0.0;
  sp.tilt_db_per_octave = -12.0;
  for (auto& f : sp.formants) f.center_hz = std::max(f.center_hz, 1000.0);
  sp.f0_hz = 150.0;
  const SynthConfig cfg{8000.0, 1.0, 0.9};
  const auto x = synth_utterance(sp, cfg, 2);
  // Direct DFT over the whole utterance, bins of 1 Hz.
  double best = 0.0;
  std::size_t best_k = 0;
  for (std::size_t k = 20; k < 1000; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k * n) / 8000.0;
      re += x[n] * std::cos(a);
      im -= x[n] * std::sin(a);
    }
    const double m = re * re + im * im;
    if (m > best) {
      best = m;
      best_k = k;
    }
  }
  // Per-utterance pitch variation moves f0 by a few percent; 2 bins of the
  // 256-point feature DFT are 62.5 Hz.
  CHECK(std::abs(static_cast<double>(best_k) - sp.f0_hz) <= 62.5);
}

TEST_CASE("corpus sizes, splits and partition") {
  const auto c = make_corpus(20, 10, 0);
  CHECK(c.entries.size() == 200);
  CHECK(c.split(Split::kTrain).size() == 140);
  CHECK(c.split(Split::kEnroll).size() == 20);
  CHECK(c.split(Split::kTest).size() == 40);
  std::set<std::string> ids;
  for (const auto& e : c.entries) {
    CHECK(ids.insert(e.utt.id).second);
    CHECK(peak_abs(e.utt.samples) <= 1.0);
  }
  for (std::size_t s = 0; s < 20; ++s) {
    bool enroll = false, test = false;
    for (const auto& e : c.entries)
      if (e.utt.speaker == s) {
        enroll |= e.split == Split::kEnroll;
        test |= e.split == Split::kTest;
      }
    CHECK(enroll);
    CHECK(test);
  }
  CHECK_THROWS_AS(make_corpus(1, 10, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_corpus(5, 2, 0), std::invalid_argument);
}

TEST_CASE("corpus regeneration is bit-identical") {
  const auto a = make_corpus(4, 5, 9), b = make_corpus(4, 5, 9);
  REQUIRE(a.entries.size() == b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i].utt.samples == b.entries[i].utt.samples);
}

TEST_CASE("split names round trip") {
  for (auto s : {Split::kTrain, Split::kEnroll, Split::kTest}) CHECK(parse_split(split_name(s)) == s);
  CHECK_THROWS(parse_split("dev"));
}
