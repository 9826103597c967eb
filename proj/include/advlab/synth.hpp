#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "advlab/waveform.hpp"

namespace advlab {

struct Formant {
  double center_hz = 0.0;
  double bandwidth_hz = 0.0;
};

// Voice of one synthetic speaker.
struct SpeakerParams {
  double f0_hz = 120.0;
  std::array<Formant, 3> formants{};
  double tilt_db_per_octave = -6.0;
  // Relative f0 wobble (slow drift plus per-period noise); 0 gives a steady pitch.
  double jitter = 0.01;
};

// Declared parameter ranges.
struct SpeakerRanges {
  static constexpr double kF0Min = 80.0, kF0Max = 300.0;
  static constexpr double kTiltMin = -12.0, kTiltMax = -3.0;
  static constexpr double kJitterMin = 0.002, kJitterMax = 0.02;
  static constexpr std::array<double, 3> kFormantMin{300.0, 900.0, 2200.0};
  static constexpr std::array<double, 3> kFormantMax{900.0, 2200.0, 3400.0};
  static constexpr double kBandwidthMin = 60.0, kBandwidthMax = 200.0;
};

SpeakerParams make_speaker(std::uint64_t seed);

struct SynthConfig {
  double sample_rate = 8000.0;
  double duration_s = 1.0;
  double peak = 0.9;
};

// Harmonic source at f0 (with jitter) shaped by spectral tilt and formant
// resonances, amplitude-modulated into syllable-like bursts, plus low-level
// noise, peak-normalized to cfg.peak. Per-utterance variation (pitch level,
// formant shift, envelope, noise level) is drawn from `seed`. Throws
// std::invalid_argument for durations below 0.5 s.
std::vector<double> synth_utterance(const SpeakerParams& speaker, const SynthConfig& cfg,
                                    std::uint64_t seed);

enum class Split { kTrain, kEnroll, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct CorpusEntry {
  Utterance utt;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
};

struct Corpus {
  std::size_t n_speakers = 0;
  std::size_t utts_per_speaker = 0;
  std::uint64_t master_seed = 0;
  SynthConfig synth;
  std::vector<SpeakerParams> speakers;
  std::vector<CorpusEntry> entries;

  std::vector<Utterance> split(Split s) const;
};

// Per speaker, utterances are assigned 70/10/20 to train/enroll/test (at least
// one enroll and one test utterance each). Throws std::invalid_argument for
// n_speakers < 2 or utts_per_speaker < 3.
Corpus make_corpus(std::size_t n_speakers, std::size_t utts_per_speaker, std::uint64_t master_seed,
                   const SynthConfig& cfg = {});

}  // namespace advlab
