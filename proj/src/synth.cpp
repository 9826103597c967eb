#include "advlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "advlab/rng.hpp"

namespace advlab {

double peak_abs(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

SpeakerParams make_speaker(std::uint64_t seed) {
  using R = SpeakerRanges;
  Rng rng(derive_seed(seed, "speaker"));
  SpeakerParams p;
  // Log-uniform pitch: perceptually even spread over the range.
  p.f0_hz = std::exp(rng.uniform(std::log(R::kF0Min), std::log(R::kF0Max)));
  for (std::size_t k = 0; k < 3; ++k) {
    p.formants[k].center_hz = rng.uniform(R::kFormantMin[k], R::kFormantMax[k]);
    p.formants[k].bandwidth_hz = rng.uniform(R::kBandwidthMin, R::kBandwidthMax);
  }
  p.tilt_db_per_octave = rng.uniform(R::kTiltMin, R::kTiltMax);
  p.jitter = rng.uniform(R::kJitterMin, R::kJitterMax);
  return p;
}

std::vector<double> synth_utterance(const SpeakerParams& speaker, const SynthConfig& cfg,
                                    std::uint64_t seed) {
  if (cfg.duration_s < 0.5) throw std::invalid_argument("synth_utterance: duration below 0.5 s");
  if (cfg.sample_rate <= 0) throw std::invalid_argument("synth_utterance: bad sample rate");
  Rng rng(derive_seed(seed, "utterance"));
  const double sr = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * sr));
  const double nyquist = sr / 2.0;
  const double two_pi = 2.0 * std::numbers::pi;

  // Within-speaker variation for this utterance.
  const double pitch_level = std::exp(0.02 * rng.normal());
  std::array<double, 3> formant_shift{};
  for (auto& s : formant_shift) s = 1.0 + 0.015 * rng.normal();
  const double vib_rate = rng.uniform(0.5, 2.0);
  const double vib_phase = rng.uniform(0.0, two_pi);
  const double syl_rate = rng.uniform(3.0, 5.0);
  const double syl_phase = rng.uniform(0.0, two_pi);
  const double noise_level = rng.uniform(0.003, 0.02);

  const double f0 = speaker.f0_hz * pitch_level;
  auto gain = [&](double f) {
    double g = 1.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double fc = speaker.formants[k].center_hz * formant_shift[k];
      const double x = (f - fc) / speaker.formants[k].bandwidth_hz;
      g += 4.0 / (1.0 + x * x);
    }
    return g;
  };

  // Instantaneous pitch: slow drift plus smoothed per-sample noise.
  std::vector<double> phase(n);
  double acc = 0.0;
  double smooth = 0.0;
  const double pole = std::exp(-two_pi * 20.0 / sr);
  const double smooth_gain = std::sqrt((1.0 - pole * pole));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    smooth = pole * smooth + smooth_gain * rng.normal();
    const double wobble = speaker.jitter * (0.7 * std::sin(two_pi * vib_rate * t + vib_phase) + 0.3 * smooth);
    acc += two_pi * f0 * (1.0 + wobble) / sr;
    phase[i] = acc;
  }

  const double f0_max = f0 * (1.0 + 2.0 * speaker.jitter);
  const auto harmonics = static_cast<std::size_t>(std::floor(0.95 * nyquist / f0_max));
  std::vector<double> x(n, 0.0);
  for (std::size_t h = 1; h <= harmonics; ++h) {
    const double hf = static_cast<double>(h);
    const double amp = std::pow(hf, speaker.tilt_db_per_octave / (20.0 * std::log10(2.0))) * gain(hf * f0);
    const double ph0 = rng.uniform(0.0, two_pi);
    for (std::size_t i = 0; i < n; ++i) x[i] += amp * std::sin(hf * phase[i] + ph0);
  }

  double rms = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double s = 0.5 - 0.5 * std::cos(two_pi * syl_rate * t + syl_phase);
    const double env = s * s;  // syllables separated by near-silent gaps
    x[i] *= env;
    rms += x[i] * x[i];
  }
  rms = std::sqrt(rms / static_cast<double>(n));
  for (auto& v : x) v += noise_level * rms * rng.normal();

  const double peak = peak_abs(x);
  if (peak > 0.0)
    for (auto& v : x) v *= cfg.peak / peak;
  return x;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kEnroll: return "enroll";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "enroll") return Split::kEnroll;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<Utterance> Corpus::split(Split s) const {
  std::vector<Utterance> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e.utt);
  return out;
}

Corpus make_corpus(std::size_t n_speakers, std::size_t utts_per_speaker, std::uint64_t master_seed,
                   const SynthConfig& cfg) {
  if (n_speakers < 2) throw std::invalid_argument("make_corpus: need at least 2 speakers");
  if (utts_per_speaker < 3)
    throw std::invalid_argument("make_corpus: need at least 3 utterances per speaker");
  Corpus c;
  c.n_speakers = n_speakers;
  c.utts_per_speaker = utts_per_speaker;
  c.master_seed = master_seed;
  c.synth = cfg;
  for (std::size_t s = 0; s < n_speakers; ++s)
    c.speakers.push_back(make_speaker(derive_seed(master_seed, "speaker", s)));

  const auto u = static_cast<double>(utts_per_speaker);
  const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * u)));
  const std::size_t n_enroll = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * u)));
  const std::size_t n_train = utts_per_speaker - n_test - n_enroll;

  c.entries.resize(n_speakers * utts_per_speaker);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t idx = 0; idx < static_cast<std::ptrdiff_t>(c.entries.size()); ++idx) {
    const std::size_t s = static_cast<std::size_t>(idx) / utts_per_speaker;
    const std::size_t k = static_cast<std::size_t>(idx) % utts_per_speaker;
    CorpusEntry& e = c.entries[idx];
    e.seed = derive_seed(master_seed, "utterance", idx);
    e.split = k < n_train ? Split::kTrain : (k < n_train + n_enroll ? Split::kEnroll : Split::kTest);
    e.utt.speaker = s;
    char id[32];
    std::snprintf(id, sizeof id, "spk%03zu_utt%03zu", s, k);
    e.utt.id = id;
    e.utt.samples = synth_utterance(c.speakers[s], cfg, e.seed);
  }
  return c;
}

}  // namespace advlab
