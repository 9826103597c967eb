#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

struct FeatureConfig {
  double sample_rate = 8000.0;
  std::size_t frame_len = 200;  // 25 ms
  std::size_t hop = 80;         // 10 ms
  std::size_t n_fft = 256;
  std::size_t n_mels = 40;
  double fmin = 50.0;
  double fmax = 4000.0;

  // Throws std::invalid_argument on a violated invariant.
  void validate() const;
  std::size_t num_bins() const { return n_fft / 2 + 1; }
  // floor((len - frame_len) / hop) + 1; zero when len < frame_len.
  std::size_t num_frames(std::size_t len) const;
};

inline constexpr double kLogMelFloor = 1e-6;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Center FFT bin of each mel point: n_mels + 2 entries (edges included).
std::vector<std::size_t> mel_bin_points(const FeatureConfig& cfg);
// n_mels x (n_fft/2 + 1) triangular filterbank. Throws std::invalid_argument when
// the FFT resolution leaves some filter without a distinct center bin.
Tensor mel_matrix(const FeatureConfig& cfg);
// Symmetric Hamming window of the given length.
std::vector<double> hamming_window(std::size_t n);

// Differentiable log-mel front end. Holds the window, DFT basis and filterbank as
// constants; safe to share across threads.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg);

  const FeatureConfig& config() const { return cfg_; }

  // (frames x frame_len), Hamming-windowed. Throws ShapeError when too short.
  Tensor frame_and_window(const Tensor& x) const;
  // |X_k|^2 for k = 0..n_fft/2; frames are implicitly zero-padded to n_fft.
  Tensor power_spectrum(const Tensor& frames) const;
  Tensor dft_magnitude(const Tensor& frames) const;
  // log(mel . |X|^2 + 1e-6): (frames x n_mels).
  Tensor log_mel(const Tensor& x) const;
  std::vector<double> log_mel(std::span<const double> x) const;

  const Tensor& mel() const { return mel_; }

 private:
  FeatureConfig cfg_;
  Tensor window_;     // 1 x frame_len
  Tensor dft_basis_;  // frame_len x 2*bins: [cos | -sin]
  Tensor mel_t_;      // bins x n_mels
  Tensor mel_;
};

}  // namespace advlab
