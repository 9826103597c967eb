#include "advlab/features.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace advlab {

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("features: sample_rate must be positive");
  if (frame_len == 0 || hop == 0) throw std::invalid_argument("features: frame_len and hop must be positive");
  if (frame_len > n_fft) throw std::invalid_argument("features: frame_len exceeds n_fft");
  if (n_fft < 2 || n_fft % 2 != 0) throw std::invalid_argument("features: n_fft must be even");
  if (!(fmin >= 0 && fmin < fmax && fmax <= sample_rate / 2))
    throw std::invalid_argument("features: need 0 <= fmin < fmax <= sample_rate/2");
  if (n_mels < 2) throw std::invalid_argument("features: n_mels must be at least 2");
}

std::size_t FeatureConfig::num_frames(std::size_t len) const {
  if (len < frame_len) return 0;
  return (len - frame_len) / hop + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::size_t> mel_bin_points(const FeatureConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<std::size_t> bins(cfg.n_mels + 2);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double hz = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                         static_cast<double>(cfg.n_mels + 1));
    bins[i] = static_cast<std::size_t>(
        std::floor(hz * static_cast<double>(cfg.n_fft) / cfg.sample_rate + 0.5));
  }
  return bins;
}

Tensor mel_matrix(const FeatureConfig& cfg) {
  const auto pts = mel_bin_points(cfg);
  const std::size_t nb = cfg.num_bins();
  std::vector<double> w(cfg.n_mels * nb, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const std::size_t l = pts[m], c = pts[m + 1], r = pts[m + 2];
    if (!(l < c && c < r))
      throw std::invalid_argument("mel_matrix: filter " + std::to_string(m) +
                                  " is empty at this FFT resolution (n_fft=" +
                                  std::to_string(cfg.n_fft) + ", n_mels=" +
                                  std::to_string(cfg.n_mels) + ")");
    for (std::size_t k = l; k <= r && k < nb; ++k) {
      const double v = k <= c ? static_cast<double>(k - l) / static_cast<double>(c - l)
                              : static_cast<double>(r - k) / static_cast<double>(r - c);
      w[m * nb + k] = v;
    }
  }
  return Tensor({cfg.n_mels, nb}, std::move(w));
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  return w;
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  window_ = Tensor({1, cfg_.frame_len}, hamming_window(cfg_.frame_len));

  const std::size_t nb = cfg_.num_bins();
  std::vector<double> basis(cfg_.frame_len * 2 * nb);
  for (std::size_t n = 0; n < cfg_.frame_len; ++n) {
    for (std::size_t k = 0; k < nb; ++k) {
      // Reduce n*k mod n_fft first so the angle stays exact for large products.
      const std::size_t nk = (n * k) % cfg_.n_fft;
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(nk) /
                         static_cast<double>(cfg_.n_fft);
      basis[n * 2 * nb + k] = std::cos(ang);
      basis[n * 2 * nb + nb + k] = -std::sin(ang);
    }
  }
  dft_basis_ = Tensor({cfg_.frame_len, 2 * nb}, std::move(basis));
  mel_ = mel_matrix(cfg_);
  mel_t_ = transpose(mel_);
}

Tensor FeatureExtractor::frame_and_window(const Tensor& x) const {
  if (x.rank() != 1) throw ShapeError("frame_and_window: expected a 1-D waveform, got " + shape_str(x.shape()));
  if (x.dim(0) < cfg_.frame_len)
    throw ShapeError("frame_and_window: waveform of " + std::to_string(x.dim(0)) +
                     " samples is shorter than one frame (" + std::to_string(cfg_.frame_len) + ")");
  Tensor frames = unfold(x, cfg_.frame_len, cfg_.hop);
  return frames * expand(window_, frames.shape());
}

Tensor FeatureExtractor::power_spectrum(const Tensor& frames) const {
  if (frames.rank() != 2 || frames.dim(1) != cfg_.frame_len)
    throw ShapeError("power_spectrum: expected (frames x " + std::to_string(cfg_.frame_len) +
                     "), got " + shape_str(frames.shape()));
  const std::size_t nb = cfg_.num_bins();
  Tensor spec = matmul(frames, dft_basis_);
  Tensor re = slice(spec, 1, 0, nb);
  Tensor im = slice(spec, 1, nb, 2 * nb);
  return re * re + im * im;
}

Tensor FeatureExtractor::dft_magnitude(const Tensor& frames) const {
  return sqrt(power_spectrum(frames));
}

Tensor FeatureExtractor::log_mel(const Tensor& x) const {
  Tensor power = power_spectrum(frame_and_window(x));
  return log(add_scalar(matmul(power, mel_t_), kLogMelFloor));
}

std::vector<double> FeatureExtractor::log_mel(std::span<const double> x) const {
  return log_mel(Tensor::vector({x.begin(), x.end()})).to_vector();
}

}  // namespace advlab
