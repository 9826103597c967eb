#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advlab/params.hpp"
#include "advlab/tensor.hpp"
#include "advlab/waveform.hpp"

namespace advlab {

// beta[t] and alpha_bar[t] for t = 0..T; index 0 is the clean-signal
// convention (beta 0, alpha_bar 1).
struct DiffusionSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
};

// Linear beta spacing from beta_min (t = 1) to beta_max (t = T). Throws
// std::invalid_argument unless T >= 1 and 0 < beta_min <= beta_max < 1.
DiffusionSchedule make_schedule(std::size_t steps, double beta_min, double beta_max);

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, for 0 <= t <= T.
std::vector<double> q_sample(std::span<const double> x0, std::size_t t,
                             std::span<const double> noise, const DiffusionSchedule& schedule);

struct DenoiserConfig {
  std::size_t channels = 32;
  std::size_t kernel = 3;
  std::size_t time_dim = 16;
  // One dilation per conv layer; the last layer maps back to one channel.
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  void validate() const;
};

// Sinusoidal embedding of the diffusion step.
std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

// Noise predictor eps_theta(x_t, t): dilated 1-D conv stack with residual
// hidden layers; the step embedding passes through a small MLP and enters
// every hidden layer as a per-channel bias.
class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, std::uint64_t seed);
  Denoiser(DenoiserConfig cfg, ParameterSet params);

  const DenoiserConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  Denoiser frozen() const { return Denoiser(cfg_, params_.frozen()); }
  Denoiser trainable() const { return Denoiser(cfg_, params_.trainable()); }

  // x_t of shape {L} -> predicted noise of shape {L}.
  Tensor predict_noise(const Tensor& x_t, std::size_t t) const;
  std::vector<double> predict_noise(std::span<const double> x_t, std::size_t t) const;

 private:
  void check_params() const;
  DenoiserConfig cfg_;
  ParameterSet params_;
};

struct DenoiserTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 16;
  std::size_t crop = 1000;  // random segment length per example
  double lr = 2e-4;
  std::uint64_t seed = 0;
};

struct DenoiserHistory {
  std::vector<double> step_loss;
};

// Noise-prediction MSE: t ~ U{1..T}, eps ~ N(0, I), minimize
// |eps - eps_theta(x_t, t)|^2 / N. Deterministic given cfg.seed. Throws
// std::invalid_argument on an empty corpus.
DenoiserHistory train_denoiser(Denoiser& denoiser, std::span<const Utterance> corpus,
                               const DiffusionSchedule& schedule, const DenoiserTrainConfig& cfg);

// Mean noise-prediction MSE over a fixed batch of (utterance, t, noise) draws.
double noise_prediction_mse(const Denoiser& denoiser, std::span<const Utterance> utts,
                            const DiffusionSchedule& schedule, std::uint64_t seed);

// |x0 - x0_hat|^2 / N with x0_hat recovered in closed form from x_t and the
// predicted noise at step t.
double reconstruction_mse(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                          std::span<const double> x0, std::size_t t, std::span<const double> noise);

struct PurifyOptions {
  std::uint64_t seed = 0;
  // Ancestral sampling with sigma_t^2 = beta_t; false drops the reverse-step
  // noise (the forward noising still uses `seed`).
  bool stochastic = true;
};

// Noise x to t_star, then reverse steps t_star -> 1 with the eps-parameterized
// posterior mean. t_star = 0 returns x unchanged. Output clamped to [-1, 1].
// Throws std::out_of_range for t_star > T.
std::vector<double> purify(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                           std::span<const double> x, std::size_t t_star,
                           const PurifyOptions& opts = {});

}  // namespace advlab
