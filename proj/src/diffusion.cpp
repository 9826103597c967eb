#include "advlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "advlab/optim.hpp"
#include "advlab/rng.hpp"

namespace advlab {

DiffusionSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 1) throw std::invalid_argument("diffusion schedule: need at least one step");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw std::invalid_argument("diffusion schedule: need 0 < beta_min <= beta_max < 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.beta.assign(steps + 1, 0.0);
  s.alpha_bar.assign(steps + 1, 1.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    s.beta[t] = steps == 1 ? beta_min
                           : beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) /
                                            static_cast<double>(steps - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

std::vector<double> q_sample(std::span<const double> x0, std::size_t t,
                             std::span<const double> noise, const DiffusionSchedule& schedule) {
  if (t > schedule.steps)
    throw std::out_of_range("q_sample: step " + std::to_string(t) + " beyond schedule of " +
                            std::to_string(schedule.steps));
  if (noise.size() != x0.size()) throw ShapeError("q_sample: noise length differs from signal");
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

void DenoiserConfig::validate() const {
  if (channels == 0 || time_dim < 2 || time_dim % 2 != 0)
    throw std::invalid_argument("denoiser: channels must be positive and time_dim even");
  if (kernel % 2 == 0) throw std::invalid_argument("denoiser: kernel must be odd");
  if (dilations.size() < 2) throw std::invalid_argument("denoiser: need at least two conv layers");
  for (auto d : dilations)
    if (d == 0) throw std::invalid_argument("denoiser: dilation must be positive");
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  std::vector<double> e(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

namespace {

Tensor normal_param(Rng& rng, Shape shape, double sd) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

std::string layer_name(std::size_t l, const char* part) {
  return "layer" + std::to_string(l) + "." + part;
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "denoiser-init"));
  const std::size_t c = cfg_.channels, k = cfg_.kernel;
  params_.add("time.w", normal_param(rng, {c, cfg_.time_dim}, std::sqrt(1.0 / static_cast<double>(cfg_.time_dim))));
  params_.add("time.b", Tensor::zeros({c}, true));
  std::size_t in = 1;
  for (std::size_t l = 0; l + 1 < cfg_.dilations.size(); ++l) {
    params_.add(layer_name(l, "w"), normal_param(rng, {c, in, k}, std::sqrt(2.0 / static_cast<double>(in * k))));
    params_.add(layer_name(l, "b"), Tensor::zeros({c}, true));
    params_.add(layer_name(l, "temb"), normal_param(rng, {c, c}, std::sqrt(1.0 / static_cast<double>(c))));
    in = c;
  }
  params_.add("out.w", normal_param(rng, {1, c, k}, 0.1 * std::sqrt(1.0 / static_cast<double>(c * k))));
  params_.add("out.b", Tensor::zeros({1}, true));
}

Denoiser::Denoiser(DenoiserConfig cfg, ParameterSet params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  check_params();
}

void Denoiser::check_params() const {
  const std::size_t c = cfg_.channels, k = cfg_.kernel;
  auto expect = [this](const std::string& name, const Shape& shape) {
    if (!params_.contains(name)) throw ShapeError("denoiser: missing parameter '" + name + "'");
    if (params_.get(name).shape() != shape)
      throw ShapeError("denoiser: parameter '" + name + "' has shape " +
                       shape_str(params_.get(name).shape()) + ", expected " + shape_str(shape));
  };
  expect("time.w", {c, cfg_.time_dim});
  expect("time.b", {c});
  std::size_t in = 1;
  for (std::size_t l = 0; l + 1 < cfg_.dilations.size(); ++l) {
    expect(layer_name(l, "w"), {c, in, k});
    expect(layer_name(l, "b"), {c});
    expect(layer_name(l, "temb"), {c, c});
    in = c;
  }
  expect("out.w", {1, c, k});
  expect("out.b", {1});
}

Tensor Denoiser::predict_noise(const Tensor& x_t, std::size_t t) const {
  if (x_t.rank() != 1) throw ShapeError("denoiser: expected a 1-D signal, got " + shape_str(x_t.shape()));
  const std::size_t c = cfg_.channels;
  const std::size_t len = x_t.dim(0);
  Tensor emb(Shape{cfg_.time_dim, 1}, timestep_embedding(t, cfg_.time_dim));
  Tensor ht = reshape(relu(reshape(matmul(params_.get("time.w"), emb), {c}) + params_.get("time.b")), {c, 1});
  Tensor h = reshape(x_t, {1, len});
  for (std::size_t l = 0; l + 1 < cfg_.dilations.size(); ++l) {
    Tensor bias = params_.get(layer_name(l, "b")) + reshape(matmul(params_.get(layer_name(l, "temb")), ht), {c});
    Tensor z = relu(conv1d(h, params_.get(layer_name(l, "w")), bias, cfg_.dilations[l]));
    h = l == 0 ? z : h + z;
  }
  return reshape(conv1d(h, params_.get("out.w"), params_.get("out.b"), cfg_.dilations.back()), {len});
}

std::vector<double> Denoiser::predict_noise(std::span<const double> x_t, std::size_t t) const {
  return predict_noise(Tensor::vector({x_t.begin(), x_t.end()}), t).to_vector();
}

DenoiserHistory train_denoiser(Denoiser& denoiser, std::span<const Utterance> corpus,
                               const DiffusionSchedule& schedule, const DenoiserTrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("train_denoiser: empty corpus");
  if (cfg.batch_size == 0 || cfg.crop == 0) throw std::invalid_argument("train_denoiser: bad batch or crop size");
  for (const auto& u : corpus)
    if (u.samples.size() < cfg.crop) throw std::invalid_argument("train_denoiser: utterance shorter than crop");
  denoiser = denoiser.trainable();
  AdamOptimizer opt;
  Rng rng(derive_seed(cfg.seed, "train-denoiser"));
  DenoiserHistory hist;
  const double inv = 1.0 / static_cast<double>(cfg.batch_size * cfg.crop);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& u = corpus[rng.below(corpus.size())];
      const auto start = rng.below(u.samples.size() - cfg.crop + 1);
      const std::size_t t = 1 + rng.below(schedule.steps);
      const auto noise = rng.normal_vector(cfg.crop);
      std::span<const double> x0(u.samples.data() + start, cfg.crop);
      Tensor pred = denoiser.predict_noise(Tensor::vector(q_sample(x0, t, noise, schedule)), t);
      Tensor diff = pred - Tensor::vector(noise);
      Tensor loss = scale(sum(diff * diff), inv);
      backward(loss);
      loss_sum += loss.item();
    }
    opt.step(denoiser.params(), cfg.lr);
    hist.step_loss.push_back(loss_sum);
  }
  return hist;
}

double noise_prediction_mse(const Denoiser& denoiser, std::span<const Utterance> utts,
                            const DiffusionSchedule& schedule, std::uint64_t seed) {
  if (utts.empty()) throw std::invalid_argument("noise_prediction_mse: empty set");
  const Denoiser frozen = denoiser.frozen();
  Rng rng(derive_seed(seed, "denoiser-eval"));
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& u : utts) {
    const std::size_t t = 1 + rng.below(schedule.steps);
    const auto noise = rng.normal_vector(u.samples.size());
    const auto pred = frozen.predict_noise(q_sample(u.samples, t, noise, schedule), t);
    for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - noise[i]) * (pred[i] - noise[i]);
    count += pred.size();
  }
  return total / static_cast<double>(count);
}

double reconstruction_mse(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                          std::span<const double> x0, std::size_t t, std::span<const double> noise) {
  if (t < 1 || t > schedule.steps) throw std::out_of_range("reconstruction_mse: step out of range");
  const auto xt = q_sample(x0, t, noise, schedule);
  const auto eps = denoiser.frozen().predict_noise(xt, t);
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  double total = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double x0_hat = (xt[i] - b * eps[i]) / a;
    total += (x0[i] - x0_hat) * (x0[i] - x0_hat);
  }
  return total / static_cast<double>(x0.size());
}

std::vector<double> purify(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                           std::span<const double> x, std::size_t t_star, const PurifyOptions& opts) {
  if (t_star > schedule.steps)
    throw std::out_of_range("purify: t_star " + std::to_string(t_star) + " beyond schedule of " +
                            std::to_string(schedule.steps));
  if (t_star == 0) return {x.begin(), x.end()};
  const Denoiser net = denoiser.frozen();
  Rng rng(derive_seed(opts.seed, "purify"));
  auto cur = q_sample(x, t_star, rng.normal_vector(x.size()), schedule);
  for (std::size_t t = t_star; t >= 1; --t) {
    const auto eps = net.predict_noise(cur, t);
    const double beta = schedule.beta[t];
    const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar[t]);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const bool add_noise = opts.stochastic && t > 1;
    const double sigma = std::sqrt(beta);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      cur[i] = inv_sqrt_alpha * (cur[i] - coef * eps[i]);
      if (add_noise) cur[i] += sigma * rng.normal();
    }
  }
  for (auto& v : cur) v = std::clamp(v, -1.0, 1.0);
  return cur;
}

}  // namespace advlab
