#include "advlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "advlab/metrics.hpp"
#include "advlab/optim.hpp"
#include "advlab/rng.hpp"

namespace advlab {

AttackBudget AttackBudget::from_waveform(std::span<const double> x, double fraction) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  AttackBudget b{fraction * peak, fraction};
  if (!(b.epsilon > 0.0)) throw std::invalid_argument("attack budget: epsilon must be positive");
  return b;
}

void PgdConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("pgd: iterations must be >= 1");
  if (!(alpha_start >= alpha_end && alpha_end > 0))
    throw std::invalid_argument("pgd: need alpha_start >= alpha_end > 0");
}

void AdamAttackConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("adam attack: iterations must be >= 1");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
    throw std::invalid_argument("adam attack: betas must lie in (0, 1)");
  if (!(xi > 0)) throw std::invalid_argument("adam attack: xi must be positive");
  if (!(lr_start >= lr_end && lr_end > 0))
    throw std::invalid_argument("adam attack: need lr_start >= lr_end > 0");
}

const char* method_name(AttackMethod m) { return m == AttackMethod::kPgd ? "pgd" : "adam"; }

AttackMethod parse_method(const std::string& s) {
  if (s == "pgd") return AttackMethod::kPgd;
  if (s == "adam") return AttackMethod::kAdam;
  throw std::invalid_argument("unknown attack method '" + s + "' (expected pgd or adam)");
}

std::vector<double> AdvExample::adversarial() const {
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = source[i] + delta[i];
  return out;
}

double step_size(double start, double end, std::size_t t, std::size_t iterations) {
  if (iterations <= 1) return start;
  return cosine_decay(start, end, t, iterations - 1);
}

void linf_project(std::span<double> delta, double epsilon, std::span<const double> x) {
  if (!x.empty() && x.size() != delta.size())
    throw ShapeError("linf_project: waveform and perturbation lengths differ");
  for (std::size_t i = 0; i < delta.size(); ++i) {
    double d = std::clamp(delta[i], -epsilon, epsilon);
    if (!x.empty()) {
      if (x[i] + d > 1.0) {
        d = 1.0 - x[i];
        while (x[i] + d > 1.0) d = std::nextafter(d, -std::numeric_limits<double>::infinity());
      } else if (x[i] + d < -1.0) {
        d = -1.0 - x[i];
        while (x[i] + d < -1.0) d = std::nextafter(d, std::numeric_limits<double>::infinity());
      }
    }
    delta[i] = d;
  }
}

namespace {

// Loss value and gradient w.r.t. delta at x + delta.
double loss_and_grad(std::span<const double> x, const std::vector<double>& delta,
                     const AdvLossFn& loss, std::vector<double>& grad) {
  Tensor d(Shape{delta.size()}, delta, true);
  Tensor xc(Shape{x.size()}, std::vector<double>(x.begin(), x.end()));
  Tensor l = loss(xc + d);
  backward(l);
  auto g = d.grad();
  grad.assign(g.begin(), g.end());
  return l.item();
}

double loss_value(std::span<const double> x, const std::vector<double>& delta, const AdvLossFn& loss) {
  std::vector<double> xa(x.size());
  for (std::size_t i = 0; i < xa.size(); ++i) xa[i] = x[i] + delta[i];
  return loss(Tensor::vector(std::move(xa))).item();
}

}  // namespace

PerturbationResult pgd_optimize(std::span<const double> x, double epsilon, const PgdConfig& cfg,
                                const AdvLossFn& loss, const IterationObserver& observe) {
  cfg.validate();
  PerturbationResult r;
  r.delta.assign(x.size(), 0.0);
  std::vector<double> g;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    r.loss_history.push_back(loss_and_grad(x, r.delta, loss, g));
    const double alpha = step_size(cfg.alpha_start, cfg.alpha_end, t, cfg.iterations);
    for (std::size_t i = 0; i < r.delta.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      r.delta[i] -= alpha * s;
    }
    linf_project(r.delta, epsilon, x);
    if (observe) observe(t, r.delta);
  }
  r.loss_history.push_back(loss_value(x, r.delta, loss));
  return r;
}

PerturbationResult adam_optimize(std::span<const double> x, double epsilon,
                                 const AdamAttackConfig& cfg, const AdvLossFn& loss,
                                 const IterationObserver& observe) {
  cfg.validate();
  PerturbationResult r;
  r.delta.assign(x.size(), 0.0);
  std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0), g;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    r.loss_history.push_back(loss_and_grad(x, r.delta, loss, g));
    const double lr = step_size(cfg.lr_start, cfg.lr_end, t, cfg.iterations);
    for (std::size_t i = 0; i < r.delta.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      r.delta[i] -= lr * m[i] / (std::sqrt(v[i]) + cfg.xi);
    }
    linf_project(r.delta, epsilon, x);
    if (observe) observe(t, r.delta);
  }
  r.loss_history.push_back(loss_value(x, r.delta, loss));
  return r;
}

Tensor attack_loss(const EmbeddingModel& model, const Tensor& x_adv, const Tensor& target_centroid) {
  return add_scalar(scale(cosine_similarity(model.embed(x_adv), target_centroid), -1.0), 1.0);
}

namespace {

AdvExample finish(const Utterance& source, std::size_t target, AttackMethod method, double eps,
                  std::size_t iterations, PerturbationResult r) {
  AdvExample ex;
  ex.source_id = source.id;
  ex.source = source.samples;
  ex.delta = std::move(r.delta);
  ex.source_label = source.speaker;
  ex.target_label = target;
  ex.method = method;
  ex.epsilon = eps;
  ex.iterations = iterations;
  ex.final_loss = r.loss_history.back();
  ex.loss_history = std::move(r.loss_history);
  return ex;
}

void check_pair(const Utterance& source, std::size_t target, const Centroids& centroids) {
  if (source.speaker == target)
    throw std::invalid_argument("attack: target speaker equals source speaker (" +
                                std::to_string(target) + ")");
  if (target >= centroids.n) throw std::invalid_argument("attack: target speaker has no centroid");
}

}  // namespace

AdvExample pgd_attack(const EmbeddingModel& model, const Utterance& source, std::size_t target,
                      const Centroids& centroids, const AttackBudget& budget, const PgdConfig& cfg,
                      const IterationObserver& observe) {
  check_pair(source, target, centroids);
  const Tensor c = centroids.row_tensor(target);
  auto r = pgd_optimize(source.samples, budget.epsilon, cfg,
                        [&](const Tensor& xa) { return attack_loss(model, xa, c); }, observe);
  return finish(source, target, AttackMethod::kPgd, budget.epsilon, cfg.iterations, std::move(r));
}

AdvExample adam_attack(const EmbeddingModel& model, const Utterance& source, std::size_t target,
                       const Centroids& centroids, const AttackBudget& budget,
                       const AdamAttackConfig& cfg, const IterationObserver& observe) {
  check_pair(source, target, centroids);
  const Tensor c = centroids.row_tensor(target);
  auto r = adam_optimize(source.samples, budget.epsilon, cfg,
                         [&](const Tensor& xa) { return attack_loss(model, xa, c); }, observe);
  return finish(source, target, AttackMethod::kAdam, budget.epsilon, cfg.iterations, std::move(r));
}

AdvExample run_attack(const EmbeddingModel& model, const Utterance& source, std::size_t target,
                      const Centroids& centroids, const AttackSettings& s) {
  const auto budget = AttackBudget::from_waveform(source.samples, s.budget_fraction);
  return s.method == AttackMethod::kPgd
             ? pgd_attack(model, source, target, centroids, budget, s.pgd)
             : adam_attack(model, source, target, centroids, budget, s.adam);
}

std::vector<AdvExample> run_attacks(const EmbeddingModel& model, std::span<const Utterance> sources,
                                    std::span<const std::size_t> targets, const Centroids& centroids,
                                    const AttackSettings& settings) {
  if (sources.size() != targets.size())
    throw std::invalid_argument("run_attacks: sources and targets differ in length");
  const EmbeddingModel frozen = model.frozen();
  std::vector<AdvExample> out(sources.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(sources.size()); ++i)
    out[i] = run_attack(frozen, sources[i], targets[i], centroids, settings);
  return out;
}

std::size_t nearest_centroid(std::span<const double> embedding, const Centroids& centroids) {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.n; ++j) {
    const double s = cosine(embedding, centroids.row(j));
    if (s > best_sim) {
      best_sim = s;
      best = j;
    }
  }
  return best;
}

std::size_t predicted_label(const EmbeddingModel& model, std::span<const double> x,
                            const Centroids& centroids) {
  return nearest_centroid(model.frozen().embed(x), centroids);
}

std::vector<std::size_t> predicted_labels_batch(std::span<const std::vector<double>> clean_embeddings,
                                                std::span<const std::size_t> clean_labels,
                                                std::span<const std::vector<double>> adv_embeddings) {
  if (clean_embeddings.size() != clean_labels.size() || clean_embeddings.empty())
    throw std::invalid_argument("predicted_labels_batch: need one label per clean embedding");
  std::vector<std::size_t> out;
  out.reserve(adv_embeddings.size());
  for (const auto& a : adv_embeddings) {
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < clean_embeddings.size(); ++i) {
      const double s = cosine(clean_embeddings[i], a);
      if (s > best_sim) {
        best_sim = s;
        best = i;
      }
    }
    out.push_back(clean_labels[best]);
  }
  return out;
}

std::vector<std::size_t> assign_targets(std::span<const std::size_t> labels, std::size_t n_speakers,
                                        std::uint64_t seed) {
  if (n_speakers < 2) throw std::invalid_argument("assign_targets: need at least 2 speakers");
  Rng rng(derive_seed(seed, "assign-targets"));
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (auto y : labels) {
    if (y >= n_speakers) throw std::invalid_argument("assign_targets: label out of range");
    // Draw from the n-1 other speakers and skip over the source.
    auto t = static_cast<std::size_t>(rng.below(n_speakers - 1));
    if (t >= y) ++t;
    out.push_back(t);
  }
  return out;
}

}  // namespace advlab
