#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advlab/encoder.hpp"
#include "advlab/tensor.hpp"
#include "advlab/waveform.hpp"

namespace advlab {

inline constexpr double kDefaultBudgetFraction = 0.05;

struct AttackBudget {
  double epsilon = 0.0;
  double fraction = kDefaultBudgetFraction;

  // epsilon = fraction * max|x|. Throws std::invalid_argument when that is not positive.
  static AttackBudget from_waveform(std::span<const double> x,
                                    double fraction = kDefaultBudgetFraction);
};

struct PgdConfig {
  std::size_t iterations = 20;
  double alpha_start = 4e-3;
  double alpha_end = 4e-4;
  void validate() const;
};

struct AdamAttackConfig {
  std::size_t iterations = 50;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double xi = 1e-8;
  void validate() const;
};

enum class AttackMethod { kPgd, kAdam };
const char* method_name(AttackMethod m);
AttackMethod parse_method(const std::string& s);

struct AttackSettings {
  AttackMethod method = AttackMethod::kPgd;
  PgdConfig pgd;
  AdamAttackConfig adam;
  double budget_fraction = kDefaultBudgetFraction;
};

struct AdvExample {
  std::string source_id;
  std::vector<double> source;
  std::vector<double> delta;
  std::size_t source_label = 0;
  std::size_t target_label = 0;
  AttackMethod method = AttackMethod::kPgd;
  double epsilon = 0.0;
  std::size_t iterations = 0;
  double final_loss = 0.0;
  // Loss at delta_0 .. delta_T.
  std::vector<double> loss_history;

  // x + delta, already inside [-1, 1].
  std::vector<double> adversarial() const;
};

// Step size for iteration t of `iterations`: cosine decay from start (first
// step) to end (last step).
double step_size(double start, double end, std::size_t t, std::size_t iterations);

// Clamps delta to [-eps, eps]; when x is given, also shrinks delta so that
// x + delta lies in [-1, 1] exactly (in floating point).
void linf_project(std::span<double> delta, double epsilon, std::span<const double> x = {});

// Scalar loss of the adversarial waveform x + delta.
using AdvLossFn = std::function<Tensor(const Tensor& x_adv)>;
// Called after every projected update with the iteration index and new delta.
using IterationObserver = std::function<void(std::size_t, std::span<const double>)>;

struct PerturbationResult {
  std::vector<double> delta;
  std::vector<double> loss_history;
};

// delta_0 = 0; delta <- project(delta - alpha_t * sign(grad)).
PerturbationResult pgd_optimize(std::span<const double> x, double epsilon, const PgdConfig& cfg,
                                const AdvLossFn& loss, const IterationObserver& observe = {});
// delta_0 = m_0 = v_0 = 0; m, v updated without bias correction;
// delta <- project(delta - lr_t * m / (sqrt(v) + xi)).
PerturbationResult adam_optimize(std::span<const double> x, double epsilon,
                                 const AdamAttackConfig& cfg, const AdvLossFn& loss,
                                 const IterationObserver& observe = {});

// 1 - cosine(embed(x_adv), target_centroid).
Tensor attack_loss(const EmbeddingModel& model, const Tensor& x_adv, const Tensor& target_centroid);

// Targeted attacks against the enrollment centroid of `target`. Throws
// std::invalid_argument when source == target.
AdvExample pgd_attack(const EmbeddingModel& model, const Utterance& source, std::size_t target,
                      const Centroids& centroids, const AttackBudget& budget, const PgdConfig& cfg,
                      const IterationObserver& observe = {});
AdvExample adam_attack(const EmbeddingModel& model, const Utterance& source, std::size_t target,
                       const Centroids& centroids, const AttackBudget& budget,
                       const AdamAttackConfig& cfg, const IterationObserver& observe = {});
AdvExample run_attack(const EmbeddingModel& model, const Utterance& source, std::size_t target,
                      const Centroids& centroids, const AttackSettings& settings);

// One attack per (source, target) pair, parallel over pairs on a frozen copy of the model.
std::vector<AdvExample> run_attacks(const EmbeddingModel& model, std::span<const Utterance> sources,
                                    std::span<const std::size_t> targets, const Centroids& centroids,
                                    const AttackSettings& settings);

// argmax_j cosine(embedding, centroid_j); ties go to the lowest index.
std::size_t nearest_centroid(std::span<const double> embedding, const Centroids& centroids);
std::size_t predicted_label(const EmbeddingModel& model, std::span<const double> x,
                            const Centroids& centroids);

// Batch-peer reading of the label rule: each adversarial embedding takes the
// label of the most similar clean embedding in the same batch.
std::vector<std::size_t> predicted_labels_batch(std::span<const std::vector<double>> clean_embeddings,
                                                std::span<const std::size_t> clean_labels,
                                                std::span<const std::vector<double>> adv_embeddings);

// Uniform target per label over the other speakers. Throws std::invalid_argument
// when n_speakers < 2.
std::vector<std::size_t> assign_targets(std::span<const std::size_t> labels, std::size_t n_speakers,
                                        std::uint64_t seed);

}  // namespace advlab
