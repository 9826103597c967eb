#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/encoder.hpp"

namespace advlab {

struct AdvTrainConfig {
  AttackSettings attack;
  std::size_t epochs = 3;
  std::size_t batch_size = 4;
  double lr_start = 1e-2;
  double lr_end = 1e-5;
  // Weight of the adversarial half in the batch loss; 0 is the clean-only control.
  double adv_weight = 1.0;
  std::uint64_t seed = 0;
  void validate() const;
};

struct LabeledWave {
  std::vector<double> samples;
  std::size_t label = 0;
  bool adversarial = false;
};

// Adversarial copies of `batch` (targets from assign_targets, attacks against
// the given weights) followed by the clean originals; every item keeps its
// source label.
std::vector<LabeledWave> make_adv_batch(const EmbeddingModel& model, std::span<const Utterance> batch,
                                        const Centroids& centroids, const AttackSettings& attack,
                                        std::uint64_t seed);

struct AdvTrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_clean_loss;
  std::vector<double> epoch_adv_loss;
};

// ArcFace fine-tuning on mixed batches. Centroids are recomputed from
// `enrollment` and attacks regenerated against the current weights before
// every batch. Logs a warning when the starting model looks untrained.
AdvTrainHistory adversarial_finetune(EmbeddingModel& model, std::span<const Utterance> train,
                                     std::span<const Utterance> enrollment, const AdvTrainConfig& cfg);

}  // namespace advlab
