#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advlab/diffusion.hpp"
#include "advlab/encoder.hpp"

namespace advlab {

enum class DetectLabel : std::size_t { kClean = 0, kAdversarial = 1 };
const char* detect_label_name(DetectLabel l);

struct Detection {
  DetectLabel label = DetectLabel::kClean;
  double score = 0.0;  // adversarial-class probability
};

// Two conv stages (four conv blocks) over log-mel, 2-class ArcFace head.
EncoderConfig default_detector_config();

// Clean/adversarial classifier sharing the encoder architecture.
class Detector {
 public:
  Detector(EncoderConfig cfg, FeatureConfig fcfg, std::uint64_t seed);
  explicit Detector(EmbeddingModel model);

  const EmbeddingModel& model() const { return model_; }
  EmbeddingModel& model() { return model_; }

  // Argmax class; ties resolve to clean.
  Detection detect(std::span<const double> x) const;

 private:
  EmbeddingModel model_;
};

struct DetectorTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct DetectorTrainResult {
  std::vector<double> epoch_loss;
  double holdout_accuracy = 0.0;  // %
  std::size_t holdout_size = 0;
};

// Holds out holdout_fraction of each class, then trains on batches drawn
// half from each class. Throws std::invalid_argument if either class is empty.
DetectorTrainResult train_detector(Detector& detector, std::span<const std::vector<double>> clean,
                                   std::span<const std::vector<double>> adversarial,
                                   const DetectorTrainConfig& cfg);

// Percent of items classified correctly.
double detector_accuracy(const Detector& detector, std::span<const std::vector<double>> clean,
                         std::span<const std::vector<double>> adversarial);

// x itself when detected clean, otherwise purify(x, t_star).
std::vector<double> gated_purify(const Detector& detector, const Denoiser& denoiser,
                                 const DiffusionSchedule& schedule, std::span<const double> x,
                                 std::size_t t_star, const PurifyOptions& opts = {});

}  // namespace advlab
