#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advlab/features.hpp"
#include "advlab/params.hpp"
#include "advlab/tensor.hpp"
#include "advlab/waveform.hpp"

namespace advlab {

struct EncoderConfig {
  std::vector<std::size_t> channels{8, 16};
  std::size_t kernel = 3;
  std::size_t embedding_dim = 32;
  std::size_t n_speakers = 20;
  double arcface_margin = 0.2;
  double arcface_scale = 32.0;

  void validate() const;
};

// Row-normalized speaker centroids, n_speakers x embedding_dim.
struct Centroids {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  Tensor row_tensor(std::size_t i) const;
};

// ArcFace cross-entropy: logits s*cos(theta_j + m*[j == label]) where theta_j is
// the angle between the normalized embedding and normalized row j of
// class_weights. cos(theta + m) = cos(theta)cos(m) - sin(theta)sin(m) with
// sin(theta) = sqrt(clamp(1 - cos^2, 0, 1)).
Tensor arcface_loss(const Tensor& embedding, const Tensor& class_weights, std::size_t label,
                    double margin, double scale);
// s*cos(theta_j) for every class (no margin): the inference-time logits.
Tensor cosine_logits(const Tensor& embedding, const Tensor& class_weights, double scale);
// Differentiable cosine similarity of two rank-1 tensors.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

// Miniature residual conv speaker encoder: log-mel -> per stage a projecting
// conv block and a residual conv block (conv1d over time + relu) -> statistics
// pooling (per-channel temporal mean and std) -> affine embedding. The ArcFace
// class matrix is kept alongside for training.
class EmbeddingModel {
 public:
  EmbeddingModel(EncoderConfig cfg, FeatureConfig fcfg, std::uint64_t seed);
  // Throws ShapeError when a tensor is missing or mis-shaped.
  EmbeddingModel(EncoderConfig cfg, FeatureConfig fcfg, ParameterSet params);

  const EncoderConfig& config() const { return cfg_; }
  const FeatureExtractor& features() const { return features_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  // Same weights, no gradient tracking on parameters.
  EmbeddingModel frozen() const;
  EmbeddingModel trainable() const;

  // Minimum waveform length: enough samples for 4 frames.
  std::size_t min_samples() const;

  Tensor embed(const Tensor& waveform) const;
  Tensor embed_features(const Tensor& log_mel) const;
  std::vector<double> embed(std::span<const double> waveform) const;

  Tensor arcface_loss(const Tensor& embedding, std::size_t label) const;
  // Index of the largest no-margin logit and its softmax probabilities.
  std::vector<double> class_probabilities(const Tensor& embedding) const;

 private:
  void check_params() const;

  EncoderConfig cfg_;
  FeatureExtractor features_;
  ParameterSet params_;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr_start = 1e-3;
  double lr_end = 1e-3;  // cosine-decayed across all steps
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// Mini-batch ArcFace training with Adam. Deterministic given cfg.seed.
// Throws std::invalid_argument on an empty corpus or out-of-range labels.
TrainHistory train_encoder(EmbeddingModel& model, std::span<const Utterance> corpus,
                           const TrainConfig& cfg);

// Per-speaker mean embedding, unit-normalized. Throws std::invalid_argument
// when some speaker in [0, n_speakers) has no enrollment utterance.
Centroids speaker_centroids(const EmbeddingModel& model, std::span<const Utterance> enrollment,
                            std::size_t n_speakers);

// Embeds every utterance (parallel over utterances, read-only model).
std::vector<std::vector<double>> embed_all(const EmbeddingModel& model,
                                           std::span<const Utterance> utts);

}  // namespace advlab
