#include "advlab/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "advlab/optim.hpp"
#include "advlab/rng.hpp"

namespace advlab {

const char* detect_label_name(DetectLabel l) {
  return l == DetectLabel::kAdversarial ? "adversarial" : "clean";
}

EncoderConfig default_detector_config() {
  EncoderConfig c;
  c.channels = {16, 16};
  c.embedding_dim = 16;
  c.n_speakers = 2;
  return c;
}

Detector::Detector(EncoderConfig cfg, FeatureConfig fcfg, std::uint64_t seed)
    : Detector(EmbeddingModel(std::move(cfg), std::move(fcfg), seed)) {}

Detector::Detector(EmbeddingModel model) : model_(std::move(model)) {
  if (model_.config().n_speakers != 2)
    throw std::invalid_argument("detector: head must have exactly two classes");
}

Detection Detector::detect(std::span<const double> x) const {
  const EmbeddingModel m = model_.frozen();
  const auto p = m.class_probabilities(m.embed(Tensor::vector({x.begin(), x.end()})));
  Detection d;
  d.score = p[1];
  d.label = p[1] > p[0] ? DetectLabel::kAdversarial : DetectLabel::kClean;
  return d;
}

namespace {

struct Item {
  Tensor feats;
  std::size_t label;
};

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  rng.shuffle(v);
  return v;
}

}  // namespace

DetectorTrainResult train_detector(Detector& detector, std::span<const std::vector<double>> clean,
                                   std::span<const std::vector<double>> adversarial,
                                   const DetectorTrainConfig& cfg) {
  if (clean.empty() || adversarial.empty())
    throw std::invalid_argument("train_detector: need both clean and adversarial examples");
  if (cfg.epochs == 0 || cfg.batch_size < 2)
    throw std::invalid_argument("train_detector: epochs must be positive and batch size at least 2");
  if (!(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0))
    throw std::invalid_argument("train_detector: holdout fraction must lie in [0, 1)");

  Rng rng(derive_seed(cfg.seed, "train-detector"));
  const EmbeddingModel& fe = detector.model();
  std::array<std::vector<Item>, 2> train, hold;
  auto split = [&](std::span<const std::vector<double>> xs, std::size_t label) {
    const auto order = shuffled(xs.size(), rng);
    auto n_hold = static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(xs.size())));
    if (xs.size() - n_hold < 1) n_hold = xs.size() - 1;
    std::vector<Item> items(xs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(xs.size()); ++i)
      items[i] = {fe.features().log_mel(Tensor::vector(xs[order[i]])).detach(), label};
    hold[label].assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train[label].assign(items.begin() + static_cast<std::ptrdiff_t>(n_hold), items.end());
  };
  split(clean, 0);
  split(adversarial, 1);

  EmbeddingModel& model = detector.model();
  model = model.trainable();
  AdamOptimizer opt;
  const std::size_t half = cfg.batch_size / 2;
  const std::size_t larger = std::max(train[0].size(), train[1].size());
  const std::size_t batches = (larger + half - 1) / half;
  const std::size_t total_steps = cfg.epochs * batches;
  DetectorTrainResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::array<std::vector<std::size_t>, 2> order{shuffled(train[0].size(), rng), shuffled(train[1].size(), rng)};
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const double inv = 1.0 / static_cast<double>(2 * half);
      for (std::size_t k = 0; k < 2 * half; ++k) {
        const std::size_t cls = k % 2;
        // The smaller class wraps around so every batch stays balanced.
        const auto& it = train[cls][order[cls][(b * half + k / 2) % order[cls].size()]];
        Tensor loss = scale(model.arcface_loss(model.embed_features(it.feats), it.label), inv);
        backward(loss);
        epoch_loss += loss.item() / inv;
        ++seen;
      }
      opt.step(model.params(), cosine_decay(cfg.lr_start, cfg.lr_end, step, total_steps));
      ++step;
    }
    res.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
  }

  const EmbeddingModel frozen = model.frozen();
  std::size_t correct = 0, total = 0;
  for (const auto& cls : hold)
    for (const auto& it : cls) {
      const auto p = frozen.class_probabilities(frozen.embed_features(it.feats));
      const std::size_t pred = p[1] > p[0] ? 1 : 0;
      correct += pred == it.label;
      ++total;
    }
  res.holdout_size = total;
  res.holdout_accuracy = total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return res;
}

double detector_accuracy(const Detector& detector, std::span<const std::vector<double>> clean,
                         std::span<const std::vector<double>> adversarial) {
  const std::size_t n = clean.size() + adversarial.size();
  if (n == 0) throw std::invalid_argument("detector_accuracy: empty set");
  std::size_t correct = 0;
#pragma omp parallel for reduction(+ : correct) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const bool adv = static_cast<std::size_t>(i) >= clean.size();
    const auto& x = adv ? adversarial[i - clean.size()] : clean[i];
    const auto d = detector.detect(x);
    correct += (d.label == DetectLabel::kAdversarial) == adv;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<double> gated_purify(const Detector& detector, const Denoiser& denoiser,
                                 const DiffusionSchedule& schedule, std::span<const double> x,
                                 std::size_t t_star, const PurifyOptions& opts) {
  if (detector.detect(x).label == DetectLabel::kClean) return {x.begin(), x.end()};
  return purify(denoiser, schedule, x, t_star, opts);
}

}  // namespace advlab
