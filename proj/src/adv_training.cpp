#include "advlab/adv_training.hpp"

#include <algorithm>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "advlab/optim.hpp"
#include "advlab/rng.hpp"

namespace advlab {

void AdvTrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("adv-train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("adv-train: batch size must be >= 1");
  if (!(lr_start >= lr_end && lr_end > 0)) throw std::invalid_argument("adv-train: need lr_start >= lr_end > 0");
  if (!(adv_weight >= 0)) throw std::invalid_argument("adv-train: adv_weight must be non-negative");
  attack.pgd.validate();
  attack.adam.validate();
}

std::vector<LabeledWave> make_adv_batch(const EmbeddingModel& model, std::span<const Utterance> batch,
                                        const Centroids& centroids, const AttackSettings& attack,
                                        std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("make_adv_batch: empty batch");
  std::vector<std::size_t> labels;
  labels.reserve(batch.size());
  for (const auto& u : batch) labels.push_back(u.speaker);
  const auto targets = assign_targets(labels, centroids.n, seed);
  const auto adv = run_attacks(model, batch, targets, centroids, attack);
  std::vector<LabeledWave> out;
  out.reserve(2 * batch.size());
  for (const auto& ex : adv) out.push_back({ex.adversarial(), ex.source_label, true});
  for (const auto& u : batch) out.push_back({u.samples, u.speaker, false});
  return out;
}

namespace {

// Share of a few training items classified correctly by the ArcFace head.
double head_accuracy(const EmbeddingModel& model, std::span<const Utterance> utts) {
  const EmbeddingModel m = model.frozen();
  const std::size_t n = std::min<std::size_t>(utts.size(), 32);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = m.class_probabilities(m.embed(Tensor::vector(utts[i].samples)));
    ok += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == utts[i].speaker;
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

}  // namespace

AdvTrainHistory adversarial_finetune(EmbeddingModel& model, std::span<const Utterance> train,
                                     std::span<const Utterance> enrollment, const AdvTrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("adversarial_finetune: empty training set");
  const std::size_t n_spk = model.config().n_speakers;
  if (head_accuracy(model, train) <= 2.0 / static_cast<double>(n_spk))
    spdlog::warn("adversarial_finetune: starting model is near chance on training data; was it trained?");

  model = model.trainable();
  AdamOptimizer opt;
  Rng rng(derive_seed(cfg.seed, "adv-train"));
  std::vector<std::size_t> order(train.size());
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  AdvTrainHistory hist;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double clean_sum = 0.0, adv_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<Utterance> batch;
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(train[order[k]]);

      std::vector<LabeledWave> items;
      if (cfg.adv_weight > 0.0) {
        const Centroids c = speaker_centroids(model, enrollment, n_spk);
        items = make_adv_batch(model, batch, c, cfg.attack, derive_seed(cfg.seed, "adv-batch", step));
      } else {
        for (const auto& u : batch) items.push_back({u.samples, u.speaker, false});
      }

      const double inv = 1.0 / static_cast<double>(batch.size());
      for (const auto& it : items) {
        const double w = it.adversarial ? cfg.adv_weight : 1.0;
        Tensor loss = model.arcface_loss(model.embed(Tensor::vector(it.samples)), it.label);
        backward(scale(loss, w * inv));
        (it.adversarial ? adv_sum : clean_sum) += loss.item();
      }
      opt.step(model.params(), cosine_decay(cfg.lr_start, cfg.lr_end, step, total_steps));
      ++step;
    }
    const double n = static_cast<double>(train.size());
    hist.epoch_clean_loss.push_back(clean_sum / n);
    hist.epoch_adv_loss.push_back(cfg.adv_weight > 0.0 ? adv_sum / n : 0.0);
    hist.epoch_loss.push_back((clean_sum + cfg.adv_weight * adv_sum) / n);
  }
  return hist;
}

}  // namespace advlab
