#include "advlab/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "advlab/optim.hpp"
#include "advlab/rng.hpp"

namespace advlab {
namespace {

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

std::string stage_name(std::size_t s, const char* block, const char* part) {
  return "stage" + std::to_string(s) + "." + block + "." + part;
}

Tensor unit(const Tensor& v) { return v / sqrt(sum(v * v)); }

}  // namespace

void EncoderConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("encoder: channel plan is empty");
  for (auto c : channels)
    if (c == 0) throw std::invalid_argument("encoder: zero-width stage");
  if (kernel % 2 == 0) throw std::invalid_argument("encoder: kernel size must be odd");
  if (embedding_dim < 2) throw std::invalid_argument("encoder: embedding_dim must be >= 2");
  if (n_speakers < 2) throw std::invalid_argument("encoder: need at least 2 classes");
  if (!(arcface_margin >= 0 && arcface_margin < std::numbers::pi / 2))
    throw std::invalid_argument("encoder: arcface margin must lie in [0, pi/2)");
  if (!(arcface_scale > 0)) throw std::invalid_argument("encoder: arcface scale must be positive");
}

Tensor Centroids::row_tensor(std::size_t i) const {
  auto r = row(i);
  return Tensor::vector({r.begin(), r.end()});
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape()) throw ShapeError("cosine_similarity: shapes " + shape_str(u.shape()) + " and " + shape_str(v.shape()));
  return sum(u * v) / sqrt(sum(u * u) * sum(v * v));
}

namespace {

Tensor class_cosines(const Tensor& embedding, const Tensor& class_weights) {
  if (embedding.rank() != 1 || class_weights.rank() != 2 ||
      class_weights.dim(1) != embedding.dim(0))
    throw ShapeError("arcface: embedding " + shape_str(embedding.shape()) +
                     " incompatible with class weights " + shape_str(class_weights.shape()));
  const std::size_t n = class_weights.dim(0), e = class_weights.dim(1);
  Tensor row_norm = reshape(sqrt(sum_axis(class_weights * class_weights, 1)), {n, 1});
  Tensor w_unit = class_weights / expand(row_norm, {n, e});
  return reshape(matmul(w_unit, reshape(unit(embedding), {e, 1})), {n});
}

Tensor log_softmax_at(const Tensor& logits, std::size_t label) {
  double mx = logits.at(0);
  for (double v : logits.data()) mx = std::max(mx, v);
  Tensor lse = add_scalar(log(sum(exp(add_scalar(logits, -mx)))), mx);
  return reshape(slice(logits, 0, label, label + 1), {}) - lse;
}

}  // namespace

Tensor arcface_loss(const Tensor& embedding, const Tensor& class_weights, std::size_t label,
                    double margin, double scale_s) {
  const std::size_t n = class_weights.rank() == 2 ? class_weights.dim(0) : 0;
  if (label >= n)
    throw std::invalid_argument("arcface: label " + std::to_string(label) + " outside " +
                                std::to_string(n) + " classes");
  Tensor cos = class_cosines(embedding, class_weights);
  Tensor cy = slice(cos, 0, label, label + 1);
  Tensor sin = sqrt(clamp(add_scalar(scale(cy * cy, -1.0), 1.0), 0.0, 1.0));
  Tensor phi = scale(cy, std::cos(margin)) - scale(sin, std::sin(margin));
  Tensor logits = scale(concat({slice(cos, 0, 0, label), phi, slice(cos, 0, label + 1, n)}), scale_s);
  return scale(log_softmax_at(logits, label), -1.0);
}

Tensor cosine_logits(const Tensor& embedding, const Tensor& class_weights, double scale_s) {
  return scale(class_cosines(embedding, class_weights), scale_s);
}

EmbeddingModel::EmbeddingModel(EncoderConfig cfg, FeatureConfig fcfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), features_(fcfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "encoder-init"));
  std::size_t in = features_.config().n_mels;
  for (std::size_t s = 0; s < cfg_.channels.size(); ++s) {
    const std::size_t c = cfg_.channels[s];
    params_.add(stage_name(s, "proj", "w"), he_normal(rng, {c, in, cfg_.kernel}, in * cfg_.kernel));
    params_.add(stage_name(s, "proj", "b"), Tensor::zeros({c}, true));
    params_.add(stage_name(s, "res", "w"), he_normal(rng, {c, c, cfg_.kernel}, c * cfg_.kernel));
    params_.add(stage_name(s, "res", "b"), Tensor::zeros({c}, true));
    in = c;
  }
  const std::size_t pooled = 2 * in;
  params_.add("embed.w", he_normal(rng, {cfg_.embedding_dim, pooled}, pooled));
  params_.add("embed.b", Tensor::zeros({cfg_.embedding_dim}, true));
  std::vector<double> w(cfg_.n_speakers * cfg_.embedding_dim);
  for (auto& x : w) x = rng.normal();
  params_.add("arcface.w", Tensor({cfg_.n_speakers, cfg_.embedding_dim}, std::move(w), true));
}

EmbeddingModel::EmbeddingModel(EncoderConfig cfg, FeatureConfig fcfg, ParameterSet params)
    : cfg_(std::move(cfg)), features_(fcfg), params_(std::move(params)) {
  cfg_.validate();
  check_params();
}

void EmbeddingModel::check_params() const {
  std::size_t in = features_.config().n_mels;
  auto expect = [this](const std::string& name, const Shape& shape) {
    if (!params_.contains(name)) throw ShapeError("encoder: missing parameter '" + name + "'");
    if (params_.get(name).shape() != shape)
      throw ShapeError("encoder: parameter '" + name + "' has shape " +
                       shape_str(params_.get(name).shape()) + ", expected " + shape_str(shape));
  };
  for (std::size_t s = 0; s < cfg_.channels.size(); ++s) {
    const std::size_t c = cfg_.channels[s];
    expect(stage_name(s, "proj", "w"), {c, in, cfg_.kernel});
    expect(stage_name(s, "proj", "b"), {c});
    expect(stage_name(s, "res", "w"), {c, c, cfg_.kernel});
    expect(stage_name(s, "res", "b"), {c});
    in = c;
  }
  expect("embed.w", {cfg_.embedding_dim, 2 * in});
  expect("embed.b", {cfg_.embedding_dim});
  expect("arcface.w", {cfg_.n_speakers, cfg_.embedding_dim});
}

EmbeddingModel EmbeddingModel::frozen() const {
  return EmbeddingModel(cfg_, features_.config(), params_.frozen());
}

EmbeddingModel EmbeddingModel::trainable() const {
  return EmbeddingModel(cfg_, features_.config(), params_.trainable());
}

std::size_t EmbeddingModel::min_samples() const {
  const auto& f = features_.config();
  return f.frame_len + 3 * f.hop;
}

Tensor EmbeddingModel::embed_features(const Tensor& log_mel) const {
  if (log_mel.rank() != 2 || log_mel.dim(1) != features_.config().n_mels)
    throw ShapeError("embed: expected (frames x n_mels) features, got " + shape_str(log_mel.shape()));
  if (log_mel.dim(0) < 4)
    throw ShapeError("embed: need at least 4 frames, got " + std::to_string(log_mel.dim(0)));
  Tensor h = transpose(log_mel);
  for (std::size_t s = 0; s < cfg_.channels.size(); ++s) {
    h = relu(conv1d(h, params_.get(stage_name(s, "proj", "w")), params_.get(stage_name(s, "proj", "b"))));
    h = h + relu(conv1d(h, params_.get(stage_name(s, "res", "w")), params_.get(stage_name(s, "res", "b"))));
  }
  Tensor pooled = concat({mean_axis(h, 1), std_axis(h, 1)});
  const std::size_t p = pooled.dim(0);
  return reshape(matmul(params_.get("embed.w"), reshape(pooled, {p, 1})), {cfg_.embedding_dim}) +
         params_.get("embed.b");
}

Tensor EmbeddingModel::embed(const Tensor& waveform) const {
  if (waveform.rank() != 1 || waveform.dim(0) < min_samples())
    throw ShapeError("embed: waveform " + shape_str(waveform.shape()) + " shorter than " +
                     std::to_string(min_samples()) + " samples");
  return embed_features(features_.log_mel(waveform));
}

std::vector<double> EmbeddingModel::embed(std::span<const double> waveform) const {
  return embed(Tensor::vector({waveform.begin(), waveform.end()})).to_vector();
}

Tensor EmbeddingModel::arcface_loss(const Tensor& embedding, std::size_t label) const {
  return advlab::arcface_loss(embedding, params_.get("arcface.w"), label, cfg_.arcface_margin,
                              cfg_.arcface_scale);
}

std::vector<double> EmbeddingModel::class_probabilities(const Tensor& embedding) const {
  auto logits = cosine_logits(embedding, params_.get("arcface.w"), cfg_.arcface_scale).to_vector();
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += (l = std::exp(l - mx));
  for (auto& l : logits) l /= z;
  return logits;
}

TrainHistory train_encoder(EmbeddingModel& model, std::span<const Utterance> corpus,
                           const TrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("train_encoder: empty corpus");
  if (cfg.epochs == 0 || cfg.batch_size == 0)
    throw std::invalid_argument("train_encoder: epochs and batch size must be positive");
  for (const auto& u : corpus)
    if (u.speaker >= model.config().n_speakers)
      throw std::invalid_argument("train_encoder: label " + std::to_string(u.speaker) +
                                  " outside model classes");

  // The front end has no parameters, so features are computed once.
  std::vector<Tensor> feats(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(corpus.size()); ++i)
    feats[i] = model.features().log_mel(Tensor::vector(corpus[i].samples)).detach();

  model = model.trainable();
  AdamOptimizer opt;
  Rng rng(derive_seed(cfg.seed, "train-encoder"));
  std::vector<std::size_t> order(corpus.size());
  const std::size_t batches = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  TrainHistory hist;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto idx = order[k];
        Tensor loss = scale(model.arcface_loss(model.embed_features(feats[idx]), corpus[idx].speaker), inv);
        backward(loss);
        epoch_loss += loss.item() / inv;
      }
      opt.step(model.params(), cosine_decay(cfg.lr_start, cfg.lr_end, step, total_steps));
      ++step;
    }
    hist.epoch_loss.push_back(epoch_loss / static_cast<double>(corpus.size()));
  }
  return hist;
}

std::vector<std::vector<double>> embed_all(const EmbeddingModel& model,
                                           std::span<const Utterance> utts) {
  const EmbeddingModel frozen = model.frozen();
  std::vector<std::vector<double>> out(utts.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(utts.size()); ++i)
    out[i] = frozen.embed(std::span<const double>(utts[i].samples));
  return out;
}

Centroids speaker_centroids(const EmbeddingModel& model, std::span<const Utterance> enrollment,
                            std::size_t n_speakers) {
  const std::size_t dim = model.config().embedding_dim;
  Centroids c{n_speakers, dim, std::vector<double>(n_speakers * dim, 0.0)};
  std::vector<std::size_t> counts(n_speakers, 0);
  const auto embs = embed_all(model, enrollment);
  for (std::size_t i = 0; i < enrollment.size(); ++i) {
    const auto spk = enrollment[i].speaker;
    if (spk >= n_speakers) throw std::invalid_argument("speaker_centroids: label out of range");
    ++counts[spk];
    for (std::size_t d = 0; d < dim; ++d) c.values[spk * dim + d] += embs[i][d];
  }
  for (std::size_t s = 0; s < n_speakers; ++s) {
    if (counts[s] == 0)
      throw std::invalid_argument("speaker_centroids: no enrollment audio for speaker " +
                                  std::to_string(s));
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) norm += c.values[s * dim + d] * c.values[s * dim + d];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::invalid_argument("speaker_centroids: zero mean embedding");
    for (std::size_t d = 0; d < dim; ++d) c.values[s * dim + d] /= norm;
  }
  return c;
}

}  // namespace advlab
