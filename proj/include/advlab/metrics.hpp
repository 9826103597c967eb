#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/encoder.hpp"
#include "advlab/waveform.hpp"

namespace advlab {

// u.v / (|u||v|). Throws std::invalid_argument on a zero vector or length mismatch.
double cosine(std::span<const double> u, std::span<const double> v);

enum class Verdict { kAttackSuccess, kDefenseSuccess, kNeither };
const char* verdict_name(Verdict v);

// Nearest centroid is the source -> defense success; the target -> attack
// success; any third speaker -> neither.
Verdict judge(std::span<const double> embedding, std::size_t source, std::size_t target,
              const Centroids& centroids);

// Equal error rate in percent. Accept when score >= threshold; the sweep visits
// every distinct score and interpolates linearly between the two operating
// points where FAR - FRR changes sign. Throws std::invalid_argument on an
// empty list.
double eer_percent(std::span<const double> target_scores, std::span<const double> nontarget_scores);

struct TrialSet {
  std::vector<double> target_scores;     // same-speaker pairs
  std::vector<double> nontarget_scores;  // cross-speaker pairs
};

// All unordered pairs of the given embeddings, scored by cosine.
TrialSet make_trials(std::span<const std::vector<double>> embeddings,
                     std::span<const std::size_t> labels);

struct EvalReport {
  std::size_t n_adversarial = 0;
  double attack_success_rate = 0.0;   // %
  double defense_success_rate = 0.0;  // %
  double neither_rate = 0.0;          // %
  double sim_src = 0.0;  // mean cosine(processed adversarial, clean source utterance)
  double sim_tgt = 0.0;  // mean cosine(processed adversarial, target centroid)
  double eer = 0.0;      // % on clean trials after the defense front end
};

// Waveform transform placed in front of the encoder (identity, purifier,
// detector-gated purifier). Called with the index of the item in its set so
// stochastic defenses can derive a per-item seed.
using DefenseFn = std::function<std::vector<double>(std::span<const double>, std::size_t)>;

// How the label of a processed adversarial embedding is decided: nearest
// enrollment centroid, or the label of the most similar clean trial embedding
// (the batch-peer reading of the label rule).
enum class LabelRule { kCentroid, kBatchPeer };
const char* label_rule_name(LabelRule r);
LabelRule parse_label_rule(const std::string& s);

struct EvalInputs {
  const EmbeddingModel* model = nullptr;
  const Centroids* centroids = nullptr;
  DefenseFn defense;  // empty = no defense
  std::span<const AdvExample> adversarial;
  std::span<const Utterance> clean_trials;
  LabelRule label_rule = LabelRule::kCentroid;
};

// Runs judge over the processed adversarial set, the mean similarities and the
// clean-trial EER. Throws std::invalid_argument on empty sets.
EvalReport evaluate_defense(const EvalInputs& in);

}  // namespace advlab
