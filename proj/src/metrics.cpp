#include "advlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advlab {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine: zero vector");
  return dot / std::sqrt(nu * nv);
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kAttackSuccess: return "attack_success";
    case Verdict::kDefenseSuccess: return "defense_success";
    case Verdict::kNeither: return "neither";
  }
  return "?";
}

Verdict judge(std::span<const double> embedding, std::size_t source, std::size_t target,
              const Centroids& centroids) {
  const std::size_t best = nearest_centroid(embedding, centroids);
  if (best == source) return Verdict::kDefenseSuccess;
  if (best == target) return Verdict::kAttackSuccess;
  return Verdict::kNeither;
}

double eer_percent(std::span<const double> target_scores, std::span<const double> nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty())
    throw std::invalid_argument("eer: need both target and nontarget scores");
  std::vector<double> tar(target_scores.begin(), target_scores.end());
  std::vector<double> non(nontarget_scores.begin(), nontarget_scores.end());
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  std::vector<double> thresholds;
  thresholds.reserve(tar.size() + non.size());
  std::merge(tar.begin(), tar.end(), non.begin(), non.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const auto nt = static_cast<double>(tar.size());
  const auto nn = static_cast<double>(non.size());
  // Operating points in increasing threshold order, ending with "reject all".
  std::size_t ti = 0, ni = 0;
  double prev_far = 1.0, prev_frr = 0.0;
  for (std::size_t k = 0; k <= thresholds.size(); ++k) {
    double far = 0.0, frr = 1.0;
    if (k < thresholds.size()) {
      const double th = thresholds[k];
      while (ti < tar.size() && tar[ti] < th) ++ti;
      while (ni < non.size() && non[ni] < th) ++ni;
      frr = static_cast<double>(ti) / nt;
      far = static_cast<double>(non.size() - ni) / nn;
    }
    const double d = far - frr;
    if (d <= 0.0) {
      const double prev_d = prev_far - prev_frr;
      if (k == 0 || d == 0.0) return 100.0 * frr;
      const double lambda = prev_d / (prev_d - d);
      return 100.0 * (prev_far + lambda * (far - prev_far));
    }
    prev_far = far;
    prev_frr = frr;
  }
  return 100.0 * prev_frr;  // unreachable: the final point has d = -1
}

TrialSet make_trials(std::span<const std::vector<double>> embeddings,
                     std::span<const std::size_t> labels) {
  if (embeddings.size() != labels.size()) throw std::invalid_argument("make_trials: label count mismatch");
  TrialSet t;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      const double s = cosine(embeddings[i], embeddings[j]);
      (labels[i] == labels[j] ? t.target_scores : t.nontarget_scores).push_back(s);
    }
  return t;
}

const char* label_rule_name(LabelRule r) { return r == LabelRule::kCentroid ? "centroid" : "batch"; }

LabelRule parse_label_rule(const std::string& s) {
  if (s == "centroid") return LabelRule::kCentroid;
  if (s == "batch") return LabelRule::kBatchPeer;
  throw std::invalid_argument("unknown label rule '" + s + "' (expected centroid or batch)");
}

EvalReport evaluate_defense(const EvalInputs& in) {
  if (!in.model || !in.centroids) throw std::invalid_argument("evaluate_defense: model and centroids required");
  if (in.adversarial.empty() || in.clean_trials.empty())
    throw std::invalid_argument("evaluate_defense: empty adversarial or trial set");
  const EmbeddingModel model = in.model->frozen();
  auto process = [&](std::span<const double> x, std::size_t idx) {
    return in.defense ? in.defense(x, idx) : std::vector<double>(x.begin(), x.end());
  };

  const std::size_t na = in.adversarial.size();
  std::vector<Verdict> verdicts(na);
  std::vector<double> sim_src(na), sim_tgt(na);
  std::vector<std::vector<double>> adv_emb(na);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(na); ++i) {
    const AdvExample& ex = in.adversarial[i];
    const auto processed = process(ex.adversarial(), static_cast<std::size_t>(i));
    const auto& e = adv_emb[i] = model.embed(std::span<const double>(processed));
    const auto src = model.embed(std::span<const double>(ex.source));
    verdicts[i] = judge(e, ex.source_label, ex.target_label, *in.centroids);
    sim_src[i] = cosine(e, src);
    sim_tgt[i] = cosine(e, in.centroids->row(ex.target_label));
  }

  const std::size_t nc = in.clean_trials.size();
  std::vector<std::vector<double>> clean_emb(nc);
  std::vector<std::size_t> labels(nc);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nc); ++i) {
    // Offset keeps trial seeds disjoint from the adversarial items.
    const auto processed = process(in.clean_trials[i].samples, na + static_cast<std::size_t>(i));
    clean_emb[i] = model.embed(std::span<const double>(processed));
    labels[i] = in.clean_trials[i].speaker;
  }

  if (in.label_rule == LabelRule::kBatchPeer) {
    const auto pred = predicted_labels_batch(clean_emb, labels, adv_emb);
    for (std::size_t i = 0; i < na; ++i) {
      const AdvExample& ex = in.adversarial[i];
      verdicts[i] = pred[i] == ex.source_label   ? Verdict::kDefenseSuccess
                    : pred[i] == ex.target_label ? Verdict::kAttackSuccess
                                                 : Verdict::kNeither;
    }
  }

  EvalReport r;
  r.n_adversarial = na;
  std::size_t atk = 0, def = 0;
  double ss = 0.0, st = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    atk += verdicts[i] == Verdict::kAttackSuccess;
    def += verdicts[i] == Verdict::kDefenseSuccess;
    ss += sim_src[i];
    st += sim_tgt[i];
  }
  const double n = static_cast<double>(na);
  r.attack_success_rate = 100.0 * static_cast<double>(atk) / n;
  r.defense_success_rate = 100.0 * static_cast<double>(def) / n;
  r.neither_rate = 100.0 * static_cast<double>(na - atk - def) / n;
  r.sim_src = ss / n;
  r.sim_tgt = st / n;
  const TrialSet trials = make_trials(clean_emb, labels);
  r.eer = eer_percent(trials.target_scores, trials.nontarget_scores);
  return r;
}

}  // namespace advlab
