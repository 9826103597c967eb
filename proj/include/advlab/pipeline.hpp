#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "advlab/adv_training.hpp"
#include "advlab/attacks.hpp"
#include "advlab/detector.hpp"
#include "advlab/diffusion.hpp"
#include "advlab/encoder.hpp"
#include "advlab/features.hpp"
#include "advlab/io.hpp"
#include "advlab/synth.hpp"

namespace advlab {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every key the pipeline reads, with its default value.
json default_config();
// The file is merged over the defaults; `//` and `/* */` comments are allowed.
// Unknown keys are rejected.
json load_config(const fs::path& path);
// "a.b.c=value"; value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(json& cfg, std::string_view assignment);
// Builds every module config once, so invalid values fail before any work starts.
void validate_config(const json& cfg);

FeatureConfig feature_config(const json& cfg);
EncoderConfig encoder_config(const json& cfg);
TrainConfig encoder_train_config(const json& cfg);
AttackSettings attack_settings(const json& cfg, AttackMethod method);
AdvTrainConfig adv_train_config(const json& cfg, AttackMethod method);
DiffusionSchedule diffusion_schedule(const json& cfg);
DenoiserConfig denoiser_config(const json& cfg);
DenoiserTrainConfig denoiser_train_config(const json& cfg);
EncoderConfig detector_encoder_config(const json& cfg);
DetectorTrainConfig detector_train_config(const json& cfg);

struct StageInfo {
  std::string name;
  fs::path dir;
  std::string hash;
  bool reused = false;  // completed earlier with the same key
};

struct SweepRow {
  std::size_t t = 0;
  double attack_success = 0.0;   // %
  double defense_success = 0.0;  // %
  double sim_src = 0.0;
  double sim_tgt = 0.0;
  double clean_sim = 0.0;  // mean cosine(embed(x), embed(purify(x, t))) on clean audio
};

// Purifies every adversarial example and clean utterance at each t.
std::vector<SweepRow> sweep_steps(const EmbeddingModel& model, const Centroids& centroids,
                                  const Denoiser& denoiser, const DiffusionSchedule& schedule,
                                  std::span<const AdvExample> adversarial,
                                  std::span<const Utterance> clean, std::span<const std::size_t> steps,
                                  std::uint64_t seed);
std::string sweep_csv(std::span<const SweepRow> rows);
// Step with the highest defense success; ties go to the smaller step.
std::size_t choose_t_star(std::span<const SweepRow> rows);

// Stages write into out/<stage>-<hash>/, where the hash covers the stage's
// config slice and the hashes of the stages it consumes. A stage whose
// directory already holds a manifest is not run again. Work happens in a
// sibling ".partial" directory that is renamed on success.
class Pipeline {
 public:
  Pipeline(json cfg, fs::path out);

  const json& config() const { return cfg_; }

  StageInfo gen_data();
  StageInfo train_encoder();
  StageInfo attack_test();   // both methods, test-split sources
  StageInfo attack_train();  // seen attack on train-split sources (detector data, t* validation)
  StageInfo adv_train(AttackMethod method);
  StageInfo train_purifier();
  StageInfo train_detector();
  StageInfo sweep();
  StageInfo purify();
  StageInfo evaluate();
  // Runs every stage and copies the table and report to the output root.
  StageInfo reproduce_table();

  // Artifact loaders (each runs its stage first if needed).
  Corpus corpus();
  EmbeddingModel encoder();
  EmbeddingModel defended_encoder(AttackMethod method);
  Denoiser denoiser();
  Detector detector();
  std::size_t t_star();

 private:
  StageInfo run_stage(const std::string& name, const json& key,
                      const std::function<void(const fs::path& dir, json& manifest)>& body);

  json cfg_;
  fs::path out_;
  std::uint64_t seed_;
};

}  // namespace advlab
