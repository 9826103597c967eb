#include "advlab/pipeline.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "advlab/metrics.hpp"
#include "advlab/rng.hpp"

namespace advlab {

json default_config() {
  return json::parse(R"({
    "seed": 0,
    "corpus": {"n_speakers": 20, "utts_per_speaker": 10, "duration_s": 1.0,
               "sample_rate": 8000.0, "peak": 0.9},
    "features": {"frame_len": 200, "hop": 80, "n_fft": 256, "n_mels": 40,
                 "fmin": 50.0, "fmax": 4000.0},
    "encoder": {"channels": [8, 16], "kernel": 3, "embedding_dim": 32,
                "arcface_margin": 0.2, "arcface_scale": 32.0,
                "epochs": 100, "batch_size": 16, "lr_start": 0.003, "lr_end": 0.0001},
    "attack": {"budget_fraction": 0.05,
               "pgd": {"iterations": 20, "alpha_start": 0.004, "alpha_end": 0.0004},
               "adam": {"iterations": 50, "lr_start": 0.001, "lr_end": 0.00001,
                        "beta1": 0.9, "beta2": 0.999, "xi": 1e-8}},
    "adv_train": {"epochs": 3, "batch_size": 4, "lr_start": 0.01, "lr_end": 0.00001,
                  "adv_weight": 1.0},
    "diffusion": {"steps": 50, "beta_min": 0.0001, "beta_max": 0.05,
                  "denoiser": {"channels": 32, "kernel": 3, "time_dim": 16,
                               "dilations": [1, 2, 4, 8]},
                  "train": {"steps": 1500, "batch_size": 16, "crop": 1000, "lr": 0.0002},
                  "stochastic": true,
                  "sweep_steps": [0, 1, 2, 3, 4, 6, 8, 12, 18, 25, 50],
                  "sweep_items": 40,
                  "t_star": null},
    "detector": {"channels": [16, 16], "kernel": 3, "embedding_dim": 16,
                 "epochs": 10, "batch_size": 16, "lr_start": 0.001, "lr_end": 0.00001,
                 "holdout_fraction": 0.1, "attack": "pgd"},
    "eval": {"n_adversarial": 256, "label_rule": "centroid"}
  })");
}

namespace {

void check_known(const json& defaults, const json& patch, const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const auto& d = defaults.at(it.key());
    if (d.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be an object");
      check_known(d, it.value(), path);
    }
  }
}

template <class T>
T get(const json& j, const char* key) {
  return j.at(key).get<T>();
}

}  // namespace

json load_config(const fs::path& path) {
  json patch;
  try {
    patch = json::parse(read_file(path), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  if (!patch.is_object()) throw ConfigError("config '" + path.string() + "' must hold an object");
  json cfg = default_config();
  check_known(cfg, patch, "");
  cfg.merge_patch(patch);
  return cfg;
}

void apply_override(json& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

FeatureConfig feature_config(const json& cfg) {
  const auto& f = cfg.at("features");
  FeatureConfig c;
  c.sample_rate = get<double>(cfg.at("corpus"), "sample_rate");
  c.frame_len = get<std::size_t>(f, "frame_len");
  c.hop = get<std::size_t>(f, "hop");
  c.n_fft = get<std::size_t>(f, "n_fft");
  c.n_mels = get<std::size_t>(f, "n_mels");
  c.fmin = get<double>(f, "fmin");
  c.fmax = get<double>(f, "fmax");
  return c;
}

EncoderConfig encoder_config(const json& cfg) {
  const auto& e = cfg.at("encoder");
  EncoderConfig c;
  c.channels = get<std::vector<std::size_t>>(e, "channels");
  c.kernel = get<std::size_t>(e, "kernel");
  c.embedding_dim = get<std::size_t>(e, "embedding_dim");
  c.n_speakers = get<std::size_t>(cfg.at("corpus"), "n_speakers");
  c.arcface_margin = get<double>(e, "arcface_margin");
  c.arcface_scale = get<double>(e, "arcface_scale");
  return c;
}

TrainConfig encoder_train_config(const json& cfg) {
  const auto& e = cfg.at("encoder");
  TrainConfig c;
  c.epochs = get<std::size_t>(e, "epochs");
  c.batch_size = get<std::size_t>(e, "batch_size");
  c.lr_start = get<double>(e, "lr_start");
  c.lr_end = get<double>(e, "lr_end");
  c.seed = derive_seed(get<std::uint64_t>(cfg, "seed"), "train-encoder");
  return c;
}

AttackSettings attack_settings(const json& cfg, AttackMethod method) {
  const auto& a = cfg.at("attack");
  AttackSettings s;
  s.method = method;
  s.budget_fraction = get<double>(a, "budget_fraction");
  const auto& p = a.at("pgd");
  s.pgd.iterations = get<std::size_t>(p, "iterations");
  s.pgd.alpha_start = get<double>(p, "alpha_start");
  s.pgd.alpha_end = get<double>(p, "alpha_end");
  const auto& m = a.at("adam");
  s.adam.iterations = get<std::size_t>(m, "iterations");
  s.adam.lr_start = get<double>(m, "lr_start");
  s.adam.lr_end = get<double>(m, "lr_end");
  s.adam.beta1 = get<double>(m, "beta1");
  s.adam.beta2 = get<double>(m, "beta2");
  s.adam.xi = get<double>(m, "xi");
  return s;
}

AdvTrainConfig adv_train_config(const json& cfg, AttackMethod method) {
  const auto& a = cfg.at("adv_train");
  AdvTrainConfig c;
  c.attack = attack_settings(cfg, method);
  c.epochs = get<std::size_t>(a, "epochs");
  c.batch_size = get<std::size_t>(a, "batch_size");
  c.lr_start = get<double>(a, "lr_start");
  c.lr_end = get<double>(a, "lr_end");
  c.adv_weight = get<double>(a, "adv_weight");
  c.seed = derive_seed(get<std::uint64_t>(cfg, "seed"), std::string("adv-train-") + method_name(method));
  return c;
}

DiffusionSchedule diffusion_schedule(const json& cfg) {
  const auto& d = cfg.at("diffusion");
  return make_schedule(get<std::size_t>(d, "steps"), get<double>(d, "beta_min"), get<double>(d, "beta_max"));
}

DenoiserConfig denoiser_config(const json& cfg) {
  const auto& d = cfg.at("diffusion").at("denoiser");
  DenoiserConfig c;
  c.channels = get<std::size_t>(d, "channels");
  c.kernel = get<std::size_t>(d, "kernel");
  c.time_dim = get<std::size_t>(d, "time_dim");
  c.dilations = get<std::vector<std::size_t>>(d, "dilations");
  return c;
}

DenoiserTrainConfig denoiser_train_config(const json& cfg) {
  const auto& t = cfg.at("diffusion").at("train");
  DenoiserTrainConfig c;
  c.steps = get<std::size_t>(t, "steps");
  c.batch_size = get<std::size_t>(t, "batch_size");
  c.crop = get<std::size_t>(t, "crop");
  c.lr = get<double>(t, "lr");
  c.seed = derive_seed(get<std::uint64_t>(cfg, "seed"), "train-purifier");
  return c;
}

EncoderConfig detector_encoder_config(const json& cfg) {
  const auto& d = cfg.at("detector");
  EncoderConfig c = default_detector_config();
  c.channels = get<std::vector<std::size_t>>(d, "channels");
  c.kernel = get<std::size_t>(d, "kernel");
  c.embedding_dim = get<std::size_t>(d, "embedding_dim");
  return c;
}

DetectorTrainConfig detector_train_config(const json& cfg) {
  const auto& d = cfg.at("detector");
  DetectorTrainConfig c;
  c.epochs = get<std::size_t>(d, "epochs");
  c.batch_size = get<std::size_t>(d, "batch_size");
  c.lr_start = get<double>(d, "lr_start");
  c.lr_end = get<double>(d, "lr_end");
  c.holdout_fraction = get<double>(d, "holdout_fraction");
  c.seed = derive_seed(get<std::uint64_t>(cfg, "seed"), "train-detector");
  return c;
}

void validate_config(const json& cfg) {
  try {
    check_known(default_config(), cfg, "");
    get<std::uint64_t>(cfg, "seed");
    const auto& c = cfg.at("corpus");
    if (get<std::size_t>(c, "n_speakers") < 2) throw ConfigError("corpus.n_speakers must be >= 2");
    if (get<std::size_t>(c, "utts_per_speaker") < 3) throw ConfigError("corpus.utts_per_speaker must be >= 3");
    if (get<double>(c, "duration_s") < 0.5) throw ConfigError("corpus.duration_s must be >= 0.5");
    if (!(get<double>(c, "peak") > 0.0 && get<double>(c, "peak") <= 1.0))
      throw ConfigError("corpus.peak must lie in (0, 1]");
    feature_config(cfg).validate();
    encoder_config(cfg).validate();
    const auto tc = encoder_train_config(cfg);
    if (tc.epochs == 0 || tc.batch_size == 0) throw ConfigError("encoder.epochs and batch_size must be positive");
    for (auto m : {AttackMethod::kPgd, AttackMethod::kAdam}) {
      const auto s = attack_settings(cfg, m);
      s.pgd.validate();
      s.adam.validate();
      if (!(s.budget_fraction > 0.0)) throw ConfigError("attack.budget_fraction must be positive");
      adv_train_config(cfg, m).validate();
    }
    const auto sched = diffusion_schedule(cfg);
    denoiser_config(cfg).validate();
    const auto dt = denoiser_train_config(cfg);
    if (dt.batch_size == 0 || dt.crop == 0) throw ConfigError("diffusion.train batch_size and crop must be positive");
    const auto& d = cfg.at("diffusion");
    get<bool>(d, "stochastic");
    for (auto t : get<std::vector<std::size_t>>(d, "sweep_steps"))
      if (t > sched.steps) throw ConfigError("diffusion.sweep_steps entry " + std::to_string(t) + " exceeds diffusion.steps");
    if (get<std::vector<std::size_t>>(d, "sweep_steps").empty()) throw ConfigError("diffusion.sweep_steps is empty");
    if (get<std::size_t>(d, "sweep_items") == 0) throw ConfigError("diffusion.sweep_items must be positive");
    if (!d.at("t_star").is_null() && get<std::size_t>(d, "t_star") > sched.steps)
      throw ConfigError("diffusion.t_star exceeds diffusion.steps");
    detector_encoder_config(cfg).validate();
    const auto det = detector_train_config(cfg);
    if (det.epochs == 0 || det.batch_size < 2) throw ConfigError("detector.epochs must be positive and batch_size >= 2");
    parse_method(get<std::string>(cfg.at("detector"), "attack"));
    if (get<std::size_t>(cfg.at("eval"), "n_adversarial") == 0) throw ConfigError("eval.n_adversarial must be positive");
    parse_label_rule(get<std::string>(cfg.at("eval"), "label_rule"));
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::vector<SweepRow> sweep_steps(const EmbeddingModel& model, const Centroids& centroids,
                                  const Denoiser& denoiser, const DiffusionSchedule& schedule,
                                  std::span<const AdvExample> adversarial,
                                  std::span<const Utterance> clean, std::span<const std::size_t> steps,
                                  std::uint64_t seed) {
  if (adversarial.empty() || clean.empty()) throw std::invalid_argument("sweep_steps: empty set");
  const EmbeddingModel m = model.frozen();
  const Denoiser den = denoiser.frozen();
  const std::size_t na = adversarial.size(), nc = clean.size();
  std::vector<std::vector<double>> src_emb(na), clean_emb(nc);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(na); ++i)
    src_emb[i] = m.embed(std::span<const double>(adversarial[i].source));
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nc); ++i)
    clean_emb[i] = m.embed(std::span<const double>(clean[i].samples));

  std::vector<SweepRow> rows;
  for (const std::size_t t : steps) {
    std::vector<Verdict> verdict(na);
    std::vector<double> ss(na), st(na), cs(nc);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(na); ++i) {
      const auto& ex = adversarial[i];
      const auto x = purify(den, schedule, ex.adversarial(), t, {derive_seed(seed, "sweep-adv", i), true});
      const auto e = m.embed(std::span<const double>(x));
      verdict[i] = judge(e, ex.source_label, ex.target_label, centroids);
      ss[i] = cosine(e, src_emb[i]);
      st[i] = cosine(e, centroids.row(ex.target_label));
    }
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nc); ++i) {
      const auto x = purify(den, schedule, clean[i].samples, t, {derive_seed(seed, "sweep-clean", i), true});
      cs[i] = cosine(m.embed(std::span<const double>(x)), clean_emb[i]);
    }
    SweepRow r;
    r.t = t;
    for (std::size_t i = 0; i < na; ++i) {
      r.attack_success += verdict[i] == Verdict::kAttackSuccess;
      r.defense_success += verdict[i] == Verdict::kDefenseSuccess;
      r.sim_src += ss[i];
      r.sim_tgt += st[i];
    }
    r.attack_success *= 100.0 / static_cast<double>(na);
    r.defense_success *= 100.0 / static_cast<double>(na);
    r.sim_src /= static_cast<double>(na);
    r.sim_tgt /= static_cast<double>(na);
    for (double v : cs) r.clean_sim += v;
    r.clean_sim /= static_cast<double>(nc);
    rows.push_back(r);
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "t,attack_success,defense_success,sim_src,sim_tgt,clean_sim\n";
  for (const auto& r : rows)
    out += std::to_string(r.t) + "," + format_double(r.attack_success) + "," +
           format_double(r.defense_success) + "," + format_double(r.sim_src) + "," +
           format_double(r.sim_tgt) + "," + format_double(r.clean_sim) + "\n";
  return out;
}

std::size_t choose_t_star(std::span<const SweepRow> rows) {
  if (rows.empty()) throw std::invalid_argument("choose_t_star: empty sweep");
  const SweepRow* best = &rows[0];
  for (const auto& r : rows)
    if (r.defense_success > best->defense_success ||
        (r.defense_success == best->defense_success && r.t < best->t))
      best = &r;
  return best->t;
}

// ---------------------------------------------------------------------------

namespace {

void add_input(json& manifest, const fs::path& out, const fs::path& file) {
  manifest["inputs"][fs::relative(file, out).generic_string()] = file_hash(file);
}

json output_hashes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = file_hash(f);
  return out;
}

std::vector<Utterance> sources_of(std::span<const AdvExample> set) {
  std::vector<Utterance> out;
  for (const auto& ex : set) out.push_back({ex.source_id, ex.source_label, ex.source});
  return out;
}

}  // namespace

Pipeline::Pipeline(json cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out)) {
  validate_config(cfg_);
  seed_ = cfg_.at("seed").get<std::uint64_t>();
}

StageInfo Pipeline::run_stage(const std::string& name, const json& key,
                              const std::function<void(const fs::path&, json&)>& body) {
  const std::string hash = git_blob_hash(key.dump());
  StageInfo info{name, out_ / (name + "-" + hash.substr(0, 12)), hash, false};
  if (fs::exists(info.dir / "manifest.json")) {
    const auto m = json::parse(read_file(info.dir / "manifest.json"));
    if (m.value("config_hash", "") == hash) {
      spdlog::debug("{}: up to date ({})", name, info.dir.string());
      info.reused = true;
      return info;
    }
    throw IoError("stage directory '" + info.dir.string() + "' holds a manifest for a different config");
  }
  fs::path partial = info.dir;
  partial += ".partial";
  fs::remove_all(partial);
  fs::create_directories(partial);
  spdlog::info("{}: running", name);
  json manifest = {{"stage", name}, {"config_hash", hash}, {"config", key},
                   {"seeds", json::object()}, {"inputs", json::object()}};
  body(partial, manifest);
  manifest["outputs"] = output_hashes(partial);
  write_file(partial / "manifest.json", manifest.dump(2) + "\n");
  fs::rename(partial, info.dir);
  spdlog::info("{}: done ({})", name, info.dir.string());
  return info;
}

StageInfo Pipeline::gen_data() {
  const json key = {{"stage", "gen-data"}, {"corpus", cfg_.at("corpus")}, {"seed", seed_}};
  return run_stage("gen-data", key, [&](const fs::path& dir, json& manifest) {
    const auto& c = cfg_.at("corpus");
    SynthConfig sc;
    sc.sample_rate = c.at("sample_rate").get<double>();
    sc.duration_s = c.at("duration_s").get<double>();
    sc.peak = c.at("peak").get<double>();
    const auto corpus_seed = derive_seed(seed_, "corpus");
    const Corpus corpus = make_corpus(c.at("n_speakers").get<std::size_t>(),
                                      c.at("utts_per_speaker").get<std::size_t>(), corpus_seed, sc);
    write_corpus(dir, corpus);
    ParameterSet waves;
    for (const auto& e : corpus.entries) waves.add(e.utt.id, Tensor::vector(e.utt.samples));
    save_checkpoint(dir / "corpus.aemb", waves);
    json speakers = json::array();
    for (const auto& s : corpus.speakers) {
      json f = json::array();
      for (const auto& fm : s.formants) f.push_back({{"center_hz", fm.center_hz}, {"bandwidth_hz", fm.bandwidth_hz}});
      speakers.push_back({{"f0_hz", s.f0_hz}, {"formants", f}, {"tilt_db_per_octave", s.tilt_db_per_octave},
                          {"jitter", s.jitter}});
    }
    write_file(dir / "speakers.json", speakers.dump(2) + "\n");
    manifest["seeds"]["corpus"] = corpus_seed;
  });
}

Corpus Pipeline::corpus() {
  const auto info = gen_data();
  const ParameterSet waves = load_checkpoint(info.dir / "corpus.aemb");
  const auto& c = cfg_.at("corpus");
  Corpus corpus;
  corpus.n_speakers = c.at("n_speakers").get<std::size_t>();
  corpus.utts_per_speaker = c.at("utts_per_speaker").get<std::size_t>();
  corpus.master_seed = derive_seed(seed_, "corpus");
  corpus.synth.sample_rate = c.at("sample_rate").get<double>();
  corpus.synth.duration_s = c.at("duration_s").get<double>();
  corpus.synth.peak = c.at("peak").get<double>();
  std::istringstream csv(read_file(info.dir / "manifest.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id, spk, split, seed;
    std::getline(ls, id, ',');
    std::getline(ls, spk, ',');
    std::getline(ls, split, ',');
    std::getline(ls, seed, ',');
    CorpusEntry e;
    e.utt = {id, std::stoul(spk), waves.get(id).to_vector()};
    e.split = parse_split(split);
    e.seed = std::stoull(seed);
    corpus.entries.push_back(std::move(e));
  }
  return corpus;
}

StageInfo Pipeline::train_encoder() {
  const auto data = gen_data();
  const json key = {{"stage", "train-encoder"}, {"data", data.hash}, {"features", cfg_.at("features")},
                    {"encoder", cfg_.at("encoder")}, {"seed", seed_}};
  return run_stage("train-encoder", key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, data.dir / "corpus.aemb");
    const Corpus c = corpus();
    const auto train = c.split(Split::kTrain);
    const auto tc = encoder_train_config(cfg_);
    EmbeddingModel model(encoder_config(cfg_), feature_config(cfg_), derive_seed(seed_, "encoder-init"));
    const auto hist = advlab::train_encoder(model, train, tc);
    save_checkpoint(dir / "encoder.aemb", model.params());
    write_file(dir / "history.json", json({{"epoch_loss", hist.epoch_loss}}).dump(2) + "\n");
    manifest["seeds"]["init"] = derive_seed(seed_, "encoder-init");
    manifest["seeds"]["train"] = tc.seed;
  });
}

EmbeddingModel Pipeline::encoder() {
  const auto info = train_encoder();
  return EmbeddingModel(encoder_config(cfg_), feature_config(cfg_), load_checkpoint(info.dir / "encoder.aemb"));
}

StageInfo Pipeline::attack_test() {
  const auto enc = train_encoder();
  const json key = {{"stage", "attack"}, {"encoder", enc.hash}, {"attack", cfg_.at("attack")},
                    {"n_adversarial", cfg_.at("eval").at("n_adversarial")}, {"seed", seed_}};
  return run_stage("attack", key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, enc.dir / "encoder.aemb");
    const Corpus c = corpus();
    const auto test = c.split(Split::kTest);
    const auto model = encoder();
    const auto centroids = speaker_centroids(model, c.split(Split::kEnroll), c.n_speakers);
    const std::size_t n = cfg_.at("eval").at("n_adversarial").get<std::size_t>();
    std::vector<Utterance> sources;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      sources.push_back(test[i % test.size()]);
      labels.push_back(sources.back().speaker);
    }
    const auto pair_seed = derive_seed(seed_, "attack-pairs");
    const auto targets = assign_targets(labels, c.n_speakers, pair_seed);
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) {
      const auto set = run_attacks(model, sources, targets, centroids, attack_settings(cfg_, m));
      save_adv_set(dir / method_name(m), set);
      export_adv_wavs(dir / method_name(m) / "wav", set, static_cast<unsigned>(c.synth.sample_rate));
    }
    manifest["seeds"]["pairs"] = pair_seed;
  });
}

StageInfo Pipeline::attack_train() {
  const auto enc = train_encoder();
  const std::string method = cfg_.at("detector").at("attack").get<std::string>();
  const json key = {{"stage", "attack-train"}, {"encoder", enc.hash}, {"attack", cfg_.at("attack")},
                    {"method", method}, {"seed", seed_}};
  return run_stage("attack-train", key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, enc.dir / "encoder.aemb");
    const Corpus c = corpus();
    const auto train = c.split(Split::kTrain);
    const auto model = encoder();
    const auto centroids = speaker_centroids(model, c.split(Split::kEnroll), c.n_speakers);
    std::vector<std::size_t> labels;
    for (const auto& u : train) labels.push_back(u.speaker);
    const auto pair_seed = derive_seed(seed_, "attack-train-pairs");
    const auto targets = assign_targets(labels, c.n_speakers, pair_seed);
    const auto set = run_attacks(model, train, targets, centroids, attack_settings(cfg_, parse_method(method)));
    save_adv_set(dir / method, set);
    manifest["seeds"]["pairs"] = pair_seed;
  });
}

StageInfo Pipeline::adv_train(AttackMethod method) {
  const auto enc = train_encoder();
  const std::string name = std::string("adv-train-") + method_name(method);
  const json key = {{"stage", name}, {"encoder", enc.hash}, {"adv_train", cfg_.at("adv_train")},
                    {"attack", cfg_.at("attack")}, {"seed", seed_}};
  return run_stage(name, key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, enc.dir / "encoder.aemb");
    const Corpus c = corpus();
    auto model = encoder();
    const auto ac = adv_train_config(cfg_, method);
    const auto hist = adversarial_finetune(model, c.split(Split::kTrain), c.split(Split::kEnroll), ac);
    save_checkpoint(dir / "encoder.aemb", model.params());
    write_file(dir / "history.json", json({{"epoch_loss", hist.epoch_loss},
                                           {"epoch_clean_loss", hist.epoch_clean_loss},
                                           {"epoch_adv_loss", hist.epoch_adv_loss}}).dump(2) + "\n");
    manifest["seeds"]["train"] = ac.seed;
  });
}

EmbeddingModel Pipeline::defended_encoder(AttackMethod method) {
  const auto info = adv_train(method);
  return EmbeddingModel(encoder_config(cfg_), feature_config(cfg_), load_checkpoint(info.dir / "encoder.aemb"));
}

StageInfo Pipeline::train_purifier() {
  const auto data = gen_data();
  const auto& d = cfg_.at("diffusion");
  const json key = {{"stage", "train-purifier"}, {"data", data.hash},
                    {"schedule", {d.at("steps"), d.at("beta_min"), d.at("beta_max")}},
                    {"denoiser", d.at("denoiser")}, {"train", d.at("train")}, {"seed", seed_}};
  return run_stage("train-purifier", key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, data.dir / "corpus.aemb");
    const Corpus c = corpus();
    const auto sched = diffusion_schedule(cfg_);
    const auto init_seed = derive_seed(seed_, "denoiser-init");
    Denoiser den(denoiser_config(cfg_), init_seed);
    const auto test = c.split(Split::kTest);
    const auto eval_seed = derive_seed(seed_, "denoiser-eval");
    const double mse_init = noise_prediction_mse(den, test, sched, eval_seed);
    const auto tc = denoiser_train_config(cfg_);
    const auto hist = train_denoiser(den, c.split(Split::kTrain), sched, tc);
    const double mse_trained = noise_prediction_mse(den, test, sched, eval_seed);
    save_checkpoint(dir / "denoiser.aemb", den.params());
    write_file(dir / "history.json", json({{"step_loss", hist.step_loss},
                                           {"heldout_mse_init", mse_init},
                                           {"heldout_mse", mse_trained}}).dump(2) + "\n");
    manifest["seeds"]["init"] = init_seed;
    manifest["seeds"]["train"] = tc.seed;
    manifest["seeds"]["eval"] = eval_seed;
  });
}

Denoiser Pipeline::denoiser() {
  const auto info = train_purifier();
  return Denoiser(denoiser_config(cfg_), load_checkpoint(info.dir / "denoiser.aemb"));
}

StageInfo Pipeline::train_detector() {
  const auto data = gen_data();
  const auto adv = attack_train();
  const json key = {{"stage", "train-detector"}, {"data", data.hash}, {"adversarial", adv.hash},
                    {"features", cfg_.at("features")}, {"detector", cfg_.at("detector")}, {"seed", seed_}};
  return run_stage("train-detector", key, [&](const fs::path& dir, json& manifest) {
    const std::string method = cfg_.at("detector").at("attack").get<std::string>();
    add_input(manifest, out_, data.dir / "corpus.aemb");
    add_input(manifest, out_, adv.dir / method / "adversarial.aemb");
    const Corpus c = corpus();
    std::vector<std::vector<double>> clean, attacked;
    for (const auto& u : c.split(Split::kTrain)) clean.push_back(u.samples);
    for (const auto& ex : load_adv_set(adv.dir / method)) attacked.push_back(ex.adversarial());
    const auto init_seed = derive_seed(seed_, "detector-init");
    Detector det(detector_encoder_config(cfg_), feature_config(cfg_), init_seed);
    const auto tc = detector_train_config(cfg_);
    const auto res = advlab::train_detector(det, clean, attacked, tc);
    save_checkpoint(dir / "detector.aemb", det.model().params());
    write_file(dir / "report.json", json({{"holdout_accuracy", res.holdout_accuracy},
                                          {"holdout_size", res.holdout_size},
                                          {"epoch_loss", res.epoch_loss}}).dump(2) + "\n");
    manifest["seeds"]["init"] = init_seed;
    manifest["seeds"]["train"] = tc.seed;
  });
}

Detector Pipeline::detector() {
  const auto info = train_detector();
  return Detector(EmbeddingModel(detector_encoder_config(cfg_), feature_config(cfg_),
                                 load_checkpoint(info.dir / "detector.aemb")));
}

StageInfo Pipeline::sweep() {
  const auto enc = train_encoder();
  const auto pur = train_purifier();
  const auto adv = attack_train();
  const auto& d = cfg_.at("diffusion");
  const json key = {{"stage", "sweep"}, {"encoder", enc.hash}, {"purifier", pur.hash}, {"adversarial", adv.hash},
                    {"sweep_steps", d.at("sweep_steps")}, {"sweep_items", d.at("sweep_items")}, {"seed", seed_}};
  return run_stage("sweep", key, [&](const fs::path& dir, json& manifest) {
    const std::string method = cfg_.at("detector").at("attack").get<std::string>();
    add_input(manifest, out_, enc.dir / "encoder.aemb");
    add_input(manifest, out_, pur.dir / "denoiser.aemb");
    add_input(manifest, out_, adv.dir / method / "adversarial.aemb");
    const Corpus c = corpus();
    const auto model = encoder();
    const auto centroids = speaker_centroids(model, c.split(Split::kEnroll), c.n_speakers);
    auto set = load_adv_set(adv.dir / method);
    set.resize(std::min(set.size(), d.at("sweep_items").get<std::size_t>()));
    const auto clean = sources_of(set);
    const auto steps = d.at("sweep_steps").get<std::vector<std::size_t>>();
    const auto sweep_seed = derive_seed(seed_, "sweep");
    const auto rows = sweep_steps(model, centroids, denoiser(), diffusion_schedule(cfg_), set, clean, steps, sweep_seed);
    write_file(dir / "sweep.csv", sweep_csv(rows));
    write_file(dir / "t_star.json", json({{"t_star", choose_t_star(rows)}}).dump(2) + "\n");
    manifest["seeds"]["sweep"] = sweep_seed;
  });
}

std::size_t Pipeline::t_star() {
  const auto& t = cfg_.at("diffusion").at("t_star");
  if (!t.is_null()) return t.get<std::size_t>();
  const auto info = sweep();
  return json::parse(read_file(info.dir / "t_star.json")).at("t_star").get<std::size_t>();
}

StageInfo Pipeline::purify() {
  const auto pur = train_purifier();
  const auto adv = attack_test();
  const auto det = train_detector();
  const std::size_t ts = t_star();
  const json key = {{"stage", "purify"}, {"purifier", pur.hash}, {"adversarial", adv.hash}, {"detector", det.hash},
                    {"t_star", ts}, {"stochastic", cfg_.at("diffusion").at("stochastic")}, {"seed", seed_}};
  return run_stage("purify", key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, pur.dir / "denoiser.aemb");
    add_input(manifest, out_, det.dir / "detector.aemb");
    const Corpus c = corpus();
    const Denoiser den = denoiser().frozen();
    const Detector dt = detector();
    const auto sched = diffusion_schedule(cfg_);
    const bool stochastic = cfg_.at("diffusion").at("stochastic").get<bool>();
    const auto purify_seed = derive_seed(seed_, "purify");

    std::vector<std::pair<std::string, std::vector<Utterance>>> sets;
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) {
      add_input(manifest, out_, adv.dir / method_name(m) / "adversarial.aemb");
      std::vector<Utterance> items;
      for (const auto& ex : load_adv_set(adv.dir / method_name(m)))
        items.push_back({ex.source_id, ex.source_label, ex.adversarial()});
      sets.emplace_back(method_name(m), std::move(items));
    }
    sets.emplace_back("clean", c.split(Split::kTest));

    ParameterSet purified;
    std::vector<DetectionRow> detections;
    json summary = json::object();
    for (const auto& [name, items] : sets) {
      std::vector<std::vector<double>> out(items.size());
      std::vector<Detection> det_out(items.size());
      const auto set_seed = derive_seed(purify_seed, name);
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(items.size()); ++i) {
        out[i] = advlab::purify(den, sched, items[i].samples, ts, {derive_seed(set_seed, "item", i), stochastic});
        det_out[i] = dt.detect(items[i].samples);
      }
      std::size_t flagged = 0;
      for (std::size_t i = 0; i < items.size(); ++i) {
        purified.add(name + "." + std::to_string(i), Tensor::vector(out[i]));
        detections.push_back({name + "/" + std::to_string(i) + "/" + items[i].id,
                              detect_label_name(det_out[i].label), det_out[i].score});
        flagged += det_out[i].label == DetectLabel::kAdversarial;
      }
      summary[name] = {{"items", items.size()}, {"flagged_adversarial", flagged}};
    }
    save_checkpoint(dir / "purified.aemb", purified);
    write_file(dir / "detection.csv", detection_csv(detections));
    write_file(dir / "summary.json", json({{"t_star", ts}, {"sets", summary}}).dump(2) + "\n");
    manifest["seeds"]["purify"] = purify_seed;
  });
}

StageInfo Pipeline::evaluate() {
  const auto enc = train_encoder();
  const auto adv = attack_test();
  const auto at_adam = adv_train(AttackMethod::kAdam);
  const auto at_pgd = adv_train(AttackMethod::kPgd);
  const auto pur = purify();
  const json key = {{"stage", "evaluate"}, {"encoder", enc.hash}, {"adversarial", adv.hash},
                    {"adv_train_adam", at_adam.hash}, {"adv_train_pgd", at_pgd.hash}, {"purify", pur.hash},
                    {"label_rule", cfg_.at("eval").at("label_rule")}};
  return run_stage("evaluate", key, [&](const fs::path& dir, json& manifest) {
    add_input(manifest, out_, enc.dir / "encoder.aemb");
    add_input(manifest, out_, at_adam.dir / "encoder.aemb");
    add_input(manifest, out_, at_pgd.dir / "encoder.aemb");
    add_input(manifest, out_, pur.dir / "purified.aemb");
    const Corpus c = corpus();
    const auto test = c.split(Split::kTest);
    const auto enroll = c.split(Split::kEnroll);
    const ParameterSet purified = load_checkpoint(pur.dir / "purified.aemb");
    std::map<std::string, bool> flagged;
    {
      std::istringstream csv(read_file(pur.dir / "detection.csv"));
      std::string line;
      std::getline(csv, line);
      while (std::getline(csv, line)) {
        std::stringstream ls(line);
        std::string id, label;
        std::getline(ls, id, ',');
        std::getline(ls, label, ',');
        // id is "<set>/<index>/<utterance>"; the key drops the utterance part.
        const auto second = id.find('/', id.find('/') + 1);
        flagged[id.substr(0, second)] = label == "adversarial";
      }
    }

    const EmbeddingModel base = encoder();
    const EmbeddingModel def_adam = defended_encoder(AttackMethod::kAdam);
    const EmbeddingModel def_pgd = defended_encoder(AttackMethod::kPgd);
    std::vector<TableRow> rows;
    json jrows = json::array();
    auto run = [&](const std::string& defense, const EmbeddingModel& model, AttackMethod m, const DefenseFn& fn) {
      const auto set = load_adv_set(adv.dir / method_name(m));
      const auto centroids = speaker_centroids(model, enroll, c.n_speakers);
      EvalInputs in;
      in.model = &model;
      in.centroids = &centroids;
      in.defense = fn;
      in.adversarial = set;
      in.clean_trials = test;
      in.label_rule = parse_label_rule(cfg_.at("eval").at("label_rule").get<std::string>());
      const auto r = evaluate_defense(in);
      rows.push_back({defense, method_name(m), r});
      jrows.push_back({{"defense", defense}, {"attack", method_name(m)}, {"report", report_json(r)}});
    };
    // Indices below na address the adversarial set, the rest the clean trials.
    auto lookup = [&](AttackMethod m, bool gated) -> DefenseFn {
      const std::size_t na = cfg_.at("eval").at("n_adversarial").get<std::size_t>();
      const std::string set = method_name(m);
      return [&, na, set, gated](std::span<const double> x, std::size_t idx) {
        const std::string name = idx < na ? set + "." + std::to_string(idx) : "clean." + std::to_string(idx - na);
        const std::string flag_key = idx < na ? set + "/" + std::to_string(idx) : "clean/" + std::to_string(idx - na);
        if (gated && !flagged.at(flag_key)) return std::vector<double>(x.begin(), x.end());
        return purified.get(name).to_vector();
      };
    };
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) run("none", base, m, {});
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) run("adv-train(adam)", def_adam, m, {});
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) run("adv-train(pgd)", def_pgd, m, {});
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) run("purification", base, m, lookup(m, false));
    for (auto m : {AttackMethod::kAdam, AttackMethod::kPgd}) run("gated-purification", base, m, lookup(m, true));

    write_file(dir / "report.json", json({{"rows", jrows}}).dump(2) + "\n");
    write_file(dir / "table.txt", format_table(rows));
  });
}

StageInfo Pipeline::reproduce_table() {
  const auto info = evaluate();
  write_file(out_ / "table.txt", read_file(info.dir / "table.txt"));
  write_file(out_ / "report.json", read_file(info.dir / "report.json"));
  return info;
}

}  // namespace advlab
