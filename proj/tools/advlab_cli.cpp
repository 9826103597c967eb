// advlab: command-line driver for the attack/defense pipeline.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "advlab/kernels.hpp"
#include "advlab/pipeline.hpp"
#include "advlab/rng.hpp"

using namespace advlab;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out = "out";
  int threads = 0;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config merged over the defaults");
  sub->add_option("--set", c.overrides, "Override one key, e.g. --set attack.pgd.iterations=10");
  sub->add_option("--seed", c.seed, "Master seed (overrides the config)");
  sub->add_option("--out", c.out, "Output root; every stage writes a subdirectory here")->capture_default_str();
  sub->add_option("--threads", c.threads, "OpenMP threads (0 keeps the runtime default)");
  sub->add_flag("-q,--quiet", c.quiet, "Only log warnings and errors");
}

json build_config(const Common& c) {
  json cfg = c.config.empty() ? default_config() : load_config(c.config);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(c.seed);
  validate_config(cfg);
  return cfg;
}

void report(const StageInfo& s) {
  std::cout << s.name << "\t" << s.dir.string() << "\t" << (s.reused ? "reused" : "built") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks and defenses on a small speaker-embedding encoder"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-data", "Synthesize the speaker corpus (WAV + manifest)");
  auto* enc = app.add_subcommand("train-encoder", "Train the speaker encoder");
  auto* atk = app.add_subcommand("attack", "Generate targeted adversarial examples");
  std::string attack_split = "test";
  atk->add_option("--split", attack_split, "test (both methods, evaluation set) or train (detector/t* data)")
      ->check(CLI::IsMember({"test", "train"}))
      ->capture_default_str();
  auto* adv = app.add_subcommand("adv-train", "Adversarially fine-tune the encoder");
  std::string adv_method = "pgd";
  adv->add_option("--method", adv_method, "Attack used during training")
      ->check(CLI::IsMember({"pgd", "adam"}))
      ->capture_default_str();
  auto* pur = app.add_subcommand("train-purifier", "Train the diffusion denoiser");
  auto* det = app.add_subcommand("train-detector", "Train the clean/adversarial detector");
  auto* prf = app.add_subcommand("purify", "Purify the evaluation sets at t* and run the detector");
  std::string in_wav, out_wav;
  std::size_t purify_t = 0;
  prf->add_option("--input", in_wav, "Purify a single WAV instead of the evaluation sets");
  prf->add_option("--output", out_wav, "Where to write the purified WAV (with --input)");
  prf->add_option("--t", purify_t, "Diffusion steps for --input (0 uses t*)");
  auto* swp = app.add_subcommand("sweep", "Sweep purification strength t and pick t*");
  auto* ev = app.add_subcommand("evaluate", "Evaluate every defense against both attacks");
  auto* rep = app.add_subcommand("reproduce-table", "Run all stages and write table.txt/report.json");
  for (auto* s : {gen, enc, atk, adv, pur, det, prf, swp, ev, rep}) add_common(s, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: usage: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    spdlog::set_level(c.quiet ? spdlog::level::warn : spdlog::level::info);
    kernels::set_num_threads(c.threads);
    Pipeline p(build_config(c), c.out);
    if (gen->parsed()) report(p.gen_data());
    if (enc->parsed()) report(p.train_encoder());
    if (atk->parsed()) report(attack_split == "test" ? p.attack_test() : p.attack_train());
    if (adv->parsed()) report(p.adv_train(parse_method(adv_method)));
    if (pur->parsed()) report(p.train_purifier());
    if (det->parsed()) report(p.train_detector());
    if (swp->parsed()) report(p.sweep());
    if (ev->parsed()) report(p.evaluate());
    if (rep->parsed()) {
      report(p.reproduce_table());
      std::cout << read_file(fs::path(c.out) / "table.txt");
    }
    if (prf->parsed()) {
      if (in_wav.empty()) {
        report(p.purify());
      } else {
        if (out_wav.empty()) throw CLI::ValidationError("--output", "required with --input");
        const auto wav = read_wav(in_wav);
        const std::size_t t = purify_t > 0 ? purify_t : p.t_star();
        const auto y = purify(p.denoiser(), diffusion_schedule(p.config()), wav.samples, t,
                              {derive_seed(p.config().at("seed").get<std::uint64_t>(), "purify-wav"),
                               p.config().at("diffusion").at("stochastic").get<bool>()});
        write_wav(out_wav, y, wav.sample_rate);
        const auto d = p.detector().detect(wav.samples);
        std::cout << "purified\t" << out_wav << "\tt=" << t << "\tdetector=" << detect_label_name(d.label)
                  << "\tscore=" << format_double(d.score) << "\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 3;
  } catch (const CLI::Error& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
