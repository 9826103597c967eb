#include <filesystem>

#include <doctest.h>

#include "advlab/pipeline.hpp"

using namespace advlab;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("advlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json tiny_config() {
  json cfg = default_config();
  for (const char* o : {"corpus.n_speakers=4", "corpus.utts_per_speaker=10", "corpus.duration_s=0.5",
                        "encoder.epochs=2", "attack.pgd.iterations=2", "attack.adam.iterations=2",
                        "adv_train.epochs=1", "adv_train.batch_size=4", "diffusion.train.steps=3",
                        "diffusion.train.batch_size=2", "diffusion.train.crop=200",
                        "diffusion.sweep_steps=[0,1,2]", "diffusion.sweep_items=2", "detector.epochs=1",
                        "eval.n_adversarial=4"})
    apply_override(cfg, o);
  return cfg;
}

}  // namespace

TEST_CASE("defaults validate and map onto module configs") {
  const json cfg = default_config();
  CHECK_NOTHROW(validate_config(cfg));
  CHECK(feature_config(cfg).n_mels == 40);
  CHECK(encoder_config(cfg).channels == std::vector<std::size_t>{8, 16});
  CHECK(attack_settings(cfg, AttackMethod::kPgd).pgd.iterations == 20);
  CHECK(attack_settings(cfg, AttackMethod::kAdam).adam.iterations == 50);
  CHECK(diffusion_schedule(cfg).steps == 50);
  CHECK(adv_train_config(cfg, AttackMethod::kPgd).epochs == 3);
}

TEST_CASE("overrides parse JSON values and reject unknown keys") {
  json cfg = default_config();
  apply_override(cfg, "attack.pgd.iterations=7");
  CHECK(cfg["attack"]["pgd"]["iterations"] == 7);
  apply_override(cfg, "detector.attack=adam");
  CHECK(cfg["detector"]["attack"] == "adam");
  apply_override(cfg, "diffusion.t_star=4");
  CHECK(cfg["diffusion"]["t_star"] == 4);
  CHECK_THROWS_AS(apply_override(cfg, "attack.pgd.iters=7"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "attack=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "no-equals-sign"), ConfigError);
}

TEST_CASE("invalid values fail validation with a config error") {
  json cfg = default_config();
  apply_override(cfg, "attack.pgd.alpha_end=1");
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = default_config();
  apply_override(cfg, "encoder.kernel=\"three\"");
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = default_config();
  apply_override(cfg, "diffusion.sweep_steps=[0, 60]");
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("config files merge over defaults and allow comments") {
  const auto dir = scratch("cfg");
  write_file(dir / "a.json", "{ // desk run\n \"seed\": 5, \"attack\": {\"pgd\": {\"iterations\": 3}} }");
  const auto cfg = load_config(dir / "a.json");
  CHECK(cfg["seed"] == 5);
  CHECK(cfg["attack"]["pgd"]["iterations"] == 3);
  CHECK(cfg["attack"]["adam"]["iterations"] == 50);
  write_file(dir / "b.json", "{\"atack\": {}}");
  CHECK_THROWS_AS(load_config(dir / "b.json"), ConfigError);
  write_file(dir / "c.json", "{\"seed\": ");
  CHECK_THROWS_AS(load_config(dir / "c.json"), ConfigError);
}

TEST_CASE("t* picks the best defense, smaller step on ties") {
  std::vector<SweepRow> rows(4);
  const double def[] = {0, 40, 70, 70};
  for (std::size_t i = 0; i < 4; ++i) {
    rows[i].t = i * 2;
    rows[i].defense_success = def[i];
  }
  CHECK(choose_t_star(rows) == 4);
  CHECK(sweep_csv(rows).rfind("t,attack_success,defense_success,sim_src,sim_tgt,clean_sim\n", 0) == 0);
}

TEST_CASE("stages are content addressed and reused") {
  const auto out = scratch("stages");
  Pipeline p(tiny_config(), out);
  const auto a = p.gen_data();
  CHECK_FALSE(a.reused);
  CHECK(fs::exists(a.dir / "manifest.json"));
  CHECK(fs::exists(a.dir / "manifest.csv"));
  CHECK(fs::exists(a.dir / "wav"));
  const auto b = p.gen_data();
  CHECK(b.reused);
  CHECK(b.dir == a.dir);
  const auto m = json::parse(read_file(a.dir / "manifest.json"));
  CHECK(m["config_hash"] == a.hash);
  CHECK(m["outputs"].contains("corpus.aemb"));

  json other = tiny_config();
  other["seed"] = 1;
  CHECK(Pipeline(other, out).gen_data().dir != a.dir);
  CHECK(p.corpus().entries.size() == 40);
}

TEST_CASE("a tiny end-to-end run writes the table") {
  const auto out = scratch("e2e");
  Pipeline p(tiny_config(), out);
  const auto info = p.reproduce_table();
  const auto report = json::parse(read_file(out / "report.json"));
  CHECK(report["rows"].size() == 10);
  const auto table = read_file(out / "table.txt");
  for (const char* row : {"none", "adv-train(adam)", "adv-train(pgd)", "purification", "gated-purification"})
    CHECK(table.find(row) != std::string::npos);
  CHECK(Pipeline(tiny_config(), out).reproduce_table().reused);
}
