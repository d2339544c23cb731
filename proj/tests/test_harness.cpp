#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>

#include "test_util.hpp"
#include "wavedg/checkpoint.hpp"
#include "wavedg/harness.hpp"

using namespace wavedg;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("harness");

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.channels = 8;
  cfg.decoder_blocks = 1;
  cfg.image_size = 32;
  cfg.optimizer.epochs = 1;
  cfg.seed = 77;
  cfg.out_dir = out_dir;
  return cfg;
}

BenchmarkManifest tiny_manifest(std::uint64_t seed = 5) {
  BenchmarkManifest m = default_manifest();
  m.image_size = 32;
  m.seed = seed;
  m.train_per_domain = 2;
  m.test_per_domain = 1;
  return m;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("experiment config json round trip and validation") {
  ExperimentConfig cfg;
  cfg.protocol = Protocol::mixed;
  cfg.flags.fadf = false;
  cfg.optimizer.epochs = 3;
  cfg.loss.lambda_focal = 20.0;
  cfg.tau = 0.1;
  auto j = experiment_config_to_json(cfg);
  auto back = experiment_config_from_json(j);
  CHECK(experiment_config_to_json(back) == j);

  // partial configs keep defaults
  auto partial = experiment_config_from_json(nlohmann::json{{"seed", 9}});
  CHECK(partial.seed == 9);
  CHECK(partial.optimizer.lr == doctest::Approx(1e-4));
  CHECK(partial.loss.lambda_dice == doctest::Approx(0.8));
  CHECK(partial.tau == doctest::Approx(0.5));

  ExperimentConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("training smoke: loss log, finite losses, checkpoint round trip") {
  const auto dir = temp_dir("wavedg_train_smoke");
  ExperimentConfig cfg = tiny_config(dir.string());
  const auto manifest = tiny_manifest();
  const auto domains = materialize(manifest);

  std::vector<TrainSet> sets;
  for (int d = 0; d < 2; ++d) sets.push_back({&domains[d].train, d});

  auto model = std::make_unique<Model>(to_model_config(cfg, 2, 123));
  auto out = train_model(*model, cfg, sets, 55);
  CHECK(out.log.size() >= 2);  // 4 samples, batch 2, 1 epoch
  for (const auto& e : out.log) CHECK(std::isfinite(e.total));
  CHECK(out.train_fingerprints.size() == 4);

  // checkpoint round trip restores parameters exactly
  const std::string ckpt = (dir / "ck.json").string();
  save_checkpoint(ckpt, model->params(), {{"model", model_config_to_json(model->config())}});
  auto model2 = std::make_unique<Model>(model->config());
  load_checkpoint(ckpt, model2->params());
  for (const auto& [name, node] : model->params().items())
    CHECK(model2->params().get(name)->value.values == node->value.values);

  SUBCASE("mismatched channel count is rejected on load") {
    ModelConfig other = model->config();
    other.channels = 16;
    auto model3 = std::make_unique<Model>(other);
    CHECK_THROWS_AS(load_checkpoint(ckpt, model3->params()), std::runtime_error);
  }
  fs::remove_all(dir);
}

TEST_CASE("ablation wiring: disabled modules leave no parameters") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.flags = ModuleFlags{false, false, false, false, false};
  auto model = std::make_unique<Model>(to_model_config(cfg, 2, 1));
  for (const auto& name : model->params().names()) {
    CHECK(name.rfind("sdm.", 0) != 0);
    CHECK(name.rfind("hmpr.stage2.", 0) != 0);
    CHECK(name.rfind("hmpr.prompt.embed.", 0) != 0);
  }
  // baseline decoder still present
  CHECK(model->params().has("hmpr.stage1.iou_token"));

  // every flag combination constructs, trains a step, and evaluates
  const auto manifest = tiny_manifest();
  const auto domains = materialize(manifest);
  for (int bits = 0; bits < 8; ++bits) {
    ExperimentConfig c2 = tiny_config("unused");
    c2.flags.sdm = bits & 4;
    c2.flags.fadf = bits & 2;
    c2.flags.hmpr = bits & 1;
    auto m = std::make_unique<Model>(to_model_config(c2, 2, 9));
    std::vector<TrainSet> sets{{&domains[0].train, 0}, {&domains[1].train, 1}};
    auto out = train_model(*m, c2, sets, 3);
    CHECK(std::isfinite(out.log.back().total));

    std::vector<FrequencyPrototype> protos;
    const bool wants_fadf = c2.flags.fadf && c2.flags.sdm;
    if (wants_fadf) protos = build_prototypes(*m, sets, c2.preprocess_config());
    const EvalMode mode = select_eval_mode(c2.flags, false);
    auto row = evaluate_dataset(*m, domains[2].test, mode, 0, wants_fadf ? &protos : nullptr,
                                c2.preprocess_config(), "d2", "lodo");
    CHECK(row.dice >= 0.0);
    CHECK(row.dice <= 100.0);
  }
}

TEST_CASE("eval mode selection honors the disabled-module contracts") {
  ModuleFlags f;
  CHECK(select_eval_mode(f, true) == EvalMode::fused);
  CHECK(select_eval_mode(f, false) == EvalMode::fused);
  f.fadf = false;
  CHECK(select_eval_mode(f, true) == EvalMode::known_token);
  CHECK(select_eval_mode(f, false) == EvalMode::uniform_tokens);
  f.sdm = false;
  f.fadf = true;
  CHECK(select_eval_mode(f, true) == EvalMode::plain);
  CHECK(select_eval_mode(f, false) == EvalMode::plain);
}

TEST_CASE("report averages are exact arithmetic means and tables round trip") {
  RunReport r;
  r.rows = {{"a", "lodo", 50.0, 40.0, 50.0, 5}, {"b", "lodo", 70.0, 60.0, 70.0, 5},
            {"c", "lodo", 90.0, 80.0, 90.0, 5}};
  r.average = average_rows(r.rows);
  CHECK(r.average.dice == doctest::Approx(70.0).epsilon(1e-9));
  CHECK(r.average.iou == doctest::Approx(60.0).epsilon(1e-9));
  CHECK(r.average.samples == 15);

  r.config_echo = {{"k", 1}};
  r.run_id = run_id_for(r.config_echo);
  r.wall_time_sec = 1.5;
  auto j = report_to_json(r, true);
  auto back = report_from_json(j);
  CHECK(back.rows.size() == 3);
  CHECK(back.average.dice == doctest::Approx(70.0));
  CHECK(back.run_id == r.run_id);
  CHECK(report_to_json(back, true) == j);

  const std::string table = report_to_table(r);
  CHECK(table.find("average") != std::string::npos);
  CHECK(table.find("70.00") != std::string::npos);
}

TEST_CASE("lodo on two toy domains: split hygiene and deterministic summaries") {
  const auto dir = temp_dir("wavedg_lodo_toy");
  ExperimentConfig cfg = tiny_config((dir / "run1").string());
  BenchmarkManifest m = tiny_manifest();
  m.domains.resize(2);
  const std::string manifest_path = (dir / "manifest.json").string();
  save_manifest(manifest_path, m);
  cfg.data_manifest = manifest_path;
  cfg.image_size = m.image_size;

  auto res = run_experiment(cfg);
  CHECK(res.reports.size() == 2);  // one fold per held-out domain

  for (const auto& rep : res.reports) {
    CHECK(rep.rows.size() == 1);
    // no held-out sample fingerprint may appear among the training set
    std::set<std::string> train(rep.train_fingerprints.begin(), rep.train_fingerprints.end());
    CHECK(train.size() == 2);  // 2 train samples from the single source domain
    for (const auto& fp : rep.eval_fingerprints) CHECK(train.find(fp) == train.end());
  }

  // identical seeds -> byte-identical summary tables
  ExperimentConfig cfg2 = cfg;
  cfg2.out_dir = (dir / "run2").string();
  run_experiment(cfg2);
  CHECK(slurp(cfg.out_dir + "/summary.txt") == slurp(cfg2.out_dir + "/summary.txt"));
  CHECK(slurp(cfg.out_dir + "/summary.json") == slurp(cfg2.out_dir + "/summary.json"));

  // resolved config persisted next to outputs
  CHECK(fs::exists(cfg.out_dir + "/config.resolved.json"));
  fs::remove_all(dir);
}

TEST_CASE("ablation grid enumerates the 8 module rows and 4 branch rows") {
  ExperimentConfig base = tiny_config("unused_dir");
  const auto grid = ablation_grid(base);
  REQUIRE(grid.size() == 12);
  std::set<std::string> labels;
  for (const auto& v : grid) labels.insert(v.label);
  CHECK(labels.size() == 12);
  CHECK(labels.count("modules_---"));
  CHECK(labels.count("modules_SFH"));
  CHECK(labels.count("branches_LH"));
  CHECK(labels.count("branches_--"));
  for (const auto& v : grid) {
    if (v.label.rfind("branches_", 0) == 0) {
      CHECK(v.config.flags.sdm);
      CHECK(v.config.flags.fadf);
      CHECK(v.config.flags.hmpr);
    }
  }
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.optimizer.lr = 1e-4;
  const auto manifest = tiny_manifest();
  const auto domains = materialize(manifest);
  auto model = std::make_unique<Model>(to_model_config(cfg, 1, 2));
  // poison a parameter so the forward pass produces NaN
  model->params().get("hmpr.stage1.iou_token")->value.values[0] =
      std::numeric_limits<double>::quiet_NaN();
  std::vector<TrainSet> sets{{&domains[0].train, 0}};
  CHECK_THROWS_WITH_AS(train_model(*model, cfg, sets, 1), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_SUITE_END();
