// Command-line front end: dataset generation, training, prototype
// computation, evaluation, the LODO protocol, and the ablation sweep.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "wavedg/checkpoint.hpp"
#include "wavedg/harness.hpp"
#include "wavedg/image_io.hpp"
#include "wavedg/kernels.hpp"

namespace fs = std::filesystem;
using namespace wavedg;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
};

ExperimentConfig resolve_config(const GlobalArgs& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw std::runtime_error("cannot open config: " + g.config_path);
    nlohmann::json j;
    in >> j;
    cfg = experiment_config_from_json(j);
  }
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  return cfg;
}

void persist_resolved(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_text_file(cfg.out_dir + "/config.resolved.json",
                  experiment_config_to_json(cfg).dump(1) + "\n");
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  ExperimentConfig experiment;
  std::vector<int> domain_ids;  // global id per local token index
};

LoadedModel load_model(const std::string& checkpoint_path) {
  LoadedModel lm;
  const auto meta = peek_checkpoint_metadata(checkpoint_path);
  lm.model = std::make_unique<Model>(model_config_from_json(meta.at("model")));
  load_checkpoint(checkpoint_path, lm.model->params());
  lm.experiment = experiment_config_from_json(meta.at("experiment"));
  meta.at("domain_ids").get_to(lm.domain_ids);
  return lm;
}

int cmd_generate_data(const ExperimentConfig& cfg, int train_n, int test_n, bool render) {
  BenchmarkManifest m = resolve_manifest(cfg);
  if (train_n > 0) m.train_per_domain = train_n;
  if (test_n > 0) m.test_per_domain = test_n;
  fs::create_directories(cfg.out_dir);
  const std::string manifest_path = cfg.out_dir + "/manifest.json";
  save_manifest(manifest_path, m);
  std::cout << "wrote " << manifest_path << "\n";
  if (render) {
    for (const auto& domain : materialize(m)) {
      for (const auto* split : {&domain.train, &domain.test}) {
        const std::string split_name = split->split == Split::train ? "train" : "test";
        const std::string dir =
            cfg.out_dir + "/domain" + std::to_string(split->domain_id) + "/" + split_name;
        fs::create_directories(dir + "/images");
        fs::create_directories(dir + "/masks");
        for (std::size_t i = 0; i < split->samples.size(); ++i) {
          const auto& s = split->samples[i];
          char name[32];
          std::snprintf(name, sizeof(name), "%04zu", i);
          save_image_rgb(dir + "/images/" + name + ".png", s.image.pixels);
          save_image_gray(dir + "/masks/" + name + ".png", s.mask);
        }
      }
      std::cout << "rendered domain " << domain.train.domain_id << "\n";
    }
  }
  return 0;
}

int cmd_train(ExperimentConfig cfg) {
  persist_resolved(cfg);
  const BenchmarkManifest manifest = resolve_manifest(cfg);
  const auto domains = materialize(manifest);

  std::vector<TrainSet> sets;
  int local = 0;
  for (const auto& d : domains) {
    if (cfg.target_domain >= 0 && d.train.domain_id != cfg.target_domain) continue;
    sets.push_back({&d.train, local++});
  }
  if (sets.empty()) throw std::runtime_error("train: no matching domains");

  auto model = std::make_unique<Model>(
      to_model_config(cfg, static_cast<int>(sets.size()), seed_split(cfg.seed, "model", 0)));
  auto out = train_model(*model, cfg, sets, seed_split(cfg.seed, "shuffle", 0));

  std::vector<int> domain_ids(sets.size());
  for (const auto& [ds, l] : sets) domain_ids.at(l) = ds->domain_id;
  nlohmann::json meta{{"model", model_config_to_json(model->config())},
                      {"experiment", experiment_config_to_json(cfg)},
                      {"domain_ids", domain_ids},
                      {"fold", "train"}};
  const std::string ckpt = cfg.out_dir + "/checkpoint.json";
  save_checkpoint(ckpt, model->params(), meta);
  {
    std::ostringstream os;
    os << "step epoch total dice focal iou_mse\n";
    for (const auto& e : out.log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%d %d %.10g %.10g %.10g %.10g\n", e.step, e.epoch,
                    e.total, e.dice, e.focal, e.iou_mse);
      os << line;
    }
    write_text_file(cfg.out_dir + "/loss.log", os.str());
  }
  std::cout << "wrote " << ckpt << " (" << out.log.size() << " steps, final loss "
            << out.log.back().total << ")\n";
  return 0;
}

int cmd_build_prototypes(const ExperimentConfig& cli_cfg, const std::string& checkpoint_path,
                         const std::string& out_path) {
  auto lm = load_model(checkpoint_path);
  ExperimentConfig cfg = lm.experiment;
  if (!cli_cfg.data_manifest.empty()) cfg.data_manifest = cli_cfg.data_manifest;
  const auto domains = materialize(resolve_manifest(cfg));

  std::vector<TrainSet> sets;
  for (std::size_t local = 0; local < lm.domain_ids.size(); ++local) {
    const int global = lm.domain_ids[local];
    const auto it = std::find_if(domains.begin(), domains.end(), [global](const DomainData& d) {
      return d.train.domain_id == global;
    });
    if (it == domains.end())
      throw std::runtime_error("build-prototypes: missing data for domain " +
                               std::to_string(global));
    sets.push_back({&it->train, static_cast<int>(local)});
  }
  auto protos = build_prototypes(*lm.model, sets, cfg.preprocess_config());
  save_prototypes(out_path, protos, lm.model->config().channels);
  std::cout << "wrote " << out_path << " (" << protos.size() << " prototypes)\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cli_cfg, const std::string& checkpoint_path,
                 const std::string& prototypes_path, bool in_domain) {
  auto lm = load_model(checkpoint_path);
  ExperimentConfig cfg = lm.experiment;
  if (!cli_cfg.data_manifest.empty()) cfg.data_manifest = cli_cfg.data_manifest;
  if (!cli_cfg.out_dir.empty()) cfg.out_dir = cli_cfg.out_dir;
  persist_resolved(cfg);

  const BenchmarkManifest manifest = resolve_manifest(cfg);
  const auto domains = materialize(manifest);

  std::vector<FrequencyPrototype> protos;
  const EvalMode mode = select_eval_mode(cfg.flags, in_domain);
  if (mode == EvalMode::fused) {
    if (prototypes_path.empty())
      throw std::runtime_error("evaluate: FADF is enabled but no --prototypes file given");
    protos = load_prototypes(prototypes_path);
  }

  RunReport report;
  for (const auto& d : domains) {
    int local = 0;
    const auto it = std::find(lm.domain_ids.begin(), lm.domain_ids.end(), d.test.domain_id);
    const bool known = it != lm.domain_ids.end();
    if (known) local = static_cast<int>(it - lm.domain_ids.begin());
    EvalMode row_mode = mode;
    if (mode == EvalMode::known_token && !known) row_mode = EvalMode::uniform_tokens;
    std::string name = "domain" + std::to_string(d.test.domain_id);
    for (const auto& spec : manifest.domains)
      if (spec.domain_id == d.test.domain_id && !spec.name.empty()) name = spec.name;
    report.rows.push_back(evaluate_dataset(*lm.model, d.test, row_mode, local,
                                           protos.empty() ? nullptr : &protos,
                                           cfg.preprocess_config(), name,
                                           in_domain ? "intra" : "lodo"));
    for (const auto& s : d.test.samples)
      report.eval_fingerprints.push_back(fingerprint_hex(sample_fingerprint(s)));
  }
  report.average = average_rows(report.rows);
  report.config_echo = experiment_config_to_json(cfg);
  report.run_id = run_id_for(report.config_echo);
  write_text_file(cfg.out_dir + "/report.json", report_to_json(report, true).dump(1) + "\n");
  write_text_file(cfg.out_dir + "/report.txt", report_to_table(report));
  std::cout << report_to_table(report);
  return 0;
}

int cmd_lodo(ExperimentConfig cfg) {
  cfg.protocol = Protocol::lodo;
  auto result = run_experiment(cfg);
  std::cout << report_to_table(result.summary);
  std::cout << "summary written to " << cfg.out_dir << "/summary.txt\n";
  return 0;
}

int cmd_ablate(ExperimentConfig cfg, const std::string& protocol) {
  if (!protocol.empty()) cfg.protocol = protocol_from_name(protocol);
  auto rows = run_ablation(cfg);
  std::cout << "ablation rows: " << rows.size() << "; table written to " << cfg.out_dir
            << "/ablation.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frequency-guided domain-generalized vessel segmentation"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "experiment config JSON");
  app.add_option("--seed", g.seed, "master seed (overrides config)");
  app.add_option("--out-dir", g.out_dir, "output directory (overrides config)");

  auto* gen = app.add_subcommand("generate-data", "write the synthetic benchmark manifest");
  int gen_train = 0, gen_test = 0;
  bool gen_render = false;
  gen->add_option("--train-per-domain", gen_train, "override train sample count");
  gen->add_option("--test-per-domain", gen_test, "override test sample count");
  gen->add_flag("--render", gen_render, "also write png images/masks per domain");

  auto* train = app.add_subcommand("train", "train one model on the manifest's training splits");

  auto* protos = app.add_subcommand("build-prototypes", "compute per-domain frequency prototypes");
  std::string ckpt_path, protos_out = "prototypes.json";
  protos->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  protos->add_option("--out", protos_out, "output prototype store path");

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the manifest's test splits");
  std::string eval_ckpt, eval_protos;
  bool eval_unseen = false;
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--prototypes", eval_protos, "prototype store (required when FADF is on)");
  eval->add_flag("--unseen", eval_unseen, "treat test domains as unseen (LODO-style inference)");

  auto* lodo = app.add_subcommand("lodo", "leave-one-domain-out protocol over all domains");

  auto* ablate = app.add_subcommand("ablate", "module and frequency-branch ablation sweep");
  std::string ablate_protocol;
  ablate->add_option("--protocol", ablate_protocol, "protocol for the sweep (intra|lodo|mixed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    ExperimentConfig cfg = resolve_config(g);
    if (gen->parsed()) return cmd_generate_data(cfg, gen_train, gen_test, gen_render);
    if (train->parsed()) return cmd_train(cfg);
    if (protos->parsed()) return cmd_build_prototypes(cfg, ckpt_path, protos_out);
    if (eval->parsed()) return cmd_evaluate(cfg, eval_ckpt, eval_protos, !eval_unseen);
    if (lodo->parsed()) return cmd_lodo(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg, ablate_protocol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
