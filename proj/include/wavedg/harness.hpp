#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavedg/data.hpp"
#include "wavedg/losses.hpp"
#include "wavedg/model.hpp"

namespace wavedg {

enum class Protocol { intra, lodo, mixed };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& s);

struct OptimizerConfig {
  double lr = 1e-4;
  double decay = 0.98;  // exponential, applied per epoch
  int batch_size = 2;
  int epochs = 10;
};

struct ExperimentConfig {
  Protocol protocol = Protocol::lodo;
  int target_domain = -1;  // lodo: run only this fold; -1 runs all folds
  ModuleFlags flags;
  OptimizerConfig optimizer;
  LossConfig loss;
  double tau = 0.5;
  std::uint64_t seed = 1234;
  int image_size = 64;
  int channels = 32;
  int decoder_blocks = 2;
  int encoder_depth = 1;
  bool adapter_enabled = false;
  bool freeze_backbone = false;
  bool deep_supervision = true;
  bool mixed_precision = false;
  std::string data_manifest;  // empty -> built-in default benchmark
  std::string out_dir = "runs/out";

  void validate() const;
  PreprocessConfig preprocess_config() const { return PreprocessConfig{image_size, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}}; }
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
// Missing keys fall back to defaults, so config files can be partial.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ModelConfig to_model_config(const ExperimentConfig& c, int num_domains, std::uint64_t model_seed);

struct LossLogEntry {
  int step = 0;
  int epoch = 0;
  double total = 0.0;
  double dice = 0.0;
  double focal = 0.0;
  double iou_mse = 0.0;
};

struct TrainSet {
  const DomainDataset* data = nullptr;
  int local_domain = 0;  // token index inside the model
};

struct TrainOutput {
  std::vector<LossLogEntry> log;
  std::vector<std::uint64_t> train_fingerprints;
};

// Runs the configured epochs of Adam with per-epoch exponential lr decay on
// the pooled training sets; the ground-truth domain token is used
// throughout. Aborts with a diagnostic if the loss goes non-finite.
TrainOutput train_model(Model& model, const ExperimentConfig& cfg,
                        const std::vector<TrainSet>& sets, std::uint64_t shuffle_seed);

// One frequency prototype per training set, keyed by local domain index.
std::vector<FrequencyPrototype> build_prototypes(const Model& model,
                                                 const std::vector<TrainSet>& sets,
                                                 const PreprocessConfig& pp);

EvalMode select_eval_mode(const ModuleFlags& flags, bool in_domain);

struct MetricRow {
  std::string dataset;
  std::string protocol;
  double dice = 0.0;
  double iou = 0.0;
  double f1 = 0.0;
  int samples = 0;
};

// Per-image inference, threshold at logit 0, back-projection onto the
// original frame, macro-averaged metrics.
MetricRow evaluate_dataset(const Model& model, const DomainDataset& ds, EvalMode mode,
                           int local_domain, const std::vector<FrequencyPrototype>* prototypes,
                           const PreprocessConfig& pp, const std::string& row_name,
                           const std::string& protocol_label);

struct RunReport {
  std::vector<MetricRow> rows;
  MetricRow average;  // arithmetic mean of rows
  nlohmann::json config_echo;
  std::string run_id;
  double wall_time_sec = 0.0;
  std::vector<std::string> train_fingerprints;
  std::vector<std::string> eval_fingerprints;
};

MetricRow average_rows(const std::vector<MetricRow>& rows);
nlohmann::json report_to_json(const RunReport& r, bool include_wall_time);
RunReport report_from_json(const nlohmann::json& j);
std::string report_to_table(const RunReport& r);
std::string run_id_for(const nlohmann::json& config_echo);

struct ProtocolResult {
  std::vector<RunReport> reports;  // one per fold (lodo) or per run
  RunReport summary;
};

// Dispatches on cfg.protocol; writes checkpoints, per-fold reports, the
// resolved config, and summary.{json,txt} under cfg.out_dir.
ProtocolResult run_experiment(const ExperimentConfig& cfg);

// The 8 module on/off rows plus the 4 frequency-branch rows.
struct AblationVariant {
  std::string label;
  ExperimentConfig config;
};
std::vector<AblationVariant> ablation_grid(const ExperimentConfig& base);

// Runs every grid variant and writes a combined table.
std::vector<std::pair<std::string, RunReport>> run_ablation(const ExperimentConfig& base);

BenchmarkManifest resolve_manifest(const ExperimentConfig& cfg);

void write_text_file(const std::string& path, const std::string& content);
std::string fingerprint_hex(std::uint64_t h);

}  // namespace wavedg
