#include "wavedg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wavedg/checkpoint.hpp"
#include "wavedg/rng.hpp"

namespace fs = std::filesystem;

namespace wavedg {

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::intra: return "intra";
    case Protocol::lodo: return "lodo";
    case Protocol::mixed: return "mixed";
  }
  return "?";
}

Protocol protocol_from_name(const std::string& s) {
  if (s == "intra") return Protocol::intra;
  if (s == "lodo") return Protocol::lodo;
  if (s == "mixed") return Protocol::mixed;
  throw std::invalid_argument("unknown protocol '" + s + "' (intra|lodo|mixed)");
}

void ExperimentConfig::validate() const {
  loss.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("config: tau must be positive");
  if (optimizer.lr <= 0.0 || optimizer.decay <= 0.0 || optimizer.decay > 1.0)
    throw std::invalid_argument("config: bad optimizer settings");
  if (optimizer.batch_size < 1 || optimizer.epochs < 1)
    throw std::invalid_argument("config: batch_size and epochs must be at least 1");
  if (image_size % 16 != 0) throw std::invalid_argument("config: image_size must be divisible by 16");
  if (channels % 8 != 0) throw std::invalid_argument("config: channels must be divisible by 8");
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"protocol", protocol_name(c.protocol)},
          {"target_domain", c.target_domain},
          {"modules",
           {{"sdm", c.flags.sdm},
            {"fadf", c.flags.fadf},
            {"hmpr", c.flags.hmpr},
            {"low_branch", c.flags.low_branch},
            {"high_branch", c.flags.high_branch}}},
          {"optimizer",
           {{"lr", c.optimizer.lr},
            {"decay", c.optimizer.decay},
            {"batch_size", c.optimizer.batch_size},
            {"epochs", c.optimizer.epochs}}},
          {"loss",
           {{"lambda_dice", c.loss.lambda_dice},
            {"lambda_focal", c.loss.lambda_focal},
            {"gamma", c.loss.gamma},
            {"smooth", c.loss.smooth}}},
          {"tau", c.tau},
          {"seed", c.seed},
          {"image_size", c.image_size},
          {"channels", c.channels},
          {"decoder_blocks", c.decoder_blocks},
          {"encoder_depth", c.encoder_depth},
          {"adapter_enabled", c.adapter_enabled},
          {"freeze_backbone", c.freeze_backbone},
          {"deep_supervision", c.deep_supervision},
          {"mixed_precision", c.mixed_precision},
          {"data_manifest", c.data_manifest},
          {"out_dir", c.out_dir}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("protocol")) c.protocol = protocol_from_name(j.at("protocol").get<std::string>());
  c.target_domain = j.value("target_domain", c.target_domain);
  if (j.contains("modules")) {
    const auto& m = j.at("modules");
    c.flags.sdm = m.value("sdm", c.flags.sdm);
    c.flags.fadf = m.value("fadf", c.flags.fadf);
    c.flags.hmpr = m.value("hmpr", c.flags.hmpr);
    c.flags.low_branch = m.value("low_branch", c.flags.low_branch);
    c.flags.high_branch = m.value("high_branch", c.flags.high_branch);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.decay = o.value("decay", c.optimizer.decay);
    c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    c.loss.lambda_dice = l.value("lambda_dice", c.loss.lambda_dice);
    c.loss.lambda_focal = l.value("lambda_focal", c.loss.lambda_focal);
    c.loss.gamma = l.value("gamma", c.loss.gamma);
    c.loss.smooth = l.value("smooth", c.loss.smooth);
  }
  c.tau = j.value("tau", c.tau);
  c.seed = j.value("seed", c.seed);
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
  c.adapter_enabled = j.value("adapter_enabled", c.adapter_enabled);
  c.freeze_backbone = j.value("freeze_backbone", c.freeze_backbone);
  c.deep_supervision = j.value("deep_supervision", c.deep_supervision);
  c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
  c.data_manifest = j.value("data_manifest", c.data_manifest);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

ModelConfig to_model_config(const ExperimentConfig& c, int num_domains, std::uint64_t model_seed) {
  ModelConfig mc;
  mc.image_size = c.image_size;
  mc.channels = c.channels;
  mc.num_domains = num_domains;
  mc.flags = c.flags;
  mc.encoder_depth = c.encoder_depth;
  mc.adapter_enabled = c.adapter_enabled;
  mc.freeze_backbone = c.freeze_backbone;
  mc.decoder_blocks = c.decoder_blocks;
  mc.tau = c.tau;
  mc.seed = model_seed;
  return mc;
}

BenchmarkManifest resolve_manifest(const ExperimentConfig& cfg) {
  if (cfg.data_manifest.empty()) {
    BenchmarkManifest m = default_manifest();
    m.seed = seed_split(cfg.seed, "data");
    m.image_size = cfg.image_size;
    return m;
  }
  BenchmarkManifest m = load_manifest(cfg.data_manifest);
  if (m.image_size != cfg.image_size)
    throw std::invalid_argument("manifest image_size " + std::to_string(m.image_size) +
                                " does not match config image_size " +
                                std::to_string(cfg.image_size));
  return m;
}

namespace {

struct PreparedSample {
  Tensor pixels;      // standardized, {3,T,T}
  Tensor target;      // {1,T,T} binary
  int local_domain = 0;
  std::uint64_t fingerprint = 0;
};

std::vector<PreparedSample> prepare(const std::vector<TrainSet>& sets, const PreprocessConfig& pp) {
  std::vector<PreparedSample> out;
  for (const auto& [ds, local] : sets) {
    for (const auto& s : ds->samples) {
      GeometryMap map;
      PreparedSample p;
      p.pixels = preprocess(s.image, pp, &map).pixels;
      Tensor m = preprocess_mask(s.mask, map);
      p.target = Tensor({1, map.target, map.target}, std::move(m.values));
      p.local_domain = local;
      p.fingerprint = sample_fingerprint(s);
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct LossParts {
  double dice = 0.0, focal = 0.0, iou_mse = 0.0;
};

ag::NodePtr staged_loss(const TrainForward& fw, const Tensor& target, const LossConfig& lc,
                        bool deep_supervision, LossParts* parts) {
  auto stage_loss = [&](const ag::NodePtr& logits, const ag::NodePtr& iou_pred) {
    auto probs = ag::sigmoid(logits);
    auto dice = dice_loss(probs, target, lc.smooth);
    auto focal = focal_loss(probs, target, lc.gamma);
    auto mse = iou_mse_loss(iou_pred, actual_iou(probs->value, target, lc.smooth));
    if (parts) {
      parts->dice += dice->item();
      parts->focal += focal->item();
      parts->iou_mse += mse->item();
    }
    auto loss = ag::affine(dice, lc.lambda_dice, 0.0);
    loss = ag::add(loss, ag::affine(focal, lc.lambda_focal, 0.0));
    return ag::add(loss, mse);
  };
  if (fw.fine_full) {
    if (deep_supervision) {
      auto both = ag::add(stage_loss(fw.coarse_full, fw.coarse_iou),
                          stage_loss(fw.fine_full, fw.fine_iou));
      return ag::affine(both, 0.5, 0.0);
    }
    return stage_loss(fw.fine_full, fw.fine_iou);
  }
  return stage_loss(fw.coarse_full, fw.coarse_iou);
}

// Float32 round trip emulating reduced-precision compute while double
// master weights drive the updates.
class MixedPrecisionEmulator {
 public:
  explicit MixedPrecisionEmulator(std::vector<ag::NodePtr> params) : params_(std::move(params)) {}

  void cast_down() {
    for (auto& p : params_)
      for (auto& v : p->value.values) v = static_cast<double>(static_cast<float>(v));
  }

  void snapshot() {
    masters_.clear();
    for (auto& p : params_) masters_.push_back(p->value.values);
  }

  void restore() {
    for (std::size_t i = 0; i < params_.size(); ++i) p_restore(i);
  }

 private:
  void p_restore(std::size_t i) { params_[i]->value.values = masters_[i]; }
  std::vector<ag::NodePtr> params_;
  std::vector<std::vector<double>> masters_;
};

}  // namespace

TrainOutput train_model(Model& model, const ExperimentConfig& cfg,
                        const std::vector<TrainSet>& sets, std::uint64_t shuffle_seed) {
  const auto samples = prepare(sets, cfg.preprocess_config());
  if (samples.empty()) throw std::invalid_argument("train: no training samples");

  auto trainable = model.trainable_parameters();
  if (trainable.empty()) throw std::invalid_argument("train: no trainable parameters");
  AdamOptimizer opt(trainable, cfg.optimizer.lr);
  MixedPrecisionEmulator mp(trainable);

  TrainOutput out;
  for (const auto& s : samples) out.train_fingerprints.push_back(s.fingerprint);

  std::vector<int> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng(shuffle_seed);

  int step = 0;
  for (int epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    opt.set_lr(cfg.optimizer.lr * std::pow(cfg.optimizer.decay, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    for (std::size_t b = 0; b < order.size(); b += cfg.optimizer.batch_size) {
      const std::size_t b_end = std::min(order.size(), b + cfg.optimizer.batch_size);
      opt.zero_grad();
      if (cfg.mixed_precision) {
        mp.snapshot();
        mp.cast_down();
      }
      ag::NodePtr batch_loss;
      LossParts parts;
      std::string batch_ids;
      for (std::size_t i = b; i < b_end; ++i) {
        const auto& s = samples[order[i]];
        batch_ids += (batch_ids.empty() ? "" : ",") + std::to_string(order[i]);
        auto fw = model.forward_train(s.pixels, s.local_domain);
        auto loss = staged_loss(fw, s.target, cfg.loss, cfg.deep_supervision, &parts);
        batch_loss = batch_loss ? ag::add(batch_loss, loss) : loss;
      }
      const double bn = static_cast<double>(b_end - b);
      batch_loss = ag::affine(batch_loss, 1.0 / bn, 0.0);
      const double total = batch_loss->item();
      if (!std::isfinite(total)) {
        char msg[256];
        std::snprintf(msg, sizeof(msg),
                      "train: non-finite loss at step %d (epoch %d, batch [%s]; dice=%g focal=%g "
                      "iou_mse=%g)",
                      step, epoch, batch_ids.c_str(), parts.dice / bn, parts.focal / bn,
                      parts.iou_mse / bn);
        throw std::runtime_error(msg);
      }
      ag::backward(batch_loss);
      if (cfg.mixed_precision) mp.restore();
      opt.step();

      LossLogEntry e;
      e.step = step++;
      e.epoch = epoch;
      e.total = total;
      e.dice = parts.dice / bn;
      e.focal = parts.focal / bn;
      e.iou_mse = parts.iou_mse / bn;
      out.log.push_back(e);
    }
  }
  return out;
}

std::vector<FrequencyPrototype> build_prototypes(const Model& model,
                                                 const std::vector<TrainSet>& sets,
                                                 const PreprocessConfig& pp) {
  if (!model.sdm())
    throw std::logic_error("build_prototypes: model has no SDM module (sdm flag is off)");
  std::vector<std::pair<int, std::vector<Tensor>>> by_domain;
  for (const auto& [ds, local] : sets) {
    if (ds->samples.empty())
      throw std::invalid_argument("build_prototypes: domain " + std::to_string(local) +
                                  " has no samples");
    std::vector<Tensor> feats;
    feats.reserve(ds->samples.size());
    for (const auto& s : ds->samples) feats.push_back(model.encode(preprocess(s.image, pp).pixels));
    by_domain.emplace_back(local, std::move(feats));
  }
  std::sort(by_domain.begin(), by_domain.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto decomposer = sdm_decomposer(*model.sdm());
  std::vector<FrequencyPrototype> protos;
  for (auto& [local, feats] : by_domain)
    protos.push_back(compute_prototype(feats, local, decomposer));
  return protos;
}

EvalMode select_eval_mode(const ModuleFlags& flags, bool in_domain) {
  if (!flags.sdm) return EvalMode::plain;
  if (flags.fadf) return EvalMode::fused;
  return in_domain ? EvalMode::known_token : EvalMode::uniform_tokens;
}

MetricRow evaluate_dataset(const Model& model, const DomainDataset& ds, EvalMode mode,
                           int local_domain, const std::vector<FrequencyPrototype>* prototypes,
                           const PreprocessConfig& pp, const std::string& row_name,
                           const std::string& protocol_label) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate: dataset '" + row_name + "' is empty");
  MetricRow row;
  row.dataset = row_name;
  row.protocol = protocol_label;
  row.samples = static_cast<int>(ds.samples.size());
  for (const auto& s : ds.samples) {
    GeometryMap map;
    const Image pre = preprocess(s.image, pp, &map);
    Tensor logits = model.infer(pre.pixels, mode, local_domain, prototypes);
    Tensor mask({map.target, map.target});
    for (std::size_t i = 0; i < mask.values.size(); ++i)
      mask.values[i] = logits.values[i] > 0.0 ? 1.0 : 0.0;
    const Tensor back = backproject_mask(mask, map);
    const Metrics m = compute_metrics(back, s.mask);
    row.dice += m.dice;
    row.iou += m.iou;
    row.f1 += m.f1;
  }
  row.dice /= row.samples;
  row.iou /= row.samples;
  row.f1 /= row.samples;
  return row;
}

MetricRow average_rows(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("average_rows: empty");
  MetricRow avg;
  avg.dataset = "average";
  avg.protocol = rows.front().protocol;
  for (const auto& r : rows) {
    avg.dice += r.dice;
    avg.iou += r.iou;
    avg.f1 += r.f1;
    avg.samples += r.samples;
  }
  const double n = static_cast<double>(rows.size());
  avg.dice /= n;
  avg.iou /= n;
  avg.f1 /= n;
  return avg;
}

namespace {

nlohmann::json row_to_json(const MetricRow& r) {
  return {{"dataset", r.dataset}, {"protocol", r.protocol}, {"dice", r.dice},
          {"iou", r.iou},         {"f1", r.f1},             {"samples", r.samples}};
}

MetricRow row_from_json(const nlohmann::json& j) {
  MetricRow r;
  r.dataset = j.at("dataset").get<std::string>();
  r.protocol = j.at("protocol").get<std::string>();
  r.dice = j.at("dice").get<double>();
  r.iou = j.at("iou").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.samples = j.at("samples").get<int>();
  return r;
}

}  // namespace

nlohmann::json report_to_json(const RunReport& r, bool include_wall_time) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_to_json(row));
  nlohmann::json j{{"rows", rows},
                   {"average", row_to_json(r.average)},
                   {"config", r.config_echo},
                   {"run_id", r.run_id},
                   {"train_fingerprints", r.train_fingerprints},
                   {"eval_fingerprints", r.eval_fingerprints}};
  if (include_wall_time) j["wall_time_sec"] = r.wall_time_sec;
  return j;
}

RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
  r.average = row_from_json(j.at("average"));
  r.config_echo = j.at("config");
  r.run_id = j.at("run_id").get<std::string>();
  j.at("train_fingerprints").get_to(r.train_fingerprints);
  j.at("eval_fingerprints").get_to(r.eval_fingerprints);
  if (j.contains("wall_time_sec")) r.wall_time_sec = j.at("wall_time_sec").get<double>();
  return r;
}

std::string report_to_table(const RunReport& r) {
  std::ostringstream os;
  os << "run " << r.run_id << " (" << (r.rows.empty() ? "-" : r.rows.front().protocol) << ")\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-24s %8s %8s %8s %6s\n", "dataset", "Dice", "IoU", "F1", "n");
  os << line;
  auto emit = [&](const MetricRow& row) {
    std::snprintf(line, sizeof(line), "%-24s %8.2f %8.2f %8.2f %6d\n", row.dataset.c_str(),
                  row.dice, row.iou, row.f1, row.samples);
    os << line;
  };
  for (const auto& row : r.rows) emit(row);
  os << std::string(58, '-') << "\n";
  emit(r.average);
  return os.str();
}

std::string run_id_for(const nlohmann::json& config_echo) {
  char buf[13];
  std::snprintf(buf, sizeof(buf), "%012llx",
                static_cast<unsigned long long>(fnv1a64(config_echo.dump()) & 0xffffffffffffULL));
  return buf;
}

std::string fingerprint_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

namespace {

void write_json_file(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(1) + "\n");
}

std::string domain_label(const BenchmarkManifest& m, int domain_id) {
  for (const auto& d : m.domains)
    if (d.domain_id == domain_id) return d.name.empty() ? "domain" + std::to_string(domain_id) : d.name;
  return "domain" + std::to_string(domain_id);
}

void write_loss_log(const std::string& path, const std::vector<LossLogEntry>& log) {
  std::ostringstream os;
  os << "step epoch total dice focal iou_mse\n";
  for (const auto& e : log) {
    char line[160];
    std::snprintf(line, sizeof(line), "%d %d %.10g %.10g %.10g %.10g\n", e.step, e.epoch, e.total,
                  e.dice, e.focal, e.iou_mse);
    os << line;
  }
  write_text_file(path, os.str());
}

struct FoldOutcome {
  RunReport report;
  std::string checkpoint_path;
};

// Trains one model on `train_sets`, optionally builds prototypes, evaluates
// the given eval sets, and writes per-fold artifacts.
FoldOutcome run_fold(const ExperimentConfig& cfg, const BenchmarkManifest& manifest,
                     const std::vector<TrainSet>& train_sets,
                     const std::vector<std::pair<const DomainDataset*, int>>& eval_sets,
                     bool eval_in_domain, const std::string& fold_tag, std::uint64_t fold_index) {
  const auto t0 = std::chrono::steady_clock::now();
  auto model = std::make_unique<Model>(
      to_model_config(cfg, static_cast<int>(train_sets.size()), seed_split(cfg.seed, "model", fold_index)));

  auto train_out = train_model(*model, cfg, train_sets, seed_split(cfg.seed, "shuffle", fold_index));

  const bool wants_fadf = cfg.flags.fadf && cfg.flags.sdm;
  std::vector<FrequencyPrototype> protos;
  if (wants_fadf) protos = build_prototypes(*model, train_sets, cfg.preprocess_config());

  RunReport report;
  const EvalMode mode = select_eval_mode(cfg.flags, eval_in_domain);
  for (const auto& [ds, local] : eval_sets) {
    report.rows.push_back(evaluate_dataset(*model, *ds, mode, local,
                                           wants_fadf ? &protos : nullptr, cfg.preprocess_config(),
                                           domain_label(manifest, ds->domain_id),
                                           protocol_name(cfg.protocol)));
    for (const auto& s : ds->samples)
      report.eval_fingerprints.push_back(fingerprint_hex(sample_fingerprint(s)));
  }
  report.average = average_rows(report.rows);
  report.config_echo = experiment_config_to_json(cfg);
  report.config_echo["fold"] = fold_tag;
  report.run_id = run_id_for(report.config_echo);
  for (auto fp : train_out.train_fingerprints)
    report.train_fingerprints.push_back(fingerprint_hex(fp));
  report.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  FoldOutcome outcome;
  outcome.report = report;
  fs::create_directories(cfg.out_dir);
  const std::string prefix = cfg.out_dir + "/" + fold_tag;
  outcome.checkpoint_path = prefix + ".checkpoint.json";
  std::vector<int> domain_ids(train_sets.size());
  for (const auto& [ds, local] : train_sets) domain_ids.at(local) = ds->domain_id;
  nlohmann::json meta{{"model", model_config_to_json(model->config())},
                      {"experiment", experiment_config_to_json(cfg)},
                      {"domain_ids", domain_ids},
                      {"fold", fold_tag}};
  save_checkpoint(outcome.checkpoint_path, model->params(), meta);
  if (wants_fadf) save_prototypes(prefix + ".prototypes.json", protos, cfg.channels);
  write_loss_log(prefix + ".loss.log", train_out.log);
  write_json_file(prefix + ".report.json", report_to_json(report, true));
  write_text_file(prefix + ".report.txt", report_to_table(report));
  return outcome;
}

}  // namespace

ProtocolResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const BenchmarkManifest manifest = resolve_manifest(cfg);
  const auto domains = materialize(manifest);
  const int k = static_cast<int>(domains.size());

  fs::create_directories(cfg.out_dir);
  write_json_file(cfg.out_dir + "/config.resolved.json", experiment_config_to_json(cfg));

  ProtocolResult result;
  std::vector<MetricRow> summary_rows;

  if (cfg.protocol == Protocol::lodo) {
    if (k < 2) throw std::invalid_argument("lodo: need at least 2 source domains");
    for (int held = 0; held < k; ++held) {
      if (cfg.target_domain >= 0 && held != cfg.target_domain) continue;
      std::vector<TrainSet> train_sets;
      int local = 0;
      for (int d = 0; d < k; ++d)
        if (d != held) train_sets.push_back({&domains[d].train, local++});
      const std::string tag = "fold_" + domain_label(manifest, domains[held].train.domain_id);
      auto outcome = run_fold(cfg, manifest, train_sets, {{&domains[held].test, 0}},
                              /*eval_in_domain=*/false, tag, static_cast<std::uint64_t>(held));
      summary_rows.push_back(outcome.report.rows.front());
      result.reports.push_back(std::move(outcome.report));
    }
  } else if (cfg.protocol == Protocol::mixed) {
    std::vector<TrainSet> train_sets;
    std::vector<std::pair<const DomainDataset*, int>> eval_sets;
    for (int d = 0; d < k; ++d) {
      train_sets.push_back({&domains[d].train, d});
      eval_sets.push_back({&domains[d].test, d});
    }
    auto outcome = run_fold(cfg, manifest, train_sets, eval_sets, /*eval_in_domain=*/true,
                            "mixed", 0);
    summary_rows = outcome.report.rows;
    result.reports.push_back(std::move(outcome.report));
  } else {  // intra
    for (int d = 0; d < k; ++d) {
      if (cfg.target_domain >= 0 && d != cfg.target_domain) continue;
      const std::string tag = "intra_" + domain_label(manifest, domains[d].train.domain_id);
      auto outcome = run_fold(cfg, manifest, {{&domains[d].train, 0}}, {{&domains[d].test, 0}},
                              /*eval_in_domain=*/true, tag, static_cast<std::uint64_t>(d));
      summary_rows.push_back(outcome.report.rows.front());
      result.reports.push_back(std::move(outcome.report));
    }
  }

  if (summary_rows.empty()) throw std::invalid_argument("run_experiment: nothing to run");
  result.summary.rows = summary_rows;
  result.summary.average = average_rows(summary_rows);
  // The summary identifies the experiment, not the output location: with the
  // path scrubbed, identical seeds and settings give byte-identical files.
  result.summary.config_echo = experiment_config_to_json(cfg);
  result.summary.config_echo.erase("out_dir");
  result.summary.run_id = run_id_for(result.summary.config_echo);
  for (const auto& r : result.reports) {
    result.summary.train_fingerprints.insert(result.summary.train_fingerprints.end(),
                                             r.train_fingerprints.begin(),
                                             r.train_fingerprints.end());
    result.summary.eval_fingerprints.insert(result.summary.eval_fingerprints.end(),
                                            r.eval_fingerprints.begin(),
                                            r.eval_fingerprints.end());
  }
  write_json_file(cfg.out_dir + "/summary.json", report_to_json(result.summary, false));
  write_text_file(cfg.out_dir + "/summary.txt", report_to_table(result.summary));
  return result;
}

std::vector<AblationVariant> ablation_grid(const ExperimentConfig& base) {
  std::vector<AblationVariant> grid;
  for (int bit = 0; bit < 8; ++bit) {
    ExperimentConfig c = base;
    c.flags.sdm = bit & 4;
    c.flags.fadf = bit & 2;
    c.flags.hmpr = bit & 1;
    c.flags.low_branch = true;
    c.flags.high_branch = true;
    std::string label = "modules_";
    label += (c.flags.sdm ? "S" : "-");
    label += (c.flags.fadf ? "F" : "-");
    label += (c.flags.hmpr ? "H" : "-");
    c.out_dir = base.out_dir + "/" + label;
    grid.push_back({label, c});
  }
  for (int bit = 0; bit < 4; ++bit) {
    ExperimentConfig c = base;
    c.flags = ModuleFlags{};  // full model
    c.flags.low_branch = bit & 2;
    c.flags.high_branch = bit & 1;
    std::string label = "branches_";
    label += (c.flags.low_branch ? "L" : "-");
    label += (c.flags.high_branch ? "H" : "-");
    c.out_dir = base.out_dir + "/" + label;
    grid.push_back({label, c});
  }
  return grid;
}

std::vector<std::pair<std::string, RunReport>> run_ablation(const ExperimentConfig& base) {
  std::vector<std::pair<std::string, RunReport>> out;
  std::ostringstream table;
  char line[200];
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %8s\n", "variant", "Dice", "IoU", "F1");
  table << line;
  for (const auto& variant : ablation_grid(base)) {
    auto res = run_experiment(variant.config);
    std::snprintf(line, sizeof(line), "%-14s %8.2f %8.2f %8.2f\n", variant.label.c_str(),
                  res.summary.average.dice, res.summary.average.iou, res.summary.average.f1);
    table << line;
    out.emplace_back(variant.label, res.summary);
  }
  fs::create_directories(base.out_dir);
  write_text_file(base.out_dir + "/ablation.txt", table.str());
  return out;
}

}  // namespace wavedg
