#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sgunlearn/metrics.hpp"
#include "sgunlearn/unlearn.hpp"

namespace sgu {

struct DatasetSpec {
  long classes = 5;
  long per_class = 600;
  long dim = 20;
  double separation = 2.0;
  std::string csv;  // when set, load instead of generating
};

struct ForgetSpec {
  ForgetMode mode = ForgetMode::kRandom;
  double ratio = 0.1;
  long forget_class = 0;
};

// Original-model schedule: long enough to overfit the generator at the
// default scale (the membership signal the game needs), with 10x decays at
// epochs 60 and 100.
inline TrainConfig original_schedule() {
  TrainConfig t;
  t.epochs = 120;
  t.lr_milestones = {{60, 0.1}, {100, 0.1}};
  return t;
}

// One method block. lr/epochs defaults depend on the method (gradient ascent
// runs short and gentle); unset keys resolve after parsing.
struct MethodSpec {
  std::string name = "sg";
  double alpha = 1.0;
  TrainConfig steps = sg_default_schedule();  // unlearning-phase schedule
  AttackFamily family = AttackFamily::kSqHinge;
  double attack_reg = 1.0;
  double attack_tol = 1e-10;
  FeatureMode feature_mode = FeatureMode::kProbsLoss;
  double gamma = 5e-4;  // l1
  IuOptions iu;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<long> hidden = {128, 128};
  TrainConfig train = original_schedule();
  ForgetSpec forget;
  MethodSpec method;
  AuditConfig audit;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs";
  std::string digest;  // filled by parse_config
};

// Parses the "sgunlearn-config v1" key=value format. The digest is FNV-1a64
// over the sorted section.key=value pairs, so reordering lines or sections
// does not change it. Unknown sections or keys are contract errors; malformed
// lines and numbers are parse errors carrying the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Environment override hook for the output directory.
inline constexpr const char* kOutputDirEnvVar = "SGUNLEARN_OUTPUT_DIR";

struct RunRecord {
  std::string config_digest;
  std::string method;
  double alpha = 0.0;  // sg runs; 0 for baselines
  std::uint64_t seed = 0;
  MetricsReport metrics;
  std::vector<EpochTrace> trace;              // sg optimization trace
  std::vector<MetricsReport> epoch_reports;   // ablate runs: index 0 = original model
  std::vector<double> forget_losses;          // per-row CE on forget rows
  std::vector<double> test_losses;            // per-row CE on test_audit rows
  double wall_clock_s = 0.0;
};

// The fixed JSON field set of a MetricsReport.
inline constexpr std::array<std::pair<const char*, double MetricsReport::*>, 11> kMetricFields{{
    {"acc_r", &MetricsReport::acc_r},
    {"acc_te", &MetricsReport::acc_te},
    {"acc_f", &MetricsReport::acc_f},
    {"acc_gap", &MetricsReport::acc_gap},
    {"mia_acc", &MetricsReport::mia_acc},
    {"mia_auc", &MetricsReport::mia_auc},
    {"mia_f1", &MetricsReport::mia_f1},
    {"ks_stat", &MetricsReport::ks_stat},
    {"ks_pvalue", &MetricsReport::ks_pvalue},
    {"w_dist", &MetricsReport::w_dist},
    {"runtime_s", &MetricsReport::runtime_s},
}};

std::string record_to_json(const RunRecord& record);
RunRecord record_from_json(const std::string& text);
std::filesystem::path record_path(const std::filesystem::path& dir, const RunRecord& record);

// Experiment building blocks. The run seed drives every stream: dataset
// generation (unless a CSV is pinned), forget partition, model init and
// shuffles, audit subsampling.
DatasetBundle make_bundle(const ExperimentConfig& cfg, std::uint64_t seed);
ForgetPartition make_partition(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                               std::uint64_t seed);
ModelCheckpoint train_original(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                               std::uint64_t seed);

// Runs cfg.method (or the override) on one seed and assembles the record.
// metrics.runtime_s is the method's own wall-clock; evaluation time is only
// in wall_clock_s. out_ckpt, when given, receives the unlearned model.
RunRecord run_method(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                     const ForgetPartition& partition, const ModelCheckpoint& orig,
                     const std::string& method, std::uint64_t seed,
                     ModelCheckpoint* out_ckpt = nullptr);

// sg run that also evaluates a full MetricsReport after every epoch
// (epoch_reports[0] is the original model), for the ablation figure.
RunRecord run_sg_with_epoch_reports(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                                    const ForgetPartition& partition, const ModelCheckpoint& orig,
                                    double alpha, std::uint64_t seed);

// Hyperparameter selection, scored on a fresh auditing set whose negatives
// come from the validation split: score = validation accuracy - MIA accuracy.
double hyperparam_score(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                        const ForgetPartition& partition, const AuditConfig& audit_cfg,
                        std::uint64_t seed);
std::size_t select_best_index(const std::vector<double>& scores);  // argmax, ties to lower index
std::size_t select_hyperparams(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                               const ForgetPartition& partition, const std::vector<SgConfig>& grid,
                               const AuditConfig& audit_cfg, std::uint64_t seed);

enum class PlotKind { kAblation, kAlphaSweep, kLossHist };

// Writes one CSV per call and returns its path.
//   ablation:    epoch,defender_utility,acc_te,mia_acc,w_dist averaged across
//                records (all must carry equal-length epoch_reports)
//   alpha-sweep: one row per distinct alpha with mean metrics
//   loss-hist:   log10-spaced bins over the pooled losses; counts conserve
std::filesystem::path emit_plot_data(const std::vector<RunRecord>& records, PlotKind kind,
                                     const std::filesystem::path& out_dir);

struct Aggregate {
  std::string label;
  double alpha = 0.0;
  long n = 0;
  MetricsReport mean;
  MetricsReport stddev;  // sample std, 0 when n = 1
};

std::vector<Aggregate> aggregate_records(const std::vector<RunRecord>& records);
std::string report_csv(const std::vector<Aggregate>& rows);
std::vector<RunRecord> load_records(const std::filesystem::path& dir);

}  // namespace sgu
