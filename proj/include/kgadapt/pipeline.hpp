#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgadapt/checkpoint.hpp"
#include "kgadapt/evaluation.hpp"
#include "kgadapt/mlm.hpp"
#include "kgadapt/synthetic.hpp"

namespace kgadapt {

// ---- configuration ------------------------------------------------------------

/// Epoch counts for one downstream task.
struct TaskEpochs {
  std::size_t fusion_epochs = 10;
  std::size_t full_epochs = 1;
  friend bool operator==(const TaskEpochs&, const TaskEpochs&) = default;
};

struct FinetuneConfig {
  std::size_t batch = 32;
  double lr = 1e-4;
  std::size_t warmup = 10;
  double tau = 0.1;
  double fusion_lr = 3e-3;
  double fusion_reg = 0.1;
  TaskEpochs completion;
  TaskEpochs alignment{10, 1};
  friend bool operator==(const FinetuneConfig&, const FinetuneConfig&) = default;
};

struct PipelineConfig {
  std::string profile = "desk";
  std::uint64_t seed = 7;  // every stage seed is derived from this one
  std::filesystem::path out = "runs/desk";
  std::filesystem::path data_dir;  // empty: generate the synthetic benchmark from `synthetic`
  SyntheticConfig synthetic;
  EncoderConfig encoder;  // vocab_size comes from the data
  std::size_t bottleneck = 64;
  std::vector<AdapterKind> fusion_adapters{AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS};
  MlmHyper mlm;
  TrainHyper integrate;
  std::size_t integrate_epochs = 0;  // > 0 replaces integrate.steps by epochs over each adapter's records
  FinetuneConfig finetune;
  std::size_t eval_k = 10;

  void validate() const;
};

/// Built-in profiles: "desk" (minutes on one CPU core) and "paper" (published hyperparameters).
PipelineConfig profile_config(const std::string& profile);

nlohmann::json config_to_json(const PipelineConfig& config);
/// Keys absent from `j` take the values of the profile named by j["profile"] (default "desk").
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a config document; the value is parsed as JSON when
/// possible and kept as a string otherwise. Unknown keys are rejected.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// SHA-256 of the canonical config document without the output directory.
std::string config_hash(const PipelineConfig& config);

// ---- reports ------------------------------------------------------------------------

enum class ReportFormat { Tsv, Json };
ReportFormat parse_report_format(const std::string& text);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

/// Percentage with one decimal, e.g. 0.131 -> "13.1".
std::string format_percent(double fraction);

/// Rows per language, per category and overall; columns in a fixed order.
std::string reports_tsv(const std::vector<MetricReport>& reports);
void emit_report(const std::vector<MetricReport>& reports, ReportFormat format, const std::filesystem::path& path);
/// Reads a file written by emit_report in json format.
std::vector<MetricReport> load_reports(const std::filesystem::path& path);

// ---- run log ----------------------------------------------------------------------

/// Append-only CSV: timestamp,stage,step,metric,value. Steps must not decrease within a stage.
class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& path);
  void record(const std::string& stage, std::uint64_t step, const std::string& metric, double value);
  void record_curve(const std::string& stage, const LossCurve& curve);

 private:
  std::filesystem::path path_;
  std::map<std::string, std::uint64_t> last_step_;
};

// ---- stages -------------------------------------------------------------------------

/// Model variants compared by the ablation.
const std::vector<std::string>& ablation_variants();  // base EP TP ES TS LARGE FUSION

/// "FUSION" for the configured adapter set, otherwise "FUSION(EP+ES)" style names.
std::string fusion_variant(const std::vector<AdapterKind>& kinds, const PipelineConfig& config);

/// Languages of every record a stage trained on.
struct StageAudit {
  std::string stage;
  std::set<std::string> languages;
  std::size_t records = 0;
};

void add_pairs(StageAudit& audit, const std::vector<TrainPair>& pairs);
/// Every audit written under <out>/audit, ordered by stage name.
std::vector<StageAudit> load_audits(const std::filesystem::path& out);

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  const std::string& hash() const { return hash_; }

  std::filesystem::path data_dir() const;
  std::filesystem::path checkpoint_stem(const std::string& name) const;
  std::filesystem::path vocab_path() const;
  std::filesystem::path report_path(const std::string& name) const;
  std::filesystem::path audit_path() const;

  /// Writes the synthetic benchmark (unless data_dir points at an existing one) and the vocabulary.
  void generate();
  /// Stage 1: MLM pretraining of a fresh backbone.
  Checkpoint pretrain();
  /// Stage 2: one adapter on the frozen backbone. LARGE gets four times the steps, one
  /// objective per step in turn, so each objective sees as many updates as its own adapter.
  Checkpoint integrate(AdapterKind kind);
  /// Stage 3: fusion over the given adapters trained on the task, everything else frozen.
  Checkpoint fuse(Task task, const std::vector<AdapterKind>& kinds);
  /// Stage 4: every parameter trained on the task, starting from the variant's checkpoint.
  Checkpoint finetune(Task task, const std::string& variant);
  MetricReport evaluate(Task task, const std::string& variant);

  /// Runs whatever is missing and evaluates every ablation variant on the task.
  std::vector<MetricReport> ablate(Task task);

  /// Loads an existing stage checkpoint; throws PrerequisiteError naming the stage when absent.
  Checkpoint require(const std::string& name, const std::string& stage_hint) const;
  bool has_checkpoint(const std::string& name) const;

  const SyntheticData& data();
  const Vocab& vocab();

 private:
  Checkpoint save(const std::string& name, AdaptedEncoder model, nlohmann::json provenance);
  void write_audit(const StageAudit& audit) const;
  TrainHyper finetune_hyper(Task task) const;
  FinetunePlan finetune_plan(Task task, bool fusion_stage) const;
  std::vector<TrainPair> task_pairs(Task task);
  AdapterData adapter_data();
  std::size_t adapter_records(AdapterKind kind);
  MetricReport run_eval(Task task, const AdaptedEncoder& model);

  PipelineConfig config_;
  std::string hash_;
  std::optional<SyntheticData> data_;
  std::optional<Vocab> vocab_;
  RunLog log_;
};

/// Parses "base", "EP".."LARGE", "FUSION" and "FUSION(EP+ES)"; returns the adapter kinds involved.
std::vector<AdapterKind> variant_adapters(const std::string& variant, const PipelineConfig& config);

}  // namespace kgadapt
