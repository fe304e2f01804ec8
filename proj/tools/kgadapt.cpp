#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kgadapt/errors.hpp"
#include "kgadapt/pipeline.hpp"
#include "kgadapt/textio.hpp"

namespace fs = std::filesystem;
using namespace kgadapt;

namespace {

struct GlobalOptions {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  std::string log_level = "info";
};

// Precedence, lowest first: profile defaults, config file, --profile, --set, --seed, --out.
PipelineConfig resolve(const GlobalOptions& g) {
  nlohmann::json file = nlohmann::json::object();
  if (!g.config.empty()) {
    try {
      file = nlohmann::json::parse(read_file(g.config));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(g.config + ": " + e.what());
    }
  }
  if (!g.profile.empty()) file["profile"] = g.profile;
  nlohmann::json doc = config_to_json(config_from_json(file));
  for (const auto& o : g.overrides) apply_override(doc, o);
  if (g.seed) doc["seed"] = *g.seed;
  if (!g.out.empty()) doc["out"] = g.out;
  return config_from_json(doc);
}

std::vector<AdapterKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<AdapterKind> kinds;
  for (const auto& n : names) kinds.push_back(parse_adapter_kind(n));
  return kinds;
}

void print_summary(const MetricReport& r) { std::cout << reports_tsv({r}); }

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ContractViolation*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge adapters for a multilingual encoder: pretraining, integration, fusion and evaluation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--profile", g.profile, "hyperparameter profile")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--set", g.overrides, "override a config value, e.g. --set mlm.steps=100");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");

  auto* gen = app.add_subcommand("gen-synthetic", "write the synthetic benchmark and vocabulary");
  auto* pretrain = app.add_subcommand("pretrain", "MLM pretraining of the backbone");

  std::string kind;
  auto* adapter = app.add_subcommand("train-adapter", "train one adapter on the frozen backbone");
  adapter->add_option("--kind", kind, "adapter kind")
      ->required()
      ->check(CLI::IsMember({"ep", "tp", "es", "ts", "large"}, CLI::ignore_case));

  std::string task = "alignment";
  std::vector<std::string> fusion_kinds;
  auto* fusion = app.add_subcommand("train-fusion", "train fusion over integrated adapters on a task");
  fusion->add_option("--task", task, "downstream task")->required()->check(CLI::IsMember({"completion", "alignment"}));
  fusion->add_option("--adapters", fusion_kinds, "adapters to fuse (default: the configured set)")->delimiter(',');

  std::string variant = "FUSION";
  auto* finetune = app.add_subcommand("finetune", "train every parameter on a task");
  finetune->add_option("--task", task, "downstream task")->required()->check(CLI::IsMember({"completion", "alignment"}));
  finetune->add_option("--variant", variant, "base|EP|TP|ES|TS|LARGE|FUSION|FUSION(EP+ES)");

  auto* eval = app.add_subcommand("eval", "evaluate a finetuned variant");
  eval->add_option("--task", task, "downstream task")->required()->check(CLI::IsMember({"completion", "alignment"}));
  eval->add_option("--variant", variant, "base|EP|TP|ES|TS|LARGE|FUSION|FUSION(EP+ES)");

  std::vector<std::string> tasks{"completion", "alignment"};
  auto* ablate = app.add_subcommand("ablate", "run and evaluate every ablation variant");
  ablate->add_option("--task", tasks, "tasks to ablate")->check(CLI::IsMember({"completion", "alignment"}));

  std::vector<fs::path> inputs;
  std::string format = "tsv";
  std::string output;
  auto* report = app.add_subcommand("report", "merge json reports into one table");
  report->add_option("inputs", inputs, "json reports (default: the ablation reports under --out)");
  report->add_option("--format", format, "tsv|json")->check(CLI::IsMember({"tsv", "json"}));
  report->add_option("-o,--output", output, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    spdlog::set_default_logger(spdlog::stderr_color_mt("kgadapt"));
    spdlog::set_level(spdlog::level::from_str(g.log_level));
    Pipeline p(resolve(g));
    spdlog::info("profile {}, seed {}, config {}", p.config().profile, p.config().seed, p.hash().substr(0, 12));

    if (*gen) p.generate();
    if (*pretrain) p.pretrain();
    if (*adapter) p.integrate(parse_adapter_kind(kind));
    if (*fusion) p.fuse(parse_task(task), fusion_kinds.empty() ? p.config().fusion_adapters : parse_kinds(fusion_kinds));
    if (*finetune) p.finetune(parse_task(task), variant);
    if (*eval) print_summary(p.evaluate(parse_task(task), variant));
    if (*ablate)
      for (const auto& t : tasks) std::cout << reports_tsv(p.ablate(parse_task(t)));
    if (*report) {
      if (inputs.empty())
        for (const auto& t : tasks) {
          const fs::path path = p.report_path("ablation-" + t + ".json");
          if (fs::exists(path)) inputs.push_back(path);
        }
      if (inputs.empty()) throw PrerequisiteError("no reports found; run `ablate` or pass report files");
      std::vector<MetricReport> all;
      for (const auto& path : inputs)
        for (auto& r : load_reports(path)) all.push_back(std::move(r));
      const auto fmt = parse_report_format(format);
      if (!output.empty()) {
        emit_report(all, fmt, output);
      } else if (fmt == ReportFormat::Tsv) {
        std::cout << reports_tsv(all);
      } else {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : all) arr.push_back(report_to_json(r));
        std::cout << arr.dump(2) << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code(e);
  }
}
