// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned below.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>

#include "helpers.hpp"
#include "kgadapt/errors.hpp"
#include "kgadapt/pipeline.hpp"
#include "kgadapt/textio.hpp"

using namespace kgadapt;
using namespace kgadapt::testing;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances ----------------------------------------------------------------

constexpr double kGradcheckMaxRelErr = 1e-3;
constexpr double kGradcheckEps = 1e-4;
constexpr double kGradcheckSeconds = 60.0;
constexpr std::size_t kFrozenSteps = 100;
constexpr std::size_t kFusionInputs = 1000;
constexpr double kFusionSumTol = 1e-6;
constexpr double kFusionUniformTol = 1e-5;
constexpr std::size_t kBaseSizeAdapterParams = 156768;
constexpr double kMetricTol = 1e-9;
constexpr std::size_t kRankSets = 200;
constexpr double kInfonceTol = 1e-6;
constexpr double kZeroShotMargin = 0.20;
constexpr double kAblationSlack = 0.02;
constexpr double kTransferSeconds = 600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double fraction) { return format_percent(fraction); }

// ---- criteria 1-6: self-contained checks ------------------------------------------------

Outcome gradient_check() {
  EncoderConfig config = tiny_encoder(32);
  config.heads = 4;
  config.ffn_dim = 64;
  auto model = fused_model(config, 4, 3);
  auto params = model.params.cast<double>();
  params.set_all_trainable(true);
  const Vocab vocab = letters_vocab();
  const std::vector<TextItem> anchors{item({"a", "b", "c"}), item({"d", "[SEP]", "e"}),
                                      item({"f", "g", "h", "a"}, Pool::Span, {1, 2})};
  const std::vector<TextItem> positives{item({"b"}), item({"c", "d"}), item({"e", "f", "g"})};
  auto loss = [&](Graph<double>& g) {
    return infonce_loss(g, encode_items(g, model.spec, vocab, anchors), encode_items(g, model.spec, vocab, positives),
                        0.5);
  };
  const auto start = Clock::now();
  const double err = gradcheck(params, loss, kGradcheckEps);
  const double secs = seconds_since(start);
  return {err < kGradcheckMaxRelErr && secs < kGradcheckSeconds,
          std::to_string(params.scalar_count()) + " scalars, max rel err " + fmt("%.2e", err) + " (< 1e-3), " +
              fmt("%.1f", secs) + " s (< 60 s)"};
}

Outcome frozen_backbone(const PipelineConfig& desk) {
  const auto data = gen_synthetic(desk.synthetic);
  const Vocab vocab = build_vocab(vocabulary_corpus(data));
  EncoderConfig config = desk.encoder;
  config.vocab_size = vocab.size();
  Rng rng(desk.seed);
  auto model = insert_adapters(config, init_backbone(config, rng), knowledge_adapter_kinds(), desk.bottleneck, desk.seed);
  add_adapter(model, AdapterKind::LARGE,
              large_adapter_bottleneck(4 * adapter_param_count(config.layers, config.dim, desk.bottleneck) +
                                           fusion_param_count(config.layers, config.dim),
                                       config.dim, config.layers),
              rng);
  const AdapterData ad{restrict_languages(data.kg, data.split.adapter_languages()), data.c1, data.c2};
  TrainHyper hyper = desk.integrate;
  hyper.batch = 32;
  hyper.steps = kFrozenSteps;
  std::string detail;
  bool ok = true;
  for (auto kind : {AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS, AdapterKind::LARGE}) {
    const auto before = group_checksums(model.params);
    try {
      train_adapter(model, kind, vocab, ad, hyper);
    } catch (const ContractViolation& e) {
      return {false, std::string("exit code 3: ") + e.what()};
    }
    const auto after = group_checksums(model.params);
    const std::string own = "adapter." + to_string(kind);
    bool frozen = after.at("backbone") == before.at("backbone");
    for (const auto& [group, sum] : before)
      if (group != own) frozen = frozen && after.at(group) == sum;
    const bool trained = after.at(own) != before.at(own);
    ok = ok && frozen && trained;
    detail += (detail.empty() ? "" : ", ") + to_string(kind) + (frozen ? " frozen" : " CHANGED") + (trained ? "" : " (adapter idle)");
  }
  return {ok, std::to_string(kFrozenSteps) + " steps each: " + detail};
}

Outcome fusion_normalization() {
  Rng rng(11);
  const std::size_t d = 16, n = 4;
  double worst_sum = 0.0, worst_uniform = 0.0;
  bool nonneg = true;
  for (std::size_t trial = 0; trial < kFusionInputs; ++trial) {
    FusionLayer layer{random_tensor({d, d}, rng, 0.5), random_tensor({d, d}, rng, 0.5), random_tensor({d, d}, rng, 0.5)};
    const auto h = random_vector(d, rng);
    std::vector<std::vector<float>> outs;
    for (std::size_t i = 0; i < n; ++i) outs.push_back(random_vector(d, rng));
    const auto mixed = fusion_forward(h, outs, layer);
    double sum = 0.0;
    for (float w : mixed.weights) {
      nonneg = nonneg && w >= 0.0f;
      sum += w;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    const auto same = fusion_forward(h, std::vector<std::vector<float>>(n, h), layer);
    for (float w : same.weights) worst_uniform = std::max(worst_uniform, std::abs(w - 1.0 / static_cast<double>(n + 1)));
  }

  // The same property inside the encoder: adapters reduced to the identity give uniform weights on every token.
  auto model = fused_model(tiny_encoder(16), 4, 12);
  for (const auto& name : model.params.names())
    if (name.find("W_up") != std::string::npos || name.find("b_up") != std::string::npos)
      model.params.mutable_value(name).fill(0.0f);
  Graph<float> g(&model.params);
  const Vocab vocab = letters_vocab();
  const std::vector<TokenSeq> seqs{tokenize("a b c d", "xx", vocab, 8), tokenize("e f", "xx", vocab, 8)};
  const auto batch = TokenBatch::pack(seqs, 8);
  FusionTrace trace;
  encode_model(g, model.spec, batch, &trace);
  for (Var w : trace.weights) {
    const auto& t = g.value(w);
    for (std::size_t i = 0; i < t.numel(); ++i)
      worst_uniform = std::max(worst_uniform, std::abs(t[i] - 1.0 / static_cast<double>(t.cols())));
  }
  return {nonneg && worst_sum <= kFusionSumTol && worst_uniform <= kFusionUniformTol,
          std::to_string(kFusionInputs) + " inputs: " + (nonneg ? "non-negative" : "NEGATIVE WEIGHT") +
              ", max |sum-1| " + fmt("%.1e", worst_sum) + " (<= 1e-6), max uniform dev " + fmt("%.1e", worst_uniform) +
              " (<= 1e-5)"};
}

Outcome parameter_accounting(const PipelineConfig& desk) {
  const std::size_t base_size = adapter_param_count(12, 768, 8);
  bool ok = base_size == kBaseSizeAdapterParams && base_size == 12 * (2 * 768 * 8 + 8 + 768);

  EncoderConfig config = desk.encoder;
  config.vocab_size = 100;
  auto model = fused_model(config, desk.bottleneck, 5);
  const auto budget = param_counts(model);
  std::size_t enumerated_adapters = 0;
  for (const auto& [kind, count] : budget.adapters) {
    const std::size_t tensors = model.params.scalar_count_prefix(adapter_names::prefix(kind));
    ok = ok && tensors == count;
    enumerated_adapters += tensors;
  }
  ok = ok && budget.backbone == model.params.scalar_count_prefix("backbone.") &&
       budget.fusion == model.params.scalar_count_prefix(adapter_names::kFusionPrefix) &&
       budget.backbone + enumerated_adapters + budget.fusion == model.params.scalar_count();

  Rng rng(6);
  const auto large = make_large_adapter(budget, config.dim, config.layers, rng);
  std::size_t large_count = 0;
  for (const auto& l : large.layers) large_count += l.w_down.numel() + l.b_down.numel() + l.w_up.numel() + l.b_up.numel();
  const std::size_t increment = config.layers * (2 * config.dim + 1);
  const std::size_t reference = budget.extra_total();
  ok = ok && large_count <= reference && reference - large_count < increment;
  return {ok, "L=12 d=768 b=8 -> " + std::to_string(base_size) + "; desk enumeration matches; LARGE b'=" +
                  std::to_string(large.bottleneck) + " uses " + std::to_string(large_count) + " of " +
                  std::to_string(reference) + " (increment " + std::to_string(increment) + ")"};
}

Outcome metric_oracles() {
  const std::vector<std::size_t> ranks{1, 2, 4};
  const double h1 = hits_at_k(ranks, 1), m = mrr(ranks);
  bool ok = std::abs(h1 - 1.0 / 3.0) <= kMetricTol && std::abs(m - 1.75 / 3.0) <= kMetricTol;

  Rng rng(13);
  std::size_t agree = 0;
  for (std::size_t set = 0; set < kRankSets; ++set) {
    const std::size_t n = 1 + rng.below(80), d = 2 + rng.below(8);
    CandidateIndex index;
    index.embeddings = Tensor({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      index.ids.push_back("c" + std::to_string(1000 + rng.below(9000)) + "-" + std::to_string(i));
      for (std::size_t j = 0; j < d; ++j) index.embeddings.at(i, j) = static_cast<float>(static_cast<int>(rng.below(3)) - 1);
      index.embeddings.at(i, rng.below(d)) = 1.0f;
    }
    std::sort(index.ids.begin(), index.ids.end());
    const auto q = random_vector(d, rng);
    std::vector<std::pair<double, std::string>> scored;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0, nq = 0.0, nc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += static_cast<double>(q[j]) * index.embeddings.at(i, j);
        nq += static_cast<double>(q[j]) * q[j];
        nc += static_cast<double>(index.embeddings.at(i, j)) * index.embeddings.at(i, j);
      }
      scored.emplace_back(-dot / std::sqrt(nq * nc), index.ids[i]);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (std::abs(a.first - b.first) > 1e-12) return a.first < b.first;
      return a.second < b.second;
    });
    std::vector<std::string> expected;
    for (const auto& s : scored) expected.push_back(s.second);
    if (rank(q, index) == expected) ++agree;
  }
  ok = ok && agree == kRankSets;
  return {ok, "Hit@1 " + fmt("%.4f", h1) + ", MRR " + fmt("%.5f", m) + " (tol 1e-9); rank == sort on " +
                  std::to_string(agree) + "/" + std::to_string(kRankSets) + " sets"};
}

Outcome infonce_closed_form() {
  ContrastiveBatch two{Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}), Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}), {}};
  const double loss = infonce(two, 1.0);
  const double expected = std::log(1.0 + std::exp(-1.0));
  ContrastiveBatch one{Tensor({1, 3}, std::vector<float>{0.2f, -1, 3}), Tensor({1, 3}, std::vector<float>{1, 1, 1}), {}};
  const double single = infonce(one, 1.0);
  return {std::abs(loss - expected) <= kInfonceTol && single == 0.0,
          "B=2 loss " + fmt("%.9f", loss) + " vs ln(1+e^-1) " + fmt("%.9f", expected) + "; B=1 loss " +
              fmt("%g", single)};
}

// ---- criteria 7-11: the seeded desk pipeline ------------------------------------------------

const std::string kAlignFusion = "FUSION(EP+ES)";
const std::string kCompletionFusion = "FUSION(TP+TS)";

struct DeskRun {
  std::map<std::string, double> seconds;  // per stage
  MetricReport align_base, align_fusion, completion_base, completion_fusion;
  std::vector<MetricReport> ablation_alignment, ablation_completion;
  LanguageSplit split;

  double total(const std::vector<std::string>& stages) const {
    double t = 0.0;
    for (const auto& s : stages) t += seconds.at(s);
    return t;
  }
};

DeskRun run_desk(const PipelineConfig& config) {
  DeskRun run;
  Pipeline p(config);
  auto timed = [&](const std::string& stage, const std::function<void()>& fn) {
    const auto start = Clock::now();
    fn();
    run.seconds[stage] += seconds_since(start);
    spdlog::info("acceptance: {} done in {:.1f} s", stage, run.seconds[stage]);
  };
  timed("generate", [&] { p.generate(); });
  timed("pretrain", [&] { p.pretrain(); });
  for (auto kind : {AdapterKind::EP, AdapterKind::ES, AdapterKind::TP, AdapterKind::TS})
    timed("adapter-" + to_string(kind), [&] { p.integrate(kind); });

  timed("alignment-fusion", [&] {
    p.fuse(Task::Alignment, {AdapterKind::EP, AdapterKind::ES});
    p.finetune(Task::Alignment, kAlignFusion);
    run.align_fusion = p.evaluate(Task::Alignment, kAlignFusion);
  });
  timed("alignment-base", [&] {
    p.finetune(Task::Alignment, "base");
    run.align_base = p.evaluate(Task::Alignment, "base");
  });
  timed("completion-fusion", [&] {
    p.fuse(Task::Completion, {AdapterKind::TP, AdapterKind::TS});
    p.finetune(Task::Completion, kCompletionFusion);
    run.completion_fusion = p.evaluate(Task::Completion, kCompletionFusion);
  });
  timed("completion-base", [&] {
    p.finetune(Task::Completion, "base");
    run.completion_base = p.evaluate(Task::Completion, "base");
  });
  timed("ablation-alignment", [&] { run.ablation_alignment = p.ablate(Task::Alignment); });
  timed("ablation-completion", [&] { run.ablation_completion = p.ablate(Task::Completion); });
  run.split = p.data().split;
  return run;
}

double category(const MetricReport& r, const std::string& name, double CategoryMetrics::*field) {
  return r.categories.at(name).*field;
}

Outcome zero_shot_alignment(const DeskRun& run) {
  bool ok = true;
  std::string detail;
  for (const std::string cat : {"ZS-In", "ZS-Un"}) {
    const double f = category(run.align_fusion, cat, &CategoryMetrics::hit1);
    const double b = category(run.align_base, cat, &CategoryMetrics::hit1);
    ok = ok && f - b >= kZeroShotMargin;
    detail += cat + " Hit@1 " + pct(f) + " vs base " + pct(b) + " (" + fmt("%+.1f", 100 * (f - b)) + ", need +20.0); ";
  }
  const double secs = run.total({"generate", "pretrain", "adapter-EP", "adapter-ES", "alignment-fusion", "alignment-base"});
  ok = ok && secs < kTransferSeconds;
  return {ok, detail + fmt("%.0f", secs) + " s (< 600 s)"};
}

Outcome completion_transfer(const DeskRun& run) {
  const double f = category(run.completion_fusion, "ZS-In", &CategoryMetrics::mrr);
  const double b = category(run.completion_base, "ZS-In", &CategoryMetrics::mrr);
  const double secs =
      run.total({"generate", "pretrain", "adapter-TP", "adapter-TS", "completion-fusion", "completion-base"});
  return {f > b && secs < kTransferSeconds,
          "ZS-In MRR " + pct(f) + " vs base " + pct(b) + "; " + fmt("%.0f", secs) + " s (< 600 s)"};
}

Outcome ablation_direction(const DeskRun& run) {
  auto hit1 = [](const std::vector<MetricReport>& reports) {
    std::map<std::string, double> out;
    for (const auto& r : reports) out[r.variant] = r.overall().hit1;
    return out;
  };
  const auto a = hit1(run.ablation_alignment), c = hit1(run.ablation_completion);
  auto best_single = [](const std::map<std::string, double>& m) {
    return std::max({m.at("EP"), m.at("TP"), m.at("ES"), m.at("TS")});
  };
  const bool ep_align = a.at("EP") >= a.at("TP");
  const bool tp_comp = c.at("TP") >= c.at("EP");
  const bool fusion_align = a.at("FUSION") >= best_single(a) - kAblationSlack;
  const bool fusion_comp = c.at("FUSION") >= best_single(c) - kAblationSlack;
  std::string detail = "alignment EP " + pct(a.at("EP")) + " TP " + pct(a.at("TP")) + " FUSION " + pct(a.at("FUSION")) +
                       " best single " + pct(best_single(a)) + "; completion TP " + pct(c.at("TP")) + " EP " +
                       pct(c.at("EP")) + " FUSION " + pct(c.at("FUSION")) + " best single " + pct(best_single(c)) +
                       " (Hit@1, all languages; LARGE " + pct(a.at("LARGE")) + " / " + pct(c.at("LARGE")) +
                       " reported, not gated)";
  return {ep_align && tp_comp && fusion_align && fusion_comp, detail};
}

std::map<std::string, std::string> artifact_bytes(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const auto* sub : {"data", "checkpoints", "reports"}) {
    if (!fs::exists(out / sub)) continue;
    for (const auto& e : fs::recursive_directory_iterator(out / sub))
      if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = read_file(e.path());
  }
  return files;
}

Outcome determinism(const PipelineConfig& a, const PipelineConfig& b) {
  const auto first = artifact_bytes(a.out), second = artifact_bytes(b.out);
  std::size_t checkpoints = 0, reports = 0, differing = 0;
  std::string example;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      if (example.empty()) example = name;
    }
    if (name.rfind("checkpoints/", 0) == 0) ++checkpoints;
    if (name.rfind("reports/", 0) == 0) ++reports;
  }
  const bool ok = differing == 0 && first.size() == second.size() && checkpoints > 0 && reports > 0;
  return {ok, std::to_string(first.size()) + " files (" + std::to_string(checkpoints) + " checkpoint, " +
                  std::to_string(reports) + " report) compared byte-wise, " + std::to_string(differing) + " differ" +
                  (example.empty() ? "" : " e.g. " + example)};
}

Outcome zs_un_audit(const PipelineConfig& config, const LanguageSplit& split) {
  const std::set<std::string> unseen(split.zs_un.begin(), split.zs_un.end());
  std::size_t records = 0, leaks = 0;
  std::set<std::string> stages;
  for (const auto& audit : load_audits(config.out)) {
    stages.insert(audit.stage);
    records += audit.records;
    for (const auto& lang : audit.languages) leaks += unseen.count(lang);
  }
  // Adapter corpora on disk: C1 carries a language per record, C2 is base-language only,
  // and alignment training targets name their language.
  const fs::path data = config.out / "data";
  std::size_t corpus_rows = 0;
  for (const auto& r : load_c1(data / "c1.tsv")) {
    ++corpus_rows;
    leaks += unseen.count(r.lang);
  }
  for (const auto& line : read_lines(data / "alignment_train.tsv")) {
    if (line.empty()) continue;
    ++corpus_rows;
    const auto f = split_fields(line, '\t');
    leaks += unseen.count(f.at(1)) + unseen.count(f.at(2));
  }
  const bool covered = stages.count("integrate-ep") && stages.count("integrate-tp") && stages.count("integrate-es") &&
                       stages.count("integrate-ts") && stages.size() >= 8;
  return {leaks == 0 && covered && !unseen.empty(),
          std::to_string(stages.size()) + " training stages (" + std::to_string(records) + " records) and " +
              std::to_string(corpus_rows) + " corpus rows scanned, " + std::to_string(leaks) + " ZS-Un records"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  fs::path work = fs::temp_directory_path() / "kgadapt-acceptance";
  fs::path config_path = KGADAPT_DESK_CONFIG;
  std::vector<int> only;
  std::string level = "warn";
  app.add_option("--work", work, "Scratch directory for the pipeline runs (wiped first)");
  app.add_option("--config", config_path, "Desk configuration holding the recorded seed")->check(CLI::ExistingFile);
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--log-level", level, "spdlog level");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(level));

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  PipelineConfig desk = load_config(config_path);
  fs::remove_all(work);
  PipelineConfig run_a = desk, run_b = desk;
  run_a.out = work / "run-a";
  run_b.out = work / "run-b";

  int failed = 0, ran = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
    if (!wanted(id)) return;
    ++ran;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %2d  %-28s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  };

  report(1, "gradient check", gradient_check);
  report(2, "frozen backbone", [&] { return frozen_backbone(desk); });
  report(3, "fusion normalization", fusion_normalization);
  report(4, "parameter accounting", [&] { return parameter_accounting(desk); });
  report(5, "metric oracles", metric_oracles);
  report(6, "InfoNCE closed form", infonce_closed_form);

  std::optional<DeskRun> desk_run;
  std::string desk_error;
  if (wanted(7) || wanted(8) || wanted(9) || wanted(10) || wanted(11)) {
    try {
      desk_run = run_desk(run_a);
    } catch (const std::exception& e) {
      desk_error = e.what();
    }
  }
  auto with_run = [&](const std::function<Outcome(const DeskRun&)>& check) {
    return [&, check] {
      if (!desk_run) return Outcome{false, "desk pipeline failed: " + desk_error};
      return check(*desk_run);
    };
  };
  report(7, "zero-shot alignment", with_run(zero_shot_alignment));
  report(8, "completion transfer", with_run(completion_transfer));
  report(9, "ablation directionality", with_run(ablation_direction));
  report(10, "determinism", with_run([&](const DeskRun&) {
           run_desk(run_b);
           return determinism(run_a, run_b);
         }));
  report(11, "ZS-Un data audit", with_run([&](const DeskRun& r) { return zs_un_audit(run_a, r.split); }));

  std::printf("%d/%d criteria passed (seed %llu, config hash %.12s)\n", ran - failed, ran,
              static_cast<unsigned long long>(desk.seed), config_hash(desk).c_str());
  return failed == 0 ? 0 : 1;
}
