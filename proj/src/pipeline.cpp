#include "kgadapt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "kgadapt/errors.hpp"
#include "kgadapt/textio.hpp"

namespace kgadapt {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration ------------------------------------------------------------

void PipelineConfig::validate() const {
  if (profile.empty()) throw ConfigError("config: profile must be named");
  if (out.empty()) throw ConfigError("config: output directory must be set");
  EncoderConfig e = encoder;
  e.vocab_size = std::max<std::size_t>(e.vocab_size, 1);
  e.validate();
  synthetic.validate();
  mlm.validate();
  integrate.validate();
  if (bottleneck == 0) throw ConfigError("config: adapters.bottleneck must be positive");
  if (fusion_adapters.empty()) throw ConfigError("config: adapters.fusion must list at least one adapter");
  std::set<AdapterKind> seen;
  for (auto k : fusion_adapters) {
    if (k == AdapterKind::LARGE) throw ConfigError("config: LARGE cannot take part in fusion");
    if (!seen.insert(k).second) throw ConfigError("config: adapter " + to_string(k) + " listed twice in adapters.fusion");
  }
  if (finetune.batch == 0) throw ConfigError("config: finetune.batch must be positive");
  if (finetune.warmup == 0) throw ConfigError("config: finetune.warmup must be >= 1");
  if (!(finetune.lr >= 0.0) || !(finetune.fusion_lr >= 0.0) || !(finetune.fusion_reg >= 0.0))
    throw ConfigError("config: finetune rates must be non-negative");
  if (!(finetune.tau > 0.0)) throw ConfigError("config: finetune.tau must be positive");
  if (eval_k == 0) throw ConfigError("config: eval.k must be positive");
}

PipelineConfig profile_config(const std::string& profile) {
  PipelineConfig c;
  c.profile = profile;
  c.mlm.batch = 256;
  c.mlm.steps = 500;
  c.mlm.lr = 3e-3;
  c.mlm.warmup = 50;
  c.integrate.batch = 256;
  c.integrate.steps = 300;
  c.integrate.lr = 1e-2;
  c.integrate.warmup = 30;
  c.integrate.tau = 0.1;
  c.integrate.code_switch = 0.5;
  if (profile == "desk") {
    c.out = "runs/desk";
    return c;
  }
  if (profile == "paper") {
    // Published values where they exist; the encoder and MLM stage stay desk-sized.
    c.out = "runs/paper";
    c.integrate.batch = 128;
    c.integrate.lr = 1e-4;
    c.integrate.warmup = 10000;
    c.integrate_epochs = 10;
    c.finetune.batch = 8;
    c.finetune.lr = 1e-8;
    c.finetune.fusion_lr = 0.0;
    c.finetune.fusion_reg = 0.01;
    c.finetune.completion = {10, 10};
    c.finetune.alignment = {1, 1};
    return c;
  }
  throw ConfigError("unknown profile '" + profile + "' (expected desk|paper)");
}

json config_to_json(const PipelineConfig& c) {
  json synthetic = synthetic_config_json(c.synthetic);
  synthetic.erase("seed");
  json fusion = json::array();
  for (auto k : c.fusion_adapters) fusion.push_back(to_string(k));
  auto epochs = [](const TaskEpochs& e) { return json{{"fusion_epochs", e.fusion_epochs}, {"full_epochs", e.full_epochs}}; };
  return {
      {"profile", c.profile},
      {"seed", c.seed},
      {"out", c.out.string()},
      {"data_dir", c.data_dir.string()},
      {"synthetic", synthetic},
      {"encoder",
       {{"layers", c.encoder.layers},
        {"dim", c.encoder.dim},
        {"heads", c.encoder.heads},
        {"ffn_dim", c.encoder.ffn_dim},
        {"max_len", c.encoder.max_len}}},
      {"adapters", {{"bottleneck", c.bottleneck}, {"fusion", fusion}}},
      {"mlm",
       {{"batch", c.mlm.batch},
        {"steps", c.mlm.steps},
        {"lr", c.mlm.lr},
        {"warmup", c.mlm.warmup},
        {"mask_rate", c.mlm.mask_rate}}},
      {"integrate",
       {{"batch", c.integrate.batch},
        {"steps", c.integrate.steps},
        {"epochs", c.integrate_epochs},
        {"lr", c.integrate.lr},
        {"warmup", c.integrate.warmup},
        {"tau", c.integrate.tau},
        {"code_switch", c.integrate.code_switch}}},
      {"finetune",
       {{"batch", c.finetune.batch},
        {"lr", c.finetune.lr},
        {"warmup", c.finetune.warmup},
        {"tau", c.finetune.tau},
        {"fusion_lr", c.finetune.fusion_lr},
        {"fusion_reg", c.finetune.fusion_reg},
        {"completion", epochs(c.finetune.completion)},
        {"alignment", epochs(c.finetune.alignment)}}},
      {"eval", {{"k", c.eval_k}}},
  };
}

namespace {

void check_known_keys(const json& given, const json& reference, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (value.is_object()) check_known_keys(value, reference.at(key), path);
  }
}

PipelineConfig parse_full(const json& j) {
  PipelineConfig c;
  c.profile = j.at("profile").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out = j.at("out").get<std::string>();
  c.data_dir = j.at("data_dir").get<std::string>();
  json synthetic = j.at("synthetic");
  synthetic["seed"] = c.seed;
  c.synthetic = synthetic_config_from_json(synthetic);
  const auto& e = j.at("encoder");
  c.encoder.layers = e.at("layers");
  c.encoder.dim = e.at("dim");
  c.encoder.heads = e.at("heads");
  c.encoder.ffn_dim = e.at("ffn_dim");
  c.encoder.max_len = e.at("max_len");
  c.bottleneck = j.at("adapters").at("bottleneck");
  c.fusion_adapters.clear();
  for (const auto& k : j.at("adapters").at("fusion")) c.fusion_adapters.push_back(parse_adapter_kind(k.get<std::string>()));
  const auto& m = j.at("mlm");
  c.mlm.batch = m.at("batch");
  c.mlm.steps = m.at("steps");
  c.mlm.lr = m.at("lr");
  c.mlm.warmup = m.at("warmup");
  c.mlm.mask_rate = m.at("mask_rate");
  const auto& a = j.at("integrate");
  c.integrate.batch = a.at("batch");
  c.integrate.steps = a.at("steps");
  c.integrate_epochs = a.at("epochs");
  c.integrate.lr = a.at("lr");
  c.integrate.warmup = a.at("warmup");
  c.integrate.tau = a.at("tau");
  c.integrate.code_switch = a.at("code_switch");
  const auto& f = j.at("finetune");
  c.finetune.batch = f.at("batch");
  c.finetune.lr = f.at("lr");
  c.finetune.warmup = f.at("warmup");
  c.finetune.tau = f.at("tau");
  c.finetune.fusion_lr = f.at("fusion_lr");
  c.finetune.fusion_reg = f.at("fusion_reg");
  for (auto [name, target] : {std::pair{"completion", &c.finetune.completion}, {"alignment", &c.finetune.alignment}}) {
    target->fusion_epochs = f.at(name).at("fusion_epochs");
    target->full_epochs = f.at(name).at("full_epochs");
  }
  c.eval_k = j.at("eval").at("k");
  return c;
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  try {
    const std::string profile = j.value("profile", std::string("desk"));
    json doc = config_to_json(profile_config(profile));
    check_known_keys(j, doc, "");
    doc.merge_patch(j);
    PipelineConfig c = parse_full(doc);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("config: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("config: '" + key + "' is a section, not a value");
  json value = json::parse(text, nullptr, false);
  *node = value.is_discarded() ? json(text) : value;
}

std::string config_hash(const PipelineConfig& config) {
  json doc = config_to_json(config);
  doc.erase("out");
  return sha256_hex(doc.dump());
}

// ---- reports ------------------------------------------------------------------------

ReportFormat parse_report_format(const std::string& text) {
  if (text == "tsv") return ReportFormat::Tsv;
  if (text == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + text + "' (expected tsv|json)");
}

json report_to_json(const MetricReport& r) {
  json langs = json::array();
  for (const auto& m : r.languages)
    langs.push_back({{"lang", m.lang},
                     {"category", to_string(m.category)},
                     {"n", m.n},
                     {"hit1", m.hit1},
                     {"hitk", m.hitk},
                     {"mrr", m.mrr}});
  json cats = json::object();
  for (const auto& [name, m] : r.categories)
    cats[name] = {{"languages", m.languages}, {"hit1", m.hit1}, {"hitk", m.hitk}, {"mrr", m.mrr}};
  return {{"task", to_string(r.task)}, {"variant", r.variant}, {"k", r.k},
          {"languages", langs},       {"categories", cats},    {"meta", r.meta}};
}

MetricReport report_from_json(const json& j) {
  try {
    MetricReport r;
    r.task = parse_task(j.at("task").get<std::string>());
    r.variant = j.at("variant").get<std::string>();
    r.k = j.at("k");
    for (const auto& m : j.at("languages"))
      r.languages.push_back({m.at("lang").get<std::string>(), parse_category(m.at("category").get<std::string>()),
                             m.at("n").get<std::size_t>(), m.at("hit1").get<double>(), m.at("hitk").get<double>(),
                             m.at("mrr").get<double>()});
    for (const auto& [name, m] : j.at("categories").items())
      r.categories[name] = {m.at("languages").get<std::size_t>(), m.at("hit1").get<double>(),
                            m.at("hitk").get<double>(), m.at("mrr").get<double>()};
    r.meta = j.at("meta");
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

std::string format_percent(double fraction) {
  std::string s = fmt::format("{:.1f}", 100.0 * fraction);
  if (s == "-0.0") s = "0.0";
  return s;
}

std::string reports_tsv(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ConfigError("report: nothing to emit");
  const std::size_t k = reports.front().k;
  std::string out = fmt::format("task\tvariant\tscope\tname\tcategory\tn\thit1\thit{}\tmrr\n", k);
  auto row = [&](const MetricReport& r, std::string_view scope, const std::string& name, const std::string& cat,
                 std::size_t n, double h1, double hk, double mrr) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", to_string(r.task), r.variant, scope, name, cat, n,
                       format_percent(h1), format_percent(hk), format_percent(mrr));
  };
  for (const auto& r : reports) {
    if (r.k != k) throw ConfigError("report: reports with different k cannot share a table");
    for (const auto& m : r.languages) row(r, "lang", m.lang, to_string(m.category), m.n, m.hit1, m.hitk, m.mrr);
    for (auto c : {Category::Sup, Category::ZsIn, Category::ZsUn}) {
      auto it = r.categories.find(to_string(c));
      if (it == r.categories.end()) continue;
      const auto& m = it->second;
      row(r, "category", fmt::format("{} ({})", it->first, m.languages), it->first, m.languages, m.hit1, m.hitk, m.mrr);
    }
    const auto all = r.overall();
    row(r, "overall", fmt::format("ALL ({})", all.languages), "-", all.languages, all.hit1, all.hitk, all.mrr);
  }
  return out;
}

void emit_report(const std::vector<MetricReport>& reports, ReportFormat format, const fs::path& path) {
  if (reports.empty()) throw ConfigError("report: nothing to emit");
  if (format == ReportFormat::Tsv) {
    write_file(path, reports_tsv(reports));
    return;
  }
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  write_file(path, arr.dump(2) + "\n");
}

std::vector<MetricReport> load_reports(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<MetricReport> out;
  if (j.is_object()) {
    out.push_back(report_from_json(j));
    return out;
  }
  for (const auto& r : j) out.push_back(report_from_json(r));
  return out;
}

// ---- run log ----------------------------------------------------------------------

RunLog::RunLog(const fs::path& path) : path_(path) {}

void RunLog::record(const std::string& stage, std::uint64_t step, const std::string& metric, double value) {
  auto [it, fresh] = last_step_.emplace(stage, step);
  if (!fresh) {
    if (step < it->second)
      throw ContractViolation(fmt::format("run log: step {} after {} in stage {}", step, it->second, stage));
    it->second = step;
  }
  const bool header = !fs::exists(path_);
  if (!path_.parent_path().empty()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ConfigError("cannot append to " + path_.string());
  if (header) out << "timestamp,stage,step,metric,value\n";
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  out << fmt::format("{:%Y-%m-%dT%H:%M:%SZ},{},{},{},{:.9g}\n", now, stage, step, metric, value);
}

void RunLog::record_curve(const std::string& stage, const LossCurve& curve) {
  for (const auto& p : curve.points) record(stage, p.step, "loss", p.loss);
}

// ---- audits -------------------------------------------------------------------------

void add_pairs(StageAudit& audit, const std::vector<TrainPair>& pairs) {
  for (const auto& p : pairs) {
    audit.languages.insert(p.anchor.langs.begin(), p.anchor.langs.end());
    audit.languages.insert(p.positive.langs.begin(), p.positive.langs.end());
    ++audit.records;
  }
}

std::vector<StageAudit> load_audits(const fs::path& out) {
  std::vector<StageAudit> audits;
  const fs::path dir = out / "audit";
  if (!fs::exists(dir)) return audits;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const json j = json::parse(read_file(f));
    StageAudit a;
    a.stage = j.at("stage");
    a.records = j.at("records");
    for (const auto& l : j.at("languages")) a.languages.insert(l.get<std::string>());
    audits.push_back(std::move(a));
  }
  return audits;
}

// ---- variants -----------------------------------------------------------------------

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"base", "EP", "TP", "ES", "TS", "LARGE", "FUSION"};
  return v;
}

namespace {

std::string join_kinds(const std::vector<AdapterKind>& kinds, std::string_view sep) {
  std::string s;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (i) s += sep;
    s += to_string(kinds[i]);
  }
  return s;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

bool is_fusion(const std::string& variant) { return variant.rfind("FUSION", 0) == 0; }

std::string fusion_name(Task task, const std::vector<AdapterKind>& kinds) {
  return "fusion-" + to_string(task) + "-" + lower(join_kinds(kinds, "-"));
}

std::string finetune_name(Task task, const std::string& variant, const PipelineConfig& config) {
  if (!is_fusion(variant)) return "finetune-" + to_string(task) + "-" + lower(variant);
  return "finetune-" + to_string(task) + "-fusion-" + lower(join_kinds(variant_adapters(variant, config), "-"));
}

}  // namespace

std::string fusion_variant(const std::vector<AdapterKind>& kinds, const PipelineConfig& config) {
  if (kinds == config.fusion_adapters) return "FUSION";
  return "FUSION(" + join_kinds(kinds, "+") + ")";
}

std::vector<AdapterKind> variant_adapters(const std::string& variant, const PipelineConfig& config) {
  if (variant == "base") return {};
  if (variant == "FUSION") return config.fusion_adapters;
  if (is_fusion(variant)) {
    if (variant.size() < 9 || variant[6] != '(' || variant.back() != ')')
      throw ConfigError("unknown variant '" + variant + "' (expected FUSION or FUSION(EP+ES))");
    std::vector<AdapterKind> kinds;
    const std::string inner = variant.substr(7, variant.size() - 8);
    std::size_t start = 0;
    while (start <= inner.size()) {
      const auto plus = inner.find('+', start);
      const auto kind = parse_adapter_kind(inner.substr(start, plus == std::string::npos ? plus : plus - start));
      if (kind == AdapterKind::LARGE) throw ConfigError("LARGE cannot take part in fusion");
      if (std::find(kinds.begin(), kinds.end(), kind) != kinds.end())
        throw ConfigError("variant '" + variant + "' lists an adapter twice");
      kinds.push_back(kind);
      if (plus == std::string::npos) break;
      start = plus + 1;
    }
    return kinds;
  }
  try {
    return {parse_adapter_kind(variant)};
  } catch (const ConfigError&) {
    throw ConfigError("unknown variant '" + variant + "' (expected base|EP|TP|ES|TS|LARGE|FUSION)");
  }
}

// ---- pipeline -----------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config)
    : config_(std::move(config)), hash_(config_hash(config_)), log_(config_.out / "runlog.csv") {
  config_.validate();
  config_.synthetic.seed = config_.seed;
}

fs::path Pipeline::data_dir() const { return config_.data_dir.empty() ? config_.out / "data" : config_.data_dir; }
fs::path Pipeline::checkpoint_stem(const std::string& name) const { return config_.out / "checkpoints" / name; }
fs::path Pipeline::vocab_path() const { return config_.out / "checkpoints" / "vocab.txt"; }
fs::path Pipeline::report_path(const std::string& name) const { return config_.out / "reports" / name; }
fs::path Pipeline::audit_path() const { return config_.out / "audit"; }

void Pipeline::generate() {
  if (config_.data_dir.empty()) {
    spdlog::info("generating the synthetic benchmark (seed {})", config_.synthetic.seed);
    data_ = gen_synthetic(config_.synthetic);
    save_synthetic(*data_, data_dir());
  } else {
    data_ = load_synthetic(config_.data_dir);
  }
  vocab_ = build_vocab(vocabulary_corpus(*data_));
  fs::create_directories(vocab_path().parent_path());
  vocab_->save(vocab_path());
  spdlog::info("dataset in {}: {} entities, {} triples, vocabulary {}", data_dir().string(),
               data_->kg.entities.size(), data_->kg.triples.size(), vocab_->size());
}

const SyntheticData& Pipeline::data() {
  if (data_) return *data_;
  if (!fs::exists(data_dir() / "dataset.json"))
    throw PrerequisiteError("no dataset in " + data_dir().string() + "; run gen-synthetic first");
  data_ = load_synthetic(data_dir());
  if (config_.data_dir.empty() && !(data_->config == config_.synthetic))
    throw ConfigError("the dataset in " + data_dir().string() +
                      " was generated with different settings; rerun gen-synthetic");
  return *data_;
}

const Vocab& Pipeline::vocab() {
  if (vocab_) return *vocab_;
  if (!fs::exists(vocab_path()))
    throw PrerequisiteError("no vocabulary at " + vocab_path().string() + "; run gen-synthetic first");
  vocab_ = Vocab::load(vocab_path());
  return *vocab_;
}

bool Pipeline::has_checkpoint(const std::string& name) const {
  return fs::exists(manifest_path(checkpoint_stem(name)));
}

Checkpoint Pipeline::require(const std::string& name, const std::string& stage_hint) const {
  if (!has_checkpoint(name))
    throw PrerequisiteError("missing checkpoint '" + name + "'; run `" + stage_hint + "` first");
  Checkpoint ck = load_checkpoint(checkpoint_stem(name));
  if (ck.provenance.value("config_hash", std::string()) != hash_)
    throw PrerequisiteError("checkpoint '" + name + "' was produced with a different configuration; rerun `" +
                      stage_hint + "`");
  return ck;
}

Checkpoint Pipeline::save(const std::string& name, AdaptedEncoder model, json provenance) {
  provenance["config_hash"] = hash_;
  provenance["profile"] = config_.profile;
  provenance["seed"] = config_.seed;
  Checkpoint ck{std::move(model), std::move(provenance), {}};
  ck.content_hash = save_checkpoint(ck, checkpoint_stem(name));
  spdlog::info("saved checkpoint {} ({})", name, ck.content_hash.substr(0, 12));
  return ck;
}

void Pipeline::write_audit(const StageAudit& audit) const {
  json langs(audit.languages);
  write_file(audit_path() / (audit.stage + ".json"),
             json{{"stage", audit.stage}, {"records", audit.records}, {"languages", langs}}.dump(2) + "\n");
}

Checkpoint Pipeline::pretrain() {
  const auto& d = data();
  const auto& v = vocab();
  EncoderConfig ec = config_.encoder;
  ec.vocab_size = v.size();
  std::vector<TokenSeq> corpus;
  corpus.reserve(d.pretrain_corpus.size());
  for (const auto& line : d.pretrain_corpus) corpus.push_back(tokenize(line.tokens, line.lang, v, ec.max_len));
  MlmHyper h = config_.mlm;
  h.seed = Rng::mix(config_.seed, "mlm");
  spdlog::info("pretrain: {} sequences, {} steps", corpus.size(), h.steps);
  MlmResult r = mlm_pretrain(corpus, ec, h);
  log_.record_curve("pretrain", r.curve);
  write_file(config_.out / "logs" / "pretrain.csv", r.curve.csv());
  AdaptedEncoder model;
  model.spec.encoder = ec;
  model.params = std::move(r.params);
  return save("pretrain", std::move(model),
              {{"stage", "pretrain"}, {"final_loss", r.curve.points.empty() ? 0.0 : r.curve.points.back().loss}});
}

AdapterData Pipeline::adapter_data() {
  const auto& d = data();
  const auto langs = d.split.adapter_languages();
  AdapterData a{restrict_languages(d.kg, langs), {}, {}};
  for (const auto& s : d.c1)
    if (langs.count(s.lang)) a.c1.push_back(s);
  for (const auto& s : d.c2)
    if (langs.count(s.lang)) a.c2.push_back(s);
  return a;
}

std::size_t Pipeline::adapter_records(AdapterKind kind) {
  const auto& d = data();
  switch (kind) {
    case AdapterKind::EP: return d.kg.entities.size();
    case AdapterKind::TP: return d.kg.triples.size();
    case AdapterKind::ES: return d.c1.size();
    case AdapterKind::TS: return d.c2.size();
    case AdapterKind::LARGE: break;
  }
  std::size_t total = 0;
  for (auto k : knowledge_adapter_kinds()) total += adapter_records(k);
  return total;
}

Checkpoint Pipeline::integrate(AdapterKind kind) {
  Checkpoint base = require("pretrain", "pretrain");
  const auto& v = vocab();
  const AdapterData ad = adapter_data();
  AdaptedEncoder model = std::move(base.model);
  const auto& ec = model.spec.encoder;
  std::size_t bottleneck = config_.bottleneck;
  TrainHyper h = config_.integrate;
  if (config_.integrate_epochs > 0)
    h.steps = config_.integrate_epochs * ((adapter_records(kind) + h.batch - 1) / h.batch);
  if (kind == AdapterKind::LARGE) {
    const std::size_t reference = knowledge_adapter_kinds().size() * adapter_param_count(ec.layers, ec.dim, bottleneck) +
                                  fusion_param_count(ec.layers, ec.dim);
    bottleneck = large_adapter_bottleneck(reference, ec.dim, ec.layers);
    if (config_.integrate_epochs == 0) h.steps *= knowledge_adapter_kinds().size();
  }
  Rng init(Rng::mix(config_.seed, "init." + to_string(kind)));
  add_adapter(model, kind, bottleneck, init);
  h.seed = Rng::mix(config_.seed, "integrate." + to_string(kind));
  spdlog::info("integrate {}: bottleneck {}, {} steps", to_string(kind), bottleneck, h.steps);

  StageAudit audit{"integrate-" + lower(to_string(kind)), {}, 0};
  const LossCurve curve =
      train_adapter(model, kind, v, ad, h, [&](std::size_t, const std::vector<TrainPair>& pairs) { add_pairs(audit, pairs); });
  write_audit(audit);
  const std::string stage = "integrate-" + lower(to_string(kind));
  log_.record_curve(stage, curve);
  write_file(config_.out / "logs" / (stage + ".csv"), curve.csv());
  model.use_single(kind);
  return save("adapter-" + lower(to_string(kind)), std::move(model),
              {{"stage", "integrate"},
               {"adapter", to_string(kind)},
               {"bottleneck", bottleneck},
               {"parent", base.content_hash},
               {"final_loss", curve.points.empty() ? 0.0 : curve.points.back().loss}});
}

std::vector<TrainPair> Pipeline::task_pairs(Task task) {
  const auto& d = data();
  auto pairs = task == Task::Completion ? completion_pairs(d.kg, d.completion_train, d.split.sup)
                                        : alignment_pairs(d.kg, d.alignment_train);
  if (pairs.empty()) throw DataError("no " + to_string(task) + " training pairs");
  return pairs;
}

TrainHyper Pipeline::finetune_hyper(Task task) const {
  TrainHyper h;
  h.batch = config_.finetune.batch;
  h.lr = config_.finetune.lr;
  h.warmup = config_.finetune.warmup;
  h.tau = config_.finetune.tau;
  h.fusion_reg = config_.finetune.fusion_reg;
  h.seed = Rng::mix(config_.seed, "finetune." + to_string(task));
  return h;
}

FinetunePlan Pipeline::finetune_plan(Task task, bool fusion_stage) const {
  const TaskEpochs& e = task == Task::Completion ? config_.finetune.completion : config_.finetune.alignment;
  FinetunePlan plan;
  plan.hyper = finetune_hyper(task);
  plan.fusion_lr = config_.finetune.fusion_lr;
  plan.fusion_epochs = fusion_stage ? e.fusion_epochs : 0;
  plan.full_epochs = fusion_stage ? 0 : e.full_epochs;
  return plan;
}

Checkpoint Pipeline::fuse(Task task, const std::vector<AdapterKind>& kinds) {
  if (kinds.empty()) throw ConfigError("fusion needs at least one adapter");
  Checkpoint base = require("pretrain", "pretrain");
  const auto& v = vocab();
  AdaptedEncoder model = std::move(base.model);
  const auto backbone_sum = params_checksum(model.params, [](const std::string& n) { return n.rfind("backbone.", 0) == 0; });
  json parents = json::array({base.content_hash});
  for (auto kind : kinds) {
    if (kind == AdapterKind::LARGE) throw ConfigError("LARGE cannot take part in fusion");
    const std::string name = "adapter-" + lower(to_string(kind));
    Checkpoint ck = require(name, "train-adapter --kind " + lower(to_string(kind)));
    if (params_checksum(ck.model.params, [](const std::string& n) { return n.rfind("backbone.", 0) == 0; }) != backbone_sum)
      throw ContractViolation("adapter " + to_string(kind) + " was trained on a different backbone");
    const std::string prefix = adapter_names::prefix(kind);
    for (const auto& [n, e] : ck.model.params)
      if (n.rfind(prefix, 0) == 0) model.params.add(n, e.value);
    const auto slot = ck.model.spec.index_of(kind);
    model.spec.adapters.push_back(ck.model.spec.adapters.at(*slot));
    parents.push_back(ck.content_hash);
  }
  Rng init(Rng::mix(config_.seed, "init.fusion"));
  add_fusion(model, init);
  model.use_fusion();

  const auto pairs = task_pairs(task);
  const std::string stage = "fuse-" + to_string(task) + "-" + lower(join_kinds(kinds, "-"));
  StageAudit audit{stage, {}, 0};
  add_pairs(audit, pairs);
  write_audit(audit);
  spdlog::info("fuse {} over {} for {}", join_kinds(kinds, "+"), pairs.size(), to_string(task));
  const FinetuneResult r = finetune_pairs(model, v, pairs, finetune_plan(task, true));
  log_.record_curve(stage, r.fusion_curve);
  write_file(config_.out / "logs" / (stage + ".csv"), r.fusion_curve.csv());
  return save(fusion_name(task, kinds), std::move(model),
              {{"stage", "fuse"}, {"task", to_string(task)}, {"adapters", join_kinds(kinds, "+")}, {"parents", parents}});
}

Checkpoint Pipeline::finetune(Task task, const std::string& variant) {
  const auto kinds = variant_adapters(variant, config_);
  Checkpoint start;
  if (variant == "base") {
    start = require("pretrain", "pretrain");
  } else if (is_fusion(variant)) {
    start = require(fusion_name(task, kinds), "train-fusion --task " + to_string(task));
  } else {
    start = require("adapter-" + lower(variant), "train-adapter --kind " + lower(variant));
    start.model.use_single(kinds.front());
  }
  const auto& v = vocab();
  const auto pairs = task_pairs(task);
  const std::string name = finetune_name(task, variant, config_);
  StageAudit audit{name, {}, 0};
  add_pairs(audit, pairs);
  write_audit(audit);
  spdlog::info("finetune {} on {} ({} pairs)", variant, to_string(task), pairs.size());
  AdaptedEncoder model = std::move(start.model);
  const FinetuneResult r = finetune_pairs(model, v, pairs, finetune_plan(task, false));
  log_.record_curve(name, r.full_curve);
  write_file(config_.out / "logs" / (name + ".csv"), r.full_curve.csv());
  return save(name, std::move(model),
              {{"stage", "finetune"}, {"task", to_string(task)}, {"variant", variant}, {"parent", start.content_hash}});
}

MetricReport Pipeline::run_eval(Task task, const AdaptedEncoder& model) {
  const auto& d = data();
  const auto& v = vocab();
  if (task == Task::Completion)
    return eval_completion(model, v, d.kg, d.completion_test, d.split, d.all_languages(), config_.eval_k);
  return eval_alignment(model, v, d.kg, d.alignment_test, d.split, config_.eval_k);
}

MetricReport Pipeline::evaluate(Task task, const std::string& variant) {
  const std::string name = finetune_name(task, variant, config_);
  Checkpoint ck = require(name, "finetune --task " + to_string(task) + " --variant " + variant);
  MetricReport r = run_eval(task, ck.model);
  r.variant = variant;
  r.meta = {{"profile", config_.profile},
            {"seed", config_.seed},
            {"config_hash", hash_},
            {"checkpoint_hash", ck.content_hash}};
  const std::string stem = "eval-" + name.substr(std::string("finetune-").size());
  emit_report({r}, ReportFormat::Json, report_path(stem + ".json"));
  emit_report({r}, ReportFormat::Tsv, report_path(stem + ".tsv"));
  const auto all = r.overall();
  spdlog::info("{} {}: Hit@1 {} MRR {}", to_string(task), variant, format_percent(all.hit1), format_percent(all.mrr));
  return r;
}

std::vector<MetricReport> Pipeline::ablate(Task task) {
  if (!fs::exists(data_dir() / "dataset.json") || !fs::exists(vocab_path())) generate();
  if (!has_checkpoint("pretrain")) pretrain();
  for (const auto& variant : ablation_variants()) {
    for (auto kind : variant_adapters(variant, config_))
      if (!has_checkpoint("adapter-" + lower(to_string(kind)))) integrate(kind);
  }
  std::vector<MetricReport> reports;
  for (const auto& variant : ablation_variants()) {
    const auto kinds = variant_adapters(variant, config_);
    if (is_fusion(variant) && !has_checkpoint(fusion_name(task, kinds))) fuse(task, kinds);
    if (!has_checkpoint(finetune_name(task, variant, config_))) finetune(task, variant);
    reports.push_back(evaluate(task, variant));
  }
  emit_report(reports, ReportFormat::Tsv, report_path("ablation-" + to_string(task) + ".tsv"));
  emit_report(reports, ReportFormat::Json, report_path("ablation-" + to_string(task) + ".json"));
  return reports;
}

}  // namespace kgadapt
