#pragma once

/**
 * Experiment orchestration: pretrain -> diagnose -> (optional SFT) -> RLVR ->
 * evaluate -> report, over the synthetic task suite.
 *
 * Every phase reads its inputs from and writes its outputs to the run's
 * output directory:
 *
 *   <out>/suite/        tasks.jsonl, corpus.txt, sft.jsonl, manifest.json, ehr.jsonl
 *   <out>/checkpoints/  base.ckpt, sft.ckpt, rlvr_<src>.ckpt, *_best.ckpt, ...
 *   <out>/logs/         pretrain.jsonl, sft.jsonl, rlvr_<src>.jsonl, generations
 *   <out>/reports/      diagnose_*.json, eval_*.json, report.json, *.csv
 *   <out>/run.json      phase timings, config hash, checkpoint index
 *
 * Phases are isolated: deleting downstream artifacts and re-running only the
 * downstream phases reproduces them from the upstream checkpoints. A lockfile
 * serializes writers on one output directory.
 */

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <unistd.h>

#include "rlvr/common.hpp"
#include "rlvr/diagnostics.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/metrics.hpp"
#include "rlvr/mle.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/taskgen.hpp"
#include "rlvr/verify.hpp"
#include "rlvr/vocab.hpp"

namespace rlvr::harness {

using nlohmann::json;

enum class PipelineMode { rlvr_only, sft_rlvr, sft_only };

inline const char* mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::rlvr_only: return "rlvr-only";
    case PipelineMode::sft_rlvr: return "sft-rlvr";
    case PipelineMode::sft_only: return "sft-only";
  }
  return "?";
}

inline PipelineMode mode_from_name(std::string_view name) {
  if (name == "rlvr-only") return PipelineMode::rlvr_only;
  if (name == "sft-rlvr") return PipelineMode::sft_rlvr;
  if (name == "sft-only") return PipelineMode::sft_only;
  throw ConfigError("unknown pipeline mode: " + std::string(name));
}

struct DiagnosticsOptions {
  int k = 12;
  int per_category_examples = 40;
  double sft_threshold = 0.10;  // recommend SFT when any cell's reliable pass@k dips below
};

struct EvalOptions {
  int checkpoint_every = 200;
  int eval_every = 100;
};

struct ExperimentConfig {
  std::string out_dir = "runs/exp";
  std::uint64_t master_seed = 7;
  PipelineMode mode = PipelineMode::sft_rlvr;
  policy::ArchDescriptor arch{16, 32, 64, 0};  // vocab size filled from the suite vocabulary
  double init_scale = 0.3;
  policy::DecodingConfig decoding;  // T=0.6, top_p=0.95 defaults
  grpo::GrpoConfig grpo;
  mle::MleSchedule pretrain{0.05, 6000, 16};
  mle::MleSchedule sft{0.05, 1500, 8};
  DiagnosticsOptions diag;
  EvalOptions eval;
  taskgen::SuiteSpec suite;
  std::string transfer_family = taskgen::kFamilyEvent;
};

inline ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.suite = taskgen::default_suite_spec();
  cfg.decoding.max_response_len = 32;
  cfg.grpo.minibatch_queries = 8;
  cfg.grpo.epochs = 200;
  cfg.grpo.max_steps = 600;
  cfg.grpo.learning_rate = 0.05;
  return cfg;
}

// --------------------------------------------------------------------------
// Config (de)serialization
// --------------------------------------------------------------------------

inline json config_to_json(const ExperimentConfig& cfg) {
  json families = json::object();
  for (const auto& [name, counts] : cfg.suite.families) {
    families[name] = {{"train_rlvr", counts.train_rlvr},
                      {"train_sft", counts.train_sft},
                      {"validation", counts.validation},
                      {"test", counts.test}};
  }
  json coverage = json::object();
  for (const auto& [id, tag] : cfg.suite.coverage) {
    coverage[id] = taskgen::coverage_name(tag);
  }
  return json{
      {"out_dir", cfg.out_dir},
      {"master_seed", cfg.master_seed},
      {"mode", mode_name(cfg.mode)},
      {"policy",
       {{"context_window", cfg.arch.context_window},
        {"embed_dim", cfg.arch.embed_dim},
        {"hidden_dim", cfg.arch.hidden_dim}}},
      {"init_scale", cfg.init_scale},
      {"decoding",
       {{"temperature", cfg.decoding.temperature},
        {"top_p", cfg.decoding.top_p},
        {"max_response_len", cfg.decoding.max_response_len}}},
      {"grpo",
       {{"group_size", cfg.grpo.group_size},
        {"clip", cfg.grpo.clip},
        {"kl_coef", cfg.grpo.kl_coef},
        {"learning_rate", cfg.grpo.learning_rate},
        {"minibatch_queries", cfg.grpo.minibatch_queries},
        {"epochs", cfg.grpo.epochs},
        {"max_steps", cfg.grpo.max_steps},
        {"ratio_level", cfg.grpo.ratio_level == grpo::RatioLevel::token ? "token" : "sequence"}}},
      {"pretrain",
       {{"learning_rate", cfg.pretrain.learning_rate},
        {"steps", cfg.pretrain.steps},
        {"batch_size", cfg.pretrain.batch_size}}},
      {"sft",
       {{"learning_rate", cfg.sft.learning_rate},
        {"steps", cfg.sft.steps},
        {"batch_size", cfg.sft.batch_size}}},
      {"diagnostics",
       {{"k", cfg.diag.k},
        {"per_category_examples", cfg.diag.per_category_examples},
        {"sft_threshold", cfg.diag.sft_threshold}}},
      {"eval",
       {{"checkpoint_every", cfg.eval.checkpoint_every}, {"eval_every", cfg.eval.eval_every}}},
      {"suite",
       {{"families", families},
        {"coverage", coverage},
        {"pretrain_docs_per_knowledge", cfg.suite.pretrain_docs_per_knowledge},
        {"pretrain_atom_docs", cfg.suite.pretrain_atom_docs},
        {"pretrain_filler_docs", cfg.suite.pretrain_filler_docs},
        {"event_short_trace_fraction", cfg.suite.event_short_trace_fraction}}},
      {"transfer_family", cfg.transfer_family}};
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  cfg.out_dir = j.at("out_dir").get<std::string>();
  cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
  cfg.mode = mode_from_name(j.at("mode").get<std::string>());
  const auto& pol = j.at("policy");
  cfg.arch.context_window = pol.at("context_window").get<int>();
  cfg.arch.embed_dim = pol.at("embed_dim").get<int>();
  cfg.arch.hidden_dim = pol.at("hidden_dim").get<int>();
  cfg.init_scale = j.at("init_scale").get<double>();
  const auto& dec = j.at("decoding");
  cfg.decoding.temperature = dec.at("temperature").get<double>();
  cfg.decoding.top_p = dec.at("top_p").get<double>();
  cfg.decoding.max_response_len = dec.at("max_response_len").get<int>();
  const auto& g = j.at("grpo");
  cfg.grpo.group_size = g.at("group_size").get<int>();
  cfg.grpo.clip = g.at("clip").get<double>();
  cfg.grpo.kl_coef = g.at("kl_coef").get<double>();
  cfg.grpo.learning_rate = g.at("learning_rate").get<double>();
  cfg.grpo.minibatch_queries = g.at("minibatch_queries").get<int>();
  cfg.grpo.epochs = g.at("epochs").get<int>();
  cfg.grpo.max_steps = g.at("max_steps").get<int>();
  cfg.grpo.ratio_level = g.at("ratio_level").get<std::string>() == "sequence"
                             ? grpo::RatioLevel::sequence
                             : grpo::RatioLevel::token;
  auto sched = [](const json& s) {
    return mle::MleSchedule{s.at("learning_rate").get<double>(), s.at("steps").get<int>(),
                            s.at("batch_size").get<int>()};
  };
  cfg.pretrain = sched(j.at("pretrain"));
  cfg.sft = sched(j.at("sft"));
  const auto& d = j.at("diagnostics");
  cfg.diag.k = d.at("k").get<int>();
  cfg.diag.per_category_examples = d.at("per_category_examples").get<int>();
  cfg.diag.sft_threshold = d.at("sft_threshold").get<double>();
  const auto& ev = j.at("eval");
  cfg.eval.checkpoint_every = ev.at("checkpoint_every").get<int>();
  cfg.eval.eval_every = ev.at("eval_every").get<int>();
  const auto& s = j.at("suite");
  cfg.suite.families.clear();
  for (auto it = s.at("families").begin(); it != s.at("families").end(); ++it) {
    const auto& f = it.value();
    cfg.suite.families[it.key()] = {f.at("train_rlvr").get<int>(), f.at("train_sft").get<int>(),
                                    f.at("validation").get<int>(), f.at("test").get<int>()};
  }
  cfg.suite.coverage.clear();
  for (auto it = s.at("coverage").begin(); it != s.at("coverage").end(); ++it) {
    cfg.suite.coverage[it.key()] = taskgen::coverage_from_name(it.value().get<std::string>());
  }
  cfg.suite.pretrain_docs_per_knowledge = s.at("pretrain_docs_per_knowledge").get<int>();
  cfg.suite.pretrain_atom_docs = s.at("pretrain_atom_docs").get<int>();
  cfg.suite.pretrain_filler_docs = s.at("pretrain_filler_docs").get<int>();
  cfg.suite.event_short_trace_fraction = s.at("event_short_trace_fraction").get<double>();
  cfg.transfer_family = j.at("transfer_family").get<std::string>();
  return cfg;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x00000100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --------------------------------------------------------------------------
// Paths and locking
// --------------------------------------------------------------------------

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path suite() const { return root / "suite"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path checkpoint(const std::string& name) const {
    return checkpoints() / (name + ".ckpt");
  }
  std::filesystem::path run_record() const { return root / "run.json"; }
};

inline RunPaths run_paths(const ExperimentConfig& cfg) { return RunPaths{cfg.out_dir}; }

/// One experiment run owns its output directory exclusively.
class LockFile {
 public:
  explicit LockFile(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw ConfigError("output directory is locked by another run: " + path_.string() +
                        " (remove the stale .lock if no run is active)");
    }
  }
  ~LockFile() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::filesystem::remove(path_);
    }
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

// --------------------------------------------------------------------------
// Run record
// --------------------------------------------------------------------------

struct ValidationPoint {
  int step = 0;
  double metric = 0.0;
  std::string checkpoint;
};

/// Best-validation selection: argmax metric, ties broken by earliest step.
inline std::string select_best_checkpoint(std::span<const ValidationPoint> points) {
  if (points.empty()) {
    throw InputError("no validation evaluations recorded");
  }
  const ValidationPoint* best = &points[0];
  for (const auto& p : points) {
    if (p.metric > best->metric) {
      best = &p;
    }
  }
  return best->checkpoint;
}

class RunRecord {
 public:
  explicit RunRecord(const std::filesystem::path& path) : path_(path) {
    if (std::filesystem::exists(path_)) {
      data_ = json::parse(read_text_file(path_));
    } else {
      data_ = json{{"phases", json::object()}, {"checkpoints", json::object()}};
    }
  }

  void set_config_hash(const std::string& hash) { data_["config_hash"] = hash; }

  void record_phase(const std::string& name, double wall_ms) {
    data_["phases"][name] = {{"wall_ms", wall_ms}};
    save();
  }

  void record_checkpoint(const std::string& name, const std::filesystem::path& path) {
    data_["checkpoints"][name] = path.string();
    save();
  }

  void record_best(const std::string& run, const std::string& checkpoint, int step,
                   double metric) {
    data_["best_validation"][run] = {{"checkpoint", checkpoint}, {"step", step},
                                     {"metric", metric}};
    save();
  }

  const json& data() const { return data_; }

 private:
  void save() const { write_text_file(path_, data_.dump(2) + "\n"); }

  std::filesystem::path path_;
  json data_;
};

// --------------------------------------------------------------------------
// Suite loading helpers
// --------------------------------------------------------------------------

struct LoadedSuite {
  Vocabulary vocab = Vocabulary::desk_default();
  std::vector<taskgen::TaskInstance> instances;
  taskgen::KnowledgeTable table;

  std::vector<const taskgen::TaskInstance*> split(taskgen::Split s) const {
    std::vector<const taskgen::TaskInstance*> out;
    for (const auto& inst : instances) {
      if (inst.split == s) {
        out.push_back(&inst);
      }
    }
    return out;
  }
};

inline LoadedSuite load_suite(const RunPaths& paths) {
  LoadedSuite suite;
  suite.instances = taskgen::read_tasks_jsonl(paths.suite() / "tasks.jsonl");
  suite.table =
      taskgen::manifest_from_json(json::parse(read_text_file(paths.suite() / "manifest.json")));
  return suite;
}

inline std::vector<int> prompt_tokens(const Vocabulary& vocab, const taskgen::TaskInstance& inst) {
  std::vector<int> out = {kBos};
  const auto body = vocab.encode(taskgen::prompt_text(inst));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

// --------------------------------------------------------------------------
// Evaluation
// --------------------------------------------------------------------------

struct CellMetrics {
  std::string cell;
  int count = 0;
  double accuracy = 0.0;   // mean rule-based reward under greedy decoding
  double bacc = 0.0;       // classification families only
  double macro_f1 = 0.0;
  double kappa = 0.0;
  std::map<std::string, double> per_class_f1;
  double mean_think_len = 0.0;
  double median_think_len = 0.0;
  long invalid_outputs = 0;
  bool classification = false;
};

/// Greedy-decodes every instance of the given split and scores it per cell.
inline std::map<std::string, CellMetrics> evaluate_split(
    const LoadedSuite& suite, const policy::PolicyParams& params,
    const policy::DecodingConfig& decoding, taskgen::Split split) {
  struct CellScratch {
    std::vector<verify::ParsedOutput> parsed;
    std::vector<std::string> golds;
    std::vector<std::string> labels;   // categorical gold space
    verify::AnswerKind kind;
  };
  std::map<std::string, CellScratch> cells;

  policy::DecodingConfig greedy = decoding;
  greedy.greedy = true;

  for (const auto* inst : suite.split(split)) {
    const auto prompt = prompt_tokens(suite.vocab, *inst);
    const auto traj = policy::sample(params, prompt, greedy);
    const std::string text = suite.vocab.decode(traj.response);
    auto& cell = cells[taskgen::cell_key(*inst)];
    cell.kind = inst->kind;
    cell.parsed.push_back(verify::extract_answer(text));
    cell.golds.push_back(inst->gold);
  }

  std::map<std::string, CellMetrics> out;
  for (auto& [key, scratch] : cells) {
    CellMetrics m;
    m.cell = key;
    m.count = static_cast<int>(scratch.golds.size());
    m.accuracy = metrics::exact_match_accuracy(scratch.parsed, scratch.golds, scratch.kind);
    const auto stats = metrics::reasoning_length_stats(scratch.parsed);
    m.mean_think_len = stats.mean;
    m.median_think_len = stats.median;
    m.invalid_outputs = stats.invalid_count;
    m.classification = scratch.kind.tag == verify::AnswerKindTag::categorical_label;
    if (m.classification) {
      std::map<std::string, int> class_ids;
      for (const auto& g : scratch.golds) {
        class_ids.emplace(verify::normalize_text(g), static_cast<int>(class_ids.size()));
      }
      metrics::ConfusionMatrix cm(static_cast<int>(class_ids.size()));
      for (std::size_t i = 0; i < scratch.golds.size(); ++i) {
        const int gold = class_ids.at(verify::normalize_text(scratch.golds[i]));
        const auto& p = scratch.parsed[i];
        if (!p.format_valid) {
          cm.add_invalid(gold);
          continue;
        }
        const auto pred = verify::normalize_text(p.answer);
        const auto it = class_ids.find(pred);
        if (it == class_ids.end()) {
          cm.add_invalid(gold);  // out-of-vocabulary label counts as invalid
        } else {
          cm.add(gold, it->second);
        }
      }
      const auto suite_scores = metrics::classification_suite(cm);
      m.bacc = suite_scores.bacc;
      m.macro_f1 = suite_scores.macro_f1;
      m.kappa = suite_scores.kappa;
      for (const auto& [label, id] : class_ids) {
        const double f1 = suite_scores.per_class_f1[static_cast<std::size_t>(id)];
        if (f1 == f1) {  // skip excluded classes
          m.per_class_f1[label] = f1;
        }
      }
    }
    out.emplace(key, std::move(m));
  }
  return out;
}

/// Headline metric: accuracy for generation cells, BACC for classification.
inline double headline_metric(const CellMetrics& m) {
  return m.classification ? m.bacc : m.accuracy;
}

inline json cell_metrics_to_json(const std::map<std::string, CellMetrics>& cells) {
  json out = json::object();
  for (const auto& [key, m] : cells) {
    json cell{{"count", m.count},
              {"accuracy", m.accuracy},
              {"mean_think_len", m.mean_think_len},
              {"median_think_len", m.median_think_len},
              {"invalid_outputs", m.invalid_outputs}};
    if (m.classification) {
      cell["bacc"] = m.bacc;
      cell["macro_f1"] = m.macro_f1;
      cell["kappa"] = m.kappa;
      cell["per_class_f1"] = m.per_class_f1;
    }
    cell["headline"] = headline_metric(m);
    out[key] = cell;
  }
  return out;
}

// --------------------------------------------------------------------------
// Phases
// --------------------------------------------------------------------------

inline void phase_gen_suite(const ExperimentConfig& cfg) {
  const auto paths = run_paths(cfg);
  const auto suite = taskgen::generate_suite(cfg.suite, cfg.master_seed);
  const auto violations = taskgen::scan_firewall(suite.pretrain_corpus, suite.table);
  if (!violations.empty()) {
    throw ConfigError("knowledge firewall violated: " + violations.front());
  }
  std::filesystem::create_directories(paths.suite());
  taskgen::write_tasks_jsonl(suite.instances, paths.suite() / "tasks.jsonl");
  taskgen::write_sft_jsonl(suite.sft_records, paths.suite() / "sft.jsonl");
  std::string corpus;
  for (const auto& line : suite.pretrain_corpus) {
    corpus += line;
    corpus += '\n';
  }
  write_text_file(paths.suite() / "corpus.txt", corpus);
  write_text_file(paths.suite() / "manifest.json",
                  taskgen::manifest_to_json(suite.table, cfg.master_seed).dump(2) + "\n");
  // Event streams exported in the ehr-like record schema.
  std::string ehr;
  for (const auto& [id, stream] : suite.event_streams) {
    ehr += json{{"id", id},
                {"events", taskgen::serialize_ehr(stream)},
                {"prediction_timestamp", stream.prediction_timestamp},
                {"label", std::to_string(stream.label)}}
               .dump();
    ehr += '\n';
  }
  write_text_file(paths.suite() / "ehr.jsonl", ehr);
}

inline void phase_pretrain(const ExperimentConfig& cfg) {
  const auto paths = run_paths(cfg);
  const Vocabulary vocab = Vocabulary::desk_default();
  const std::string corpus = read_text_file(paths.suite() / "corpus.txt");
  std::vector<mle::SftExample> examples;
  std::size_t pos = 0;
  int doc = 0;
  while (pos < corpus.size()) {
    std::size_t eol = corpus.find('\n', pos);
    if (eol == std::string::npos) {
      eol = corpus.size();
    }
    const std::string line = corpus.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) {
      continue;
    }
    mle::SftExample ex;
    ex.id = "doc-" + std::to_string(doc++);
    ex.prompt = {kBos};
    ex.target = vocab.encode(line);
    ex.target.push_back(kEos);
    examples.push_back(std::move(ex));
  }
  policy::ArchDescriptor arch = cfg.arch;
  arch.vocab_size = vocab.size();
  rng::Stream init(rng::mix(cfg.master_seed, rng::tag::kInit));
  auto params = policy::PolicyParams::random_init(arch, cfg.init_scale, init);

  std::filesystem::create_directories(paths.logs());
  std::ofstream log(paths.logs() / "pretrain.jsonl", std::ios::trunc);
  const auto result = mle::train_mle(
      examples, std::move(params), cfg.pretrain, cfg.master_seed,
      [&](int step, double loss, const policy::PolicyParams&) {
        if (step % 100 == 0 && log.is_open()) {
          log << json{{"step", step}, {"loss", loss}}.dump() << "\n";
        }
      });
  policy::save_checkpoint(result.params, paths.checkpoint("base"));
  RunRecord record(paths.run_record());
  record.record_checkpoint("base", paths.checkpoint("base"));
}

inline void phase_sft(const ExperimentConfig& cfg) {
  const auto paths = run_paths(cfg);
  const Vocabulary vocab = Vocabulary::desk_default();
  const auto records = taskgen::read_sft_jsonl(paths.suite() / "sft.jsonl");
  if (records.empty()) {
    throw DataError("SFT split is empty; adjust suite counts");
  }
  std::vector<mle::SftExample> examples;
  for (const auto& r : records) {
    mle::SftExample ex;
    ex.id = r.id;
    ex.prompt = {kBos};
    const auto body = vocab.encode(r.instruction + r.context);
    ex.prompt.insert(ex.prompt.end(), body.begin(), body.end());
    ex.target = vocab.encode(r.target);
    ex.target.push_back(kEos);
    examples.push_back(std::move(ex));
  }
  auto base = policy::load_checkpoint(paths.checkpoint("base"));
  std::filesystem::create_directories(paths.logs());
  std::ofstream log(paths.logs() / "sft.jsonl", std::ios::trunc);
  const auto result = mle::train_mle(
      examples, std::move(base), cfg.sft, rng::mix(cfg.master_seed, 0x5F7),
      [&](int step, double loss, const policy::PolicyParams&) {
        if (step % 50 == 0 && log.is_open()) {
          log << json{{"step", step}, {"loss", loss}}.dump() << "\n";
        }
      });
  policy::save_checkpoint(result.params, paths.checkpoint("sft"));
  RunRecord record(paths.run_record());
  record.record_checkpoint("sft", paths.checkpoint("sft"));
}

// Diagnostics: sample k rollouts per training example per cell, compute
// Pass@k / Reliable Pass@k, and recommend a warm-up when any cell is weak.

struct DiagnoseResult {
  json report;
  std::map<std::string, double> pass_at_k;
  std::map<std::string, double> reliable_pass_at_k;
  std::string recommendation;
};

inline DiagnoseResult phase_diagnose(const ExperimentConfig& cfg,
                                     const std::string& checkpoint_name = "base") {
  const auto paths = run_paths(cfg);
  const auto suite = load_suite(paths);
  const auto params = policy::load_checkpoint(paths.checkpoint(checkpoint_name));

  // Cells over the RLVR training split.
  std::map<std::string, std::vector<const taskgen::TaskInstance*>> cells;
  for (const auto* inst : suite.split(taskgen::Split::train_rlvr)) {
    cells[taskgen::cell_key(*inst)].push_back(inst);
  }

  std::filesystem::create_directories(paths.logs());
  std::ofstream generations(paths.logs() / ("generations_" + checkpoint_name + ".jsonl"),
                            std::ios::trunc);

  DiagnoseResult result;
  json per_category = json::object();
  bool any_weak = false;
  for (auto& [cell, members] : cells) {
    // Deterministic subsample of the cell.
    rng::Stream s(rng::mix(cfg.master_seed, rng::tag::kDiagnose,
                           std::hash<std::string>{}(cell)));
    std::vector<const taskgen::TaskInstance*> sampled(members);
    s.shuffle(sampled);
    if (static_cast<int>(sampled.size()) > cfg.diag.per_category_examples) {
      sampled.resize(static_cast<std::size_t>(cfg.diag.per_category_examples));
    }

    // Class count: distinct golds over the whole cell's training split.
    std::set<std::string> distinct;
    for (const auto* inst : members) {
      distinct.insert(verify::normalize_text(inst->gold));
    }
    const int class_count = static_cast<int>(distinct.size());
    if (class_count < 2) {
      throw ConfigError("cell " + cell + " has a single gold value; cannot form C >= 2");
    }
    diagnostics::ReliabilityConfig rel{cfg.diag.k, class_count};

    diagnostics::SampleMatrix matrix;
    matrix.k = cfg.diag.k;
    for (std::size_t e = 0; e < sampled.size(); ++e) {
      const auto* inst = sampled[e];
      const auto prompt = prompt_tokens(suite.vocab, *inst);
      std::vector<diagnostics::Outcome> row;
      for (int attempt = 0; attempt < cfg.diag.k; ++attempt) {
        policy::DecodingConfig dec = cfg.decoding;
        dec.seed = rng::mix(cfg.master_seed, rng::tag::kDiagnose, 0xD5);
        dec.stream = rng::mix(std::hash<std::string>{}(inst->id),
                              static_cast<std::uint64_t>(attempt));
        const auto traj = policy::sample(params, prompt, dec);
        const std::string text = suite.vocab.decode(traj.response);
        if (generations.is_open()) {
          generations << json{{"example_id", inst->id},
                              {"attempt_index", attempt},
                              {"raw_text", text}}
                             .dump()
                      << "\n";
        }
        const auto parsed = verify::extract_answer(text);
        diagnostics::Outcome outcome;
        if (parsed.format_valid) {
          outcome.label = verify::canonical_label(parsed.answer, inst->kind);
        }
        outcome.correct = verify::reward(parsed, inst->gold, inst->kind) == 1.0;
        row.push_back(std::move(outcome));
      }
      matrix.rows.push_back(std::move(row));
    }

    const double pk = diagnostics::pass_at_k(matrix, cfg.diag.k);
    const double rpk = diagnostics::reliable_pass_at_k(matrix, rel);
    result.pass_at_k[cell] = pk;
    result.reliable_pass_at_k[cell] = rpk;
    any_weak = any_weak || rpk < cfg.diag.sft_threshold;
    per_category[cell] = {{"pass_at_k", pk},
                          {"reliable_pass_at_k", rpk},
                          {"tau_p", rel.tau_p()},
                          {"tau_e", rel.tau_e()},
                          {"C", class_count},
                          {"examples", static_cast<int>(sampled.size())}};
  }
  result.recommendation = any_weak ? "sft-rlvr" : "rlvr-only";
  result.report = json{{"checkpoint", checkpoint_name},
                       {"k", cfg.diag.k},
                       {"per_category", per_category},
                       {"recommendation", result.recommendation},
                       {"sft_threshold", cfg.diag.sft_threshold}};
  std::filesystem::create_directories(paths.reports());
  write_text_file(paths.reports() / ("diagnose_" + checkpoint_name + ".json"),
                  result.report.dump(2) + "\n");
  return result;
}

/// RLVR phase. `source` is the checkpoint to start from ("base" or "sft");
/// the trained checkpoint is saved as rlvr_<source> plus a best-validation
/// copy. Restricting `families` trains on a subset (transfer experiments).
inline void phase_rlvr(const ExperimentConfig& cfg, const std::string& source,
                       const std::set<std::string>& families = {},
                       const std::string& run_name_override = "") {
  const auto paths = run_paths(cfg);
  const auto suite = load_suite(paths);
  auto initial = policy::load_checkpoint(paths.checkpoint(source));
  const std::string run_name =
      run_name_override.empty() ? "rlvr_" + source : run_name_override;

  std::vector<grpo::RlvrQuery> queries;
  for (const auto* inst : suite.split(taskgen::Split::train_rlvr)) {
    if (!families.empty() && !families.count(inst->category)) {
      continue;
    }
    grpo::RlvrQuery q;
    q.id = inst->id;
    q.category = inst->category;
    q.prompt = prompt_tokens(suite.vocab, *inst);
    q.gold = inst->gold;
    q.kind = inst->kind;
    queries.push_back(std::move(q));
  }
  if (queries.empty()) {
    throw DataError("no RLVR training queries for run " + run_name);
  }

  // Validation subset for best-checkpoint selection.
  LoadedSuite validation = suite;
  validation.instances.clear();
  for (const auto& inst : suite.instances) {
    if (inst.split == taskgen::Split::validation &&
        (families.empty() || families.count(inst.category))) {
      validation.instances.push_back(inst);
    }
  }

  std::filesystem::create_directories(paths.logs());
  std::filesystem::create_directories(paths.checkpoints());
  std::ofstream log(paths.logs() / (run_name + ".jsonl"), std::ios::trunc);

  RunRecord record(paths.run_record());
  std::vector<ValidationPoint> val_points;

  grpo::TrainHooks hooks;
  hooks.on_step = [&](const grpo::StepRecord& step, const policy::PolicyParams& params) {
    const int n = step.step + 1;
    if (cfg.eval.checkpoint_every > 0 && n % cfg.eval.checkpoint_every == 0) {
      const std::string name = run_name + "_step" + std::to_string(n);
      policy::save_checkpoint(params, paths.checkpoint(name));
      record.record_checkpoint(name, paths.checkpoint(name));
    }
    if (cfg.eval.eval_every > 0 && n % cfg.eval.eval_every == 0 &&
        !validation.instances.empty()) {
      const auto cells = evaluate_split(validation, params, cfg.decoding,
                                        taskgen::Split::validation);
      double metric = 0.0;
      for (const auto& [key, m] : cells) {
        metric += headline_metric(m);
      }
      metric /= cells.empty() ? 1.0 : static_cast<double>(cells.size());
      const std::string name = run_name + "_val" + std::to_string(n);
      policy::save_checkpoint(params, paths.checkpoint(name));
      val_points.push_back({n, metric, name});
    }
  };

  const auto reward = grpo::make_default_reward(suite.vocab);
  auto result = grpo::train_rlvr(queries, std::move(initial), cfg.grpo, cfg.decoding,
                                 reward, rng::mix(cfg.master_seed, 0xA11), hooks, &log);

  policy::save_checkpoint(result.params, paths.checkpoint(run_name));
  record.record_checkpoint(run_name, paths.checkpoint(run_name));
  if (!val_points.empty()) {
    const std::string best = select_best_checkpoint(val_points);
    const auto best_params = policy::load_checkpoint(paths.checkpoint(best));
    policy::save_checkpoint(best_params, paths.checkpoint(run_name + "_best"));
    record.record_checkpoint(run_name + "_best", paths.checkpoint(run_name + "_best"));
    for (const auto& p : val_points) {
      if (p.checkpoint == best) {
        record.record_best(run_name, best, p.step, p.metric);
        break;
      }
    }
  }
}

inline json phase_eval(const ExperimentConfig& cfg, const std::string& checkpoint_name) {
  const auto paths = run_paths(cfg);
  const auto suite = load_suite(paths);
  const auto params = policy::load_checkpoint(paths.checkpoint(checkpoint_name));
  const auto cells = evaluate_split(suite, params, cfg.decoding, taskgen::Split::test);
  json report{{"checkpoint", checkpoint_name},
              {"split", "test"},
              {"per_category", cell_metrics_to_json(cells)}};
  std::filesystem::create_directories(paths.reports());
  write_text_file(paths.reports() / ("eval_" + checkpoint_name + ".json"),
                  report.dump(2) + "\n");
  return report;
}

/// Trains on one family only (per the pipeline mode) and evaluates on every
/// family's test split.
inline json phase_transfer(const ExperimentConfig& cfg) {
  const auto paths = run_paths(cfg);
  const std::set<std::string> only = {cfg.transfer_family};
  std::string source = "base";
  if (cfg.mode != PipelineMode::rlvr_only) {
    source = "sft";
  }
  const std::string run_name = "transfer_" + std::string(mode_name(cfg.mode));
  if (cfg.mode == PipelineMode::sft_only) {
    // SFT-only transfer: no RL step, evaluate the SFT checkpoint directly.
    const auto params = policy::load_checkpoint(paths.checkpoint("sft"));
    policy::save_checkpoint(params, paths.checkpoint(run_name));
  } else {
    phase_rlvr(cfg, source, only, run_name);
  }
  const auto suite = load_suite(paths);
  const auto params = policy::load_checkpoint(paths.checkpoint(run_name));
  const auto cells = evaluate_split(suite, params, cfg.decoding, taskgen::Split::test);
  json report{{"trained_on", cfg.transfer_family},
              {"mode", mode_name(cfg.mode)},
              {"per_category", cell_metrics_to_json(cells)}};
  std::filesystem::create_directories(paths.reports());
  write_text_file(paths.reports() / "transfer.json", report.dump(2) + "\n");
  return report;
}

// Reference numbers reported by the source experiments on MedCalc; shipped as
// a labeled fixture for side-by-side display, never recomputed.
inline json paper_reference_fixture() {
  return json{
      {"paper_reported", true},
      {"dataset", "MedCalc"},
      {"overall_accuracy",
       {{"base_3b", 9.74}, {"rlvr", 41.26}, {"sft_warmup", 37.82}, {"sft_rlvr", 51.96}}},
      {"passk_gain_regression", {{"r2", 0.91}, {"p", "<0.001"}}},
  };
}

inline json phase_report(const ExperimentConfig& cfg) {
  const auto paths = run_paths(cfg);
  json report;
  report["config_hash"] = config_hash(cfg);
  report["reference"] = paper_reference_fixture();

  auto try_load = [&](const std::string& name) -> std::optional<json> {
    const auto p = paths.reports() / name;
    if (!std::filesystem::exists(p)) {
      return std::nullopt;
    }
    return json::parse(read_text_file(p));
  };

  json local = json::object();
  for (const char* name : {"base", "sft", "rlvr_base", "rlvr_sft", "rlvr_base_best",
                           "rlvr_sft_best"}) {
    if (auto eval = try_load("eval_" + std::string(name) + ".json")) {
      local[name] = (*eval)["per_category"];
    }
  }
  report["local_results"] = local;

  if (auto diag = try_load("diagnose_base.json")) {
    report["diagnose"] = *diag;
    // Pass@k vs RL-gain regression over category cells.
    if (local.contains("base") && local.contains("rlvr_base")) {
      std::vector<std::pair<double, double>> points;
      std::string csv = "cell,pass_at_k,rl_gain\n";
      for (auto it = (*diag)["per_category"].begin(); it != (*diag)["per_category"].end(); ++it) {
        const std::string cell = it.key();
        if (!local["base"].contains(cell) || !local["rlvr_base"].contains(cell)) {
          continue;
        }
        const double passk = it.value().at("pass_at_k").get<double>();
        const double gain = local["rlvr_base"][cell].at("accuracy").get<double>() -
                            local["base"][cell].at("accuracy").get<double>();
        points.emplace_back(passk, gain);
        csv += cell + "," + std::to_string(passk) + "," + std::to_string(gain) + "\n";
      }
      write_text_file(paths.reports() / "passk_vs_gain.csv", csv);
      if (points.size() >= 3) {
        bool degenerate = true;
        for (const auto& p : points) {
          degenerate = degenerate && p.first == points.front().first;
        }
        if (!degenerate) {
          const auto reg = diagnostics::gain_regression(points);
          report["regression"] = {{"slope", reg.slope},
                                  {"intercept", reg.intercept},
                                  {"r2", reg.r2},
                                  {"p", reg.p_value}};
        }
      }
    }
  }

  // Plot-ready CSVs from the training logs.
  for (const char* run : {"rlvr_base", "rlvr_sft"}) {
    const auto logp = paths.logs() / (std::string(run) + ".jsonl");
    if (!std::filesystem::exists(logp)) {
      continue;
    }
    std::ifstream in(logp);
    std::string line;
    std::string csv = "step,mean_reward,mean_kl,mean_len,clip_frac,mean_think_len\n";
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto rec = json::parse(line);
      csv += std::to_string(rec.at("step").get<int>()) + "," +
             std::to_string(rec.at("mean_reward").get<double>()) + "," +
             std::to_string(rec.at("mean_kl").get<double>()) + "," +
             std::to_string(rec.at("mean_len").get<double>()) + "," +
             std::to_string(rec.at("clip_frac").get<double>()) + "," +
             std::to_string(rec.at("mean_think_len").get<double>()) + "\n";
    }
    write_text_file(paths.reports() / (std::string(run) + "_curve.csv"), csv);
  }

  // Reasoning-length bars per checkpoint and cell.
  std::string bars = "checkpoint,cell,mean_think_len\n";
  for (auto it = local.begin(); it != local.end(); ++it) {
    for (auto cit = it.value().begin(); cit != it.value().end(); ++cit) {
      bars += it.key() + "," + cit.key() + "," +
              std::to_string(cit.value().at("mean_think_len").get<double>()) + "\n";
    }
  }
  write_text_file(paths.reports() / "reasoning_length.csv", bars);

  write_text_file(paths.reports() / "report.json", report.dump(2) + "\n");
  return report;
}

// --------------------------------------------------------------------------
// Full pipeline
// --------------------------------------------------------------------------

struct PhaseTimer {
  RunRecord& record;
  std::string name;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  ~PhaseTimer() {
    record.record_phase(name, std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count());
  }
};

inline json run_pipeline(const ExperimentConfig& cfg) {
  const auto paths = run_paths(cfg);
  LockFile lock(paths.root);
  RunRecord record(paths.run_record());
  record.set_config_hash(config_hash(cfg));

  {
    PhaseTimer t{record, "gen-suite"};
    phase_gen_suite(cfg);
  }
  {
    PhaseTimer t{record, "pretrain"};
    phase_pretrain(cfg);
  }
  {
    PhaseTimer t{record, "diagnose"};
    phase_diagnose(cfg, "base");
  }
  {
    PhaseTimer t{record, "eval-base"};
    phase_eval(cfg, "base");
  }
  if (cfg.mode != PipelineMode::sft_only) {
    PhaseTimer t{record, "rlvr-from-base"};
    phase_rlvr(cfg, "base");
    phase_eval(cfg, "rlvr_base");
  }
  if (cfg.mode != PipelineMode::rlvr_only) {
    {
      PhaseTimer t{record, "sft"};
      phase_sft(cfg);
      phase_eval(cfg, "sft");
    }
    if (cfg.mode == PipelineMode::sft_rlvr) {
      PhaseTimer t{record, "rlvr-from-sft"};
      phase_rlvr(cfg, "sft");
      phase_eval(cfg, "rlvr_sft");
    }
  }
  {
    PhaseTimer t{record, "report"};
    return phase_report(cfg);
  }
}

}  // namespace rlvr::harness
