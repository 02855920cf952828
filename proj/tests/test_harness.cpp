#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "rlvr/cli.hpp"
#include "rlvr/harness.hpp"

using namespace rlvr;
using namespace rlvr::harness;
namespace fs = std::filesystem;

namespace {

/// Minimal pipeline config: tiny suite, handful of steps. Exercises wiring,
/// not training quality.
ExperimentConfig tiny_config(const fs::path& out_dir) {
  ExperimentConfig cfg = default_config();
  cfg.out_dir = out_dir.string();
  for (auto& [family, counts] : cfg.suite.families) {
    counts = {12, 4, 4, 6};
  }
  cfg.suite.pretrain_docs_per_knowledge = 6;
  cfg.suite.pretrain_atom_docs = 10;
  cfg.suite.pretrain_filler_docs = 8;
  cfg.pretrain = {0.05, 60, 8};
  cfg.sft = {0.05, 40, 4};
  cfg.grpo.max_steps = 6;
  cfg.grpo.epochs = 10;
  cfg.grpo.minibatch_queries = 4;
  cfg.grpo.group_size = 4;
  cfg.diag.per_category_examples = 4;
  cfg.eval.checkpoint_every = 3;
  cfg.eval.eval_every = 3;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

json strip_timing(json j) {
  if (j.is_object()) {
    j.erase("wall_ms");
    for (auto& [key, value] : j.items()) {
      value = strip_timing(value);
    }
  } else if (j.is_array()) {
    for (auto& value : j) {
      value = strip_timing(value);
    }
  }
  return j;
}

}  // namespace

TEST_CASE("experiment config round-trips through JSON") {
  auto cfg = default_config();
  cfg.master_seed = 99;
  cfg.mode = PipelineMode::rlvr_only;
  cfg.grpo.ratio_level = grpo::RatioLevel::sequence;
  const auto j = config_to_json(cfg);
  const auto back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(config_hash(back) == config_hash(cfg));
  cfg.master_seed = 100;
  CHECK(config_hash(back) != config_hash(cfg));
}

TEST_CASE("best checkpoint selection: argmax with earliest-step tie-break") {
  std::vector<ValidationPoint> points = {{100, 0.2, "a"}, {200, 0.5, "b"}, {300, 0.4, "c"}};
  CHECK(select_best_checkpoint(points) == "b");
  points = {{100, 0.5, "a"}, {200, 0.5, "b"}};
  CHECK(select_best_checkpoint(points) == "a");
  CHECK_THROWS_AS(select_best_checkpoint(std::vector<ValidationPoint>{}), InputError);

  // Log re-scan oracle: the selected checkpoint is the one a fresh scan of
  // the recorded points finds.
  points = {{1, 0.1, "p1"}, {2, 0.9, "p2"}, {3, 0.3, "p3"}, {4, 0.9, "p4"}};
  const auto chosen = select_best_checkpoint(points);
  double best_metric = -1.0;
  std::string best_name;
  for (const auto& p : points) {
    if (p.metric > best_metric) {
      best_metric = p.metric;
      best_name = p.checkpoint;
    }
  }
  CHECK(chosen == best_name);
}

TEST_CASE("lockfile gives one run exclusive ownership of the output directory") {
  const auto dir = fresh_dir("rlvr_lock_test");
  {
    LockFile lock(dir);
    CHECK_THROWS_AS(LockFile(dir), ConfigError);
  }
  // Released on destruction.
  LockFile again(dir);
  fs::remove_all(dir);
}

TEST_CASE("gen-suite writes identical trees for identical seeds") {
  const auto dir_a = fresh_dir("rlvr_gen_a");
  const auto dir_b = fresh_dir("rlvr_gen_b");
  auto cfg_a = tiny_config(dir_a);
  auto cfg_b = tiny_config(dir_b);
  phase_gen_suite(cfg_a);
  phase_gen_suite(cfg_b);
  for (const char* name : {"tasks.jsonl", "corpus.txt", "sft.jsonl", "manifest.json",
                           "ehr.jsonl"}) {
    CHECK(read_text_file(dir_a / "suite" / name) == read_text_file(dir_b / "suite" / name));
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("mini pipeline produces a consistent artifact tree", "[pipeline]") {
  const auto dir = fresh_dir("rlvr_mini_pipeline");
  auto cfg = tiny_config(dir);
  cfg.mode = PipelineMode::sft_rlvr;
  const auto report = run_pipeline(cfg);

  SECTION("artifacts exist") {
    for (const char* rel :
         {"suite/tasks.jsonl", "suite/corpus.txt", "suite/sft.jsonl", "suite/manifest.json",
          "checkpoints/base.ckpt", "checkpoints/sft.ckpt", "checkpoints/rlvr_base.ckpt",
          "checkpoints/rlvr_sft.ckpt", "logs/pretrain.jsonl", "logs/rlvr_base.jsonl",
          "reports/diagnose_base.json", "reports/eval_base.json", "reports/eval_rlvr_base.json",
          "reports/report.json", "reports/passk_vs_gain.csv", "reports/reasoning_length.csv",
          "run.json"}) {
      INFO(rel);
      CHECK(fs::exists(dir / rel));
    }
  }

  SECTION("report carries the labeled reference fixture and local results") {
    CHECK(report.at("reference").at("paper_reported").get<bool>());
    CHECK(report.at("reference").at("overall_accuracy").at("rlvr").get<double>() ==
          Catch::Approx(41.26));
    CHECK(report.contains("local_results"));
    CHECK(report.at("local_results").contains("base"));
  }

  SECTION("diagnose report follows the documented schema") {
    const auto diag = json::parse(read_text_file(dir / "reports/diagnose_base.json"));
    REQUIRE(diag.contains("per_category"));
    for (const auto& [cell, entry] : diag.at("per_category").items()) {
      CHECK(entry.contains("pass_at_k"));
      CHECK(entry.contains("reliable_pass_at_k"));
      CHECK(entry.contains("tau_p"));
      CHECK(entry.contains("tau_e"));
      CHECK(entry.contains("C"));
      CHECK(entry.at("reliable_pass_at_k").get<double>() <=
            entry.at("pass_at_k").get<double>() + 1e-12);
    }
    CHECK((diag.at("recommendation") == "sft-rlvr" || diag.at("recommendation") == "rlvr-only"));
  }

  SECTION("run record tracks phases and checkpoints") {
    const auto run = json::parse(read_text_file(dir / "run.json"));
    CHECK(run.contains("config_hash"));
    CHECK(run.at("phases").contains("pretrain"));
    CHECK(run.at("checkpoints").contains("base"));
  }

  SECTION("phase isolation: deleting downstream artifacts and re-running reproduces them") {
    const auto eval_path = dir / "reports/eval_base.json";
    const auto before = read_text_file(eval_path);
    fs::remove(eval_path);
    phase_eval(cfg, "base");
    CHECK(read_text_file(eval_path) == before);
  }

  fs::remove_all(dir);
}

TEST_CASE("two pipeline runs with one config are identical modulo timing", "[pipeline]") {
  const auto dir_a = fresh_dir("rlvr_det_a");
  const auto dir_b = fresh_dir("rlvr_det_b");
  auto cfg_a = tiny_config(dir_a);
  auto cfg_b = tiny_config(dir_b);
  cfg_a.mode = PipelineMode::rlvr_only;
  cfg_b.mode = PipelineMode::rlvr_only;
  const auto report_a = run_pipeline(cfg_a);
  const auto report_b = run_pipeline(cfg_b);

  // out_dir differs, so compare everything below the hash.
  auto scrub = [](json j) {
    j = strip_timing(j);
    j.erase("config_hash");
    return j;
  };
  CHECK(scrub(report_a) == scrub(report_b));
  CHECK(read_text_file(dir_a / "reports/eval_rlvr_base.json") ==
        read_text_file(dir_b / "reports/eval_rlvr_base.json"));
  CHECK(read_text_file(dir_a / "logs/rlvr_base.jsonl") !=
        "");  // logs exist; wall_ms differs so no byte comparison
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("CLI maps usage errors to exit code 2 and phase failures to 1") {
  const char* bad_flag[] = {"rlvrlab", "--no-such-flag", "run"};
  CHECK(cli::cli_main(3, bad_flag) == 2);

  const char* unknown_cmd[] = {"rlvrlab", "frobnicate"};
  CHECK(cli::cli_main(2, unknown_cmd) == 2);

  const char* missing_config[] = {"rlvrlab", "--config", "/nonexistent/config.json", "gen-suite"};
  CHECK(cli::cli_main(4, missing_config) == 1);
}

TEST_CASE("CLI gen-config then gen-suite runs end to end") {
  const auto dir = fresh_dir("rlvr_cli_flow");
  fs::create_directories(dir);
  const auto config_path = (dir / "config.json").string();
  const auto out_dir = (dir / "run").string();

  const char* gen_config[] = {"rlvrlab", "gen-config", "--out", config_path.c_str(),
                              "--out-dir", out_dir.c_str()};
  REQUIRE(cli::cli_main(6, gen_config) == 0);
  REQUIRE(fs::exists(config_path));

  // Shrink the suite before generating (the default is desk-size, not tiny).
  auto cfg = config_from_json(json::parse(read_text_file(config_path)));
  auto tiny = tiny_config(out_dir);
  tiny.out_dir = out_dir;
  write_text_file(config_path, config_to_json(tiny).dump(2));

  const char* gen_suite[] = {"rlvrlab", "--config", config_path.c_str(), "gen-suite"};
  REQUIRE(cli::cli_main(4, gen_suite) == 0);
  CHECK(fs::exists(fs::path(out_dir) / "suite/tasks.jsonl"));
  fs::remove_all(dir);
}
