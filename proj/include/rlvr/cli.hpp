#pragma once

/**
 * Command-line front end.
 *
 * Subcommands: gen-config, gen-suite, pretrain, diagnose, sft, rlvr, eval,
 * transfer, report, run. Exit codes: 0 success, 1 phase failure (the failing
 * phase is named on stderr), 2 usage error.
 *
 * The global seed can be overridden per invocation with --seed or the
 * RLVRLAB_SEED environment variable (the flag wins).
 */

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "rlvr/harness.hpp"

namespace rlvr::cli {

inline harness::ExperimentConfig load_config(const std::string& path,
                                             std::optional<std::uint64_t> seed_flag) {
  auto cfg = harness::config_from_json(nlohmann::json::parse(read_text_file(path)));
  if (const char* env = std::getenv("RLVRLAB_SEED")) {
    cfg.master_seed = std::strtoull(env, nullptr, 10);
  }
  if (seed_flag) {
    cfg.master_seed = *seed_flag;
  }
  return cfg;
}

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"rlvrlab: a desk-scale laboratory for RL with verifiable rewards"};
  app.require_subcommand(1);

  std::string config_path = "config.json";
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--config", config_path, "experiment config file (JSON)");
  app.add_option("--seed", seed_flag, "override the master seed");

  auto* gen_config = app.add_subcommand("gen-config", "write a full-default config file");
  std::string gen_config_out = "config.json";
  std::string gen_config_dir;
  gen_config->add_option("--out", gen_config_out, "where to write the config");
  gen_config->add_option("--out-dir", gen_config_dir, "run output directory to record");

  app.add_subcommand("gen-suite", "generate the task suite and pretraining corpus");
  app.add_subcommand("pretrain", "train the base policy on the pretraining corpus");

  auto* diagnose = app.add_subcommand("diagnose", "Pass@k / Reliable Pass@k and SFT advice");
  std::string diagnose_ckpt = "base";
  diagnose->add_option("--checkpoint", diagnose_ckpt, "checkpoint name to diagnose");

  app.add_subcommand("sft", "supervised warm-up from the base checkpoint");

  auto* rlvr_cmd = app.add_subcommand("rlvr", "GRPO training with rule-based rewards");
  std::string rlvr_from = "base";
  rlvr_cmd->add_option("--from", rlvr_from, "starting checkpoint (base or sft)");

  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation on the test split");
  std::string eval_ckpt;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint name to evaluate")->required();

  app.add_subcommand("transfer", "train on one family, evaluate on all");
  app.add_subcommand("report", "assemble metrics tables, regression and CSVs");
  app.add_subcommand("run", "full pipeline for the configured mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string phase = app.get_subcommands().front()->get_name();
  try {
    if (phase == "gen-config") {
      auto cfg = harness::default_config();
      if (!gen_config_dir.empty()) {
        cfg.out_dir = gen_config_dir;
      }
      write_text_file(gen_config_out, harness::config_to_json(cfg).dump(2) + "\n");
      std::printf("wrote %s\n", gen_config_out.c_str());
      return 0;
    }
    const auto cfg = load_config(config_path, seed_flag);
    const auto paths = harness::run_paths(cfg);
    if (phase == "gen-suite") {
      harness::LockFile lock(paths.root);
      harness::phase_gen_suite(cfg);
    } else if (phase == "pretrain") {
      harness::LockFile lock(paths.root);
      harness::phase_pretrain(cfg);
    } else if (phase == "diagnose") {
      const auto result = harness::phase_diagnose(cfg, diagnose_ckpt);
      std::printf("recommendation: %s\n", result.recommendation.c_str());
    } else if (phase == "sft") {
      harness::LockFile lock(paths.root);
      harness::phase_sft(cfg);
    } else if (phase == "rlvr") {
      harness::LockFile lock(paths.root);
      harness::phase_rlvr(cfg, rlvr_from);
    } else if (phase == "eval") {
      harness::phase_eval(cfg, eval_ckpt);
    } else if (phase == "transfer") {
      harness::LockFile lock(paths.root);
      harness::phase_transfer(cfg);
    } else if (phase == "report") {
      harness::phase_report(cfg);
    } else if (phase == "run") {
      harness::run_pipeline(cfg);
    }
    std::printf("%s: ok\n", phase.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "phase %s failed: %s\n", phase.c_str(), e.what());
    return 1;
  }
}

}  // namespace rlvr::cli
