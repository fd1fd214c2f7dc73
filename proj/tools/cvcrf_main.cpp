#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "cvcrf/checkpoint.hpp"
#include "cvcrf/config.hpp"
#include "cvcrf/trainer.hpp"

namespace {

using namespace cvcrf;

void print_report(const MetricsReport& r) {
  std::printf("%s\n%s\n", metrics_csv_header(r.num_classes()).c_str(), metrics_csv_row(r).c_str());
}

int train(TrainConfig config, const std::string& out_dir, bool quiet) {
  ExperimentOptions options;
  options.out_dir = out_dir;
  if (!quiet) {
    options.on_epoch = [](const EpochStats& s, const MetricsReport& val) {
      std::fprintf(stderr, "epoch %3zu  loss %.4f  ce %.4f  cmcl %.4f  gate_H %.4f  val_acc %.4f  val_m_f1 %.4f\n",
                   s.epoch, s.loss, s.ce, s.cmcl, s.gate_entropy, val.acc, val.m_f1);
    };
  }
  const ExperimentResult r = run_experiment(config, options);
  std::fprintf(stderr, "best epoch %zu, artifacts in %s\n", r.best_epoch, out_dir.c_str());
  print_report(r.test);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-view classifier with center-memory contrastive learning, attention fusion and a mixture-of-experts head"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/latest", view;
  std::uint64_t seed = 0;
  bool no_cmcl = false, no_dsam = false, no_moe = false, quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write metrics, diagnostics, checkpoint and embeddings");
  train_cmd->add_option("--config", config_path, "Config file (key = value)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = train_cmd->add_option("--seed", seed, "Override the config seed");
  train_cmd->add_flag("--no-cmcl", no_cmcl, "Drop the contrastive loss term");
  train_cmd->add_flag("--no-dsam", no_dsam, "Replace the attention cascade by late fusion");
  train_cmd->add_flag("--no-moe", no_moe, "Use a single expert without the gate");
  train_cmd->add_option("--view", view, "Single-view ablation")->check(CLI::IsMember({"long", "trans"}));
  train_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
  train_cmd->add_flag("--quiet", quiet, "No per-epoch log");

  std::string checkpoint, split_name = "test";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split_name, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();

  std::string embeddings_out;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write per-sample embeddings as CSV");
  export_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", embeddings_out, "Output CSV")->required();

  std::string grid_out = "runs/grid";
  auto* grid_cmd = app.add_subcommand("ablation-grid", "Run the six ablation variants and write grid.csv");
  grid_cmd->add_option("--config", config_path, "Config file (key = value)")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--out", grid_out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      TrainConfig config = load_config(config_path);
      if (seed_opt->count()) config.seed = seed;
      config.no_cmcl = config.no_cmcl || no_cmcl;
      config.no_dsam = config.no_dsam || no_dsam;
      config.no_moe = config.no_moe || no_moe;
      if (!view.empty()) config.view = parse_view_mode(view);
      config.validate();
      return train(config, out_dir, quiet);
    }
    if (eval_cmd->parsed()) {
      const auto trainer = read_checkpoint(checkpoint);
      print_report(trainer->evaluate(split_name));
      return 0;
    }
    if (export_cmd->parsed()) {
      read_checkpoint(checkpoint)->export_embeddings(embeddings_out);
      std::fprintf(stderr, "wrote %s\n", embeddings_out.c_str());
      return 0;
    }
    if (grid_cmd->parsed()) {
      const auto results = run_ablation_grid(load_config(config_path), grid_out);
      std::printf("variant,m_f1,acc\n");
      for (const auto& [name, r] : results) std::printf("%s,%.6f,%.6f\n", name.c_str(), r.test.m_f1, r.test.acc);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
