#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "palo/config.hpp"

namespace palo::train {

// Output directory layout of a training run:
//   config.json            resolved configuration
//   metrics.jsonl          one record per update, both phases
//   stage1/, stage2/       ckpt_<update>.palo, latest.palo, final.palo
//   amp_dataset.palo       expert data collected between the phases
struct RunOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  int log_interval = 10;
  // Called with every metrics record; may be empty.
  std::function<void(const nlohmann::json&)> on_update;
};

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path metrics() const { return root / "metrics.jsonl"; }
  std::filesystem::path dataset() const { return root / "amp_dataset.palo"; }
  std::filesystem::path phase_dir(const std::string& phase) const { return root / phase; }
  std::filesystem::path latest(const std::string& phase) const { return root / phase / "latest.palo"; }
  std::filesystem::path final_checkpoint(const std::string& phase) const { return root / phase / "final.palo"; }
};

// Runs the configured phases: stage 1 on flat terrain without AMP, expert
// collection from its final policy, then stage 2 with the discriminator.
// With `resume` the run continues from the newest checkpoint in out_dir and
// the metrics log is cut back to that point. Returns a short summary.
nlohmann::json run_training(const config::TrainConfig& cfg, const RunOptions& options);

}  // namespace palo::train
