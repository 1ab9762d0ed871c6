#include "palo/run.hpp"

#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <vector>

#include <omp.h>
#include <spdlog/spdlog.h>

#include "palo/errors.hpp"
#include "palo/trainer.hpp"

namespace palo::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int phase_rank(const std::string& p) { return p == "stage1" ? 0 : 1; }

// Keeps records of earlier phases and of this phase before `update`.
void truncate_metrics(const fs::path& path, Phase phase, int update) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  const int rank = phase_rank(to_string(phase));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      break;  // torn final line from an interrupted run
    }
    const int r = phase_rank(rec.value("phase", std::string("stage1")));
    if (r < rank || (r == rank && rec.value("update", 0) < update)) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

std::string checkpoint_name(int update) {
  std::ostringstream s;
  s << "ckpt_" << std::setw(6) << std::setfill('0') << update << ".palo";
  return s.str();
}

void write_config(const fs::path& path, const config::TrainConfig& cfg) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << config::to_json(cfg).dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace

json run_training(const config::TrainConfig& cfg, const RunOptions& options) {
  cfg.validate();
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
  const RunPaths paths{options.out_dir};
  fs::create_directories(paths.root);

  if (fs::exists(paths.config())) {
    if (!options.resume) {
      throw ConfigError("output directory " + paths.root.string() +
                        " already holds a run; pass --resume or choose another directory");
    }
    const config::TrainConfig previous = config::load(paths.config().string());
    if (config::digest(previous) != config::digest(cfg)) {
      throw ConfigError("cannot resume: the configuration differs from the one in " + paths.config().string());
    }
  } else {
    write_config(paths.config(), cfg);
  }

  std::vector<Phase> phases;
  if (cfg.stage != config::Stage::kStage2) phases.push_back(Phase::kStage1);
  if (cfg.stage != config::Stage::kStage1) phases.push_back(Phase::kStage2);

  json summary = {{"out_dir", paths.root.string()}, {"digest", config::digest(cfg)}, {"phases", json::array()}};
  for (const Phase phase : phases) {
    const std::string name = to_string(phase);
    fs::create_directories(paths.phase_dir(name));
    if (options.resume && fs::exists(paths.final_checkpoint(name))) {
      spdlog::info("{}: already complete, skipping", name);
      summary["phases"].push_back({{"phase", name}, {"checkpoint", paths.final_checkpoint(name).string()}});
      continue;
    }

    std::shared_ptr<const amp::ExpertDataset> dataset;
    if (phase == Phase::kStage2 && cfg.amp.enabled) {
      const fs::path ds_path = cfg.amp.dataset.empty() ? paths.dataset() : fs::path(cfg.amp.dataset);
      if (!fs::exists(ds_path)) {
        if (cfg.stage != config::Stage::kBoth) {
          throw ConfigError("stage-2 training with AMP needs an expert dataset at " + ds_path.string() +
                            "; run `palo collect-amp` on a stage-1 checkpoint first");
        }
        spdlog::info("collecting {} expert pairs from the stage-1 policy", cfg.amp.pairs);
        const LoadedPolicy expert = load_policy(paths.final_checkpoint("stage1").string());
        collect_expert(expert, cfg.amp.pairs, cfg.seed).save(ds_path.string());
      }
      dataset = std::make_shared<const amp::ExpertDataset>(amp::ExpertDataset::load(ds_path.string()));
    }

    Trainer trainer(cfg, phase, dataset);
    bool restored = false;
    if (options.resume && fs::exists(paths.latest(name))) {
      trainer.restore(io::TensorArchive::load(paths.latest(name).string()));
      restored = true;
      spdlog::info("{}: resumed at update {}", name, trainer.update_index());
    }
    if (!restored && phase == Phase::kStage2 && cfg.stage == config::Stage::kBoth && !cfg.amp.fresh_policy) {
      trainer.set_policy(load_policy(paths.final_checkpoint("stage1").string()).net);
    }
    truncate_metrics(paths.metrics(), phase, trainer.global_update());

    std::ofstream metrics(paths.metrics(), std::ios::app);
    while (!trainer.finished()) {
      const json rec = trainer.update();
      metrics << rec.dump() << '\n';
      metrics.flush();
      if (options.on_update) options.on_update(rec);
      const int done = trainer.update_index();
      if (options.log_interval > 0 && done % options.log_interval == 0) {
        spdlog::info("{} update {}/{}: reward {:.4f} r_v {:.3f} episode_length {} grid vx [{:.1f}, {:.1f}]", name,
                     done, plan(cfg, phase).updates, rec["reward"].get<double>(), rec["r_v"].get<double>(),
                     rec["episode_length"].dump(), trainer.grid().vx.lo, trainer.grid().vx.hi);
      }
      if (done % cfg.checkpoint_interval == 0) {
        const io::TensorArchive a = trainer.checkpoint();
        a.save((paths.phase_dir(name) / checkpoint_name(trainer.global_update())).string());
        a.save(paths.latest(name).string());
      }
    }
    const io::TensorArchive a = trainer.checkpoint();
    a.save(paths.latest(name).string());
    a.save(paths.final_checkpoint(name).string());
    summary["phases"].push_back({{"phase", name},
                                 {"updates", trainer.update_index()},
                                 {"checkpoint", paths.final_checkpoint(name).string()}});
  }
  return summary;
}

}  // namespace palo::train
