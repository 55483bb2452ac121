// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner behind the `crisp` CLI: strict JSON configs, run
// manifests, and the dense-train -> personalize -> prune pipeline.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "crisp/micro_net.hpp"
#include "crisp/perf_model.hpp"
#include "crisp/saliency_pruner.hpp"

namespace crisp {

inline constexpr const char* kToolVersion = "0.1.0";

// Bad flags or config contents. The CLI exits with status 2 for these.
class UsageError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

struct DataConfig {
  std::uint32_t classes = 10;
  std::uint32_t dim = 64;
  std::uint32_t per_class = 500;
  double noise = 0.3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  std::vector<std::size_t> hidden{128, 128};
  TrainOptions train{20, 0.05, 0.9, 4e-5, 32, 0};
  // Dense personalization on u_c before pruning; also the accuracy reference.
  std::uint32_t finetune_epochs = 5;
  UserProfile profile{{1, 4, 7}, 32};
  PruneSchedule schedule;
  PruneOptions prune;
};

// Unknown keys anywhere are rejected with UsageError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Accepts a config file or a run manifest (uses its "config" entry). Applies
// CRISP_SEED when set.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void apply_seed_override(ExperimentConfig& cfg);

HwConfig hw_from_json(const nlohmann::json& j);
nlohmann::json hw_to_json(const HwConfig& hw);
std::vector<LayerShape> layers_from_json(const nlohmann::json& j);

struct ExperimentResult {
  SynthDataset data;
  MicroModel pretrained;
  MicroModel dense_finetuned;
  std::vector<EpochRecord> pretrain_curve;
  double dense_acc_uc = 0.0;
  PruneResult pruned;
  double pruned_acc_uc = 0.0;
};

// Generates data, pretrains on all classes, fine-tunes on u_c, prunes.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// run_experiment plus artifacts in out_dir: dataset.bin, pretrained.bin,
// dense_ft.bin, final.bin, layer<l>.crsp, train_curve.csv, prune_report.csv,
// prune.manifest.json.
ExperimentResult run_prune_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

std::string prune_report_csv(const std::vector<IterationReport>& reports);
std::string train_curve_csv(const std::vector<EpochRecord>& curve);

nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                             const nlohmann::json& config, const std::vector<std::string>& outputs);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const nlohmann::json& manifest);

std::vector<std::uint32_t> parse_class_list(const std::string& text);

// Header dump plus invariant check of a .crsp file. Returns false and fills
// `error` when the file is unreadable or violates an invariant.
bool inspect_crsp(const std::filesystem::path& path, std::string& dump, std::string& error);

}  // namespace crisp
