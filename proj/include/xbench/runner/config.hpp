#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xbench/explain/explain.hpp"
#include "xbench/faith/faithfulness.hpp"
#include "xbench/model/adapter.hpp"

namespace xbench::runner {

inline constexpr int kSchemaVersion = 1;

enum class DatasetKind { PBC, BUSI };
DatasetKind parse_dataset(const std::string& text);
const char* dataset_name(DatasetKind d);  // "pbc" / "busi"

struct FaithConfig {
  int steps = 50;
  int batch_size = 17;
  faith::BaselineSpec insertion = faith::insertion_default();
  faith::BaselineSpec deletion = faith::deletion_default();
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  DatasetKind dataset = DatasetKind::PBC;
  std::filesystem::path data_root;  // empty: $XBENCH_DATA/<dataset>
  std::filesystem::path cache_dir;  // empty: $XBENCH_CACHE
  std::vector<model::Family> backbones;
  std::vector<explain::Method> methods;
  model::InitMode init = model::InitMode::Checkpoint;
  std::vector<std::pair<model::Family, model::ArchConfig>> arch_overrides;

  model::TrainConfig train;
  double val_fraction = 0.15;
  int train_per_class = 0;  // 0: whole training split
  int eval_per_class = 0;   // 0: whole validation split

  FaithConfig faithfulness;
  explain::ExplainerSettings explainers;

  int gallery_samples = 5;
  int error_cases = 5;
  bool error_all_classes = false;

  uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  unsigned workers = 0;  // 0: hardware concurrency

  std::optional<model::ArchConfig> arch_for(model::Family f) const;
  std::filesystem::path resolved_data_root() const;
  void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);
// Hash of the canonical JSON form.
uint64_t config_hash(const ExperimentConfig& cfg);

// Values given on the command line replace the file's.
struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::string> subset;  // per-class count or "ALL"
};
void apply_overrides(ExperimentConfig& cfg, const Overrides& o);

}  // namespace xbench::runner
