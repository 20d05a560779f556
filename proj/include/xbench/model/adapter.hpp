#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xbench/common/tensor.hpp"
#include "xbench/data/source.hpp"
#include "xbench/model/backbone.hpp"
#include "xbench/model/capture.hpp"
#include "xbench/model/network.hpp"
#include "xbench/model/safetensors.hpp"

namespace xbench::model {

enum class InitMode {
  Checkpoint,  // backbone weights from the pretrained checkpoint (required)
  Random,      // seeded initialisation, for offline runs and tests
};

struct BuildOptions {
  InitMode init = InitMode::Checkpoint;
  std::filesystem::path cache_dir;  // empty: $XBENCH_CACHE
  uint64_t seed = 0;
  // Replaces the family's architecture (small test models).
  std::optional<ArchConfig> arch_override;
};

struct TrainConfig {
  int batch_size = 32;
  int epochs = 1;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  unsigned workers = 1;  // per-batch data parallelism; 1 is bit-reproducible
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // running training accuracy over the epoch
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

class Adapter {
 public:
  Adapter(BackboneSpec spec, std::unique_ptr<Network> net);

  const BackboneSpec& spec() const { return spec_; }
  int num_classes() const { return net_->num_classes(); }
  Network& network() { return *net_; }
  const Network& network() const { return *net_; }

  // Trained-weights bundle (safetensors container with architecture metadata).
  void save(const std::filesystem::path& path,
            const std::map<std::string, std::string>& extra_metadata = {}) const;
  static Adapter load(const std::filesystem::path& path);

 private:
  BackboneSpec spec_;
  std::unique_ptr<Network> net_;
};

// Resolves `<cache>/<org>/<name>/model.safetensors`,
// `<cache>/<org>--<name>/model.safetensors` or the hub cache layout
// `<cache>/models--<org>--<name>/snapshots/*/model.safetensors`.
std::optional<std::filesystem::path> find_checkpoint(const std::filesystem::path& cache_dir,
                                                     const std::string& checkpoint_id);

// Fresh num_classes head on top of the backbone. Throws CheckpointError when
// InitMode::Checkpoint and the checkpoint is not in the cache.
Adapter build_adapter(const BackboneSpec& spec, int num_classes, const BuildOptions& opts = {});

// Loads every non-head parameter from a Hugging Face state dict.
void load_backbone_weights(Network& net, const SafeTensors& weights);

using ProgressFn = std::function<void(int epoch, size_t step, size_t steps, double loss)>;

// Throws Error when the loss becomes non-finite.
TrainHistory fine_tune(Adapter& adapter, const data::SampleSource& train, const TrainConfig& config,
                       const ProgressFn& progress = {});

// One probability row per image.
Matrix predict(const Adapter& adapter, std::span<const ImageTensor> images);
std::vector<float> predict_one(const Adapter& adapter, const ImageTensor& image);

CaptureBundle forward_with_capture(const Adapter& adapter, const ImageTensor& image, int target_class);

std::string arch_to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const std::string& text);

}  // namespace xbench::model
