// Command-line front end: train, explain, faithfulness, report, run, synth.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <iostream>

#include "xbench/common/error.hpp"
#include "xbench/data/synth.hpp"
#include "xbench/explain/export.hpp"
#include "xbench/kernels/kernels.hpp"
#include "xbench/runner/experiment.hpp"
#include "xbench/runner/report.hpp"

namespace fs = std::filesystem;
using namespace xbench;

namespace {

struct RunArgs {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> subset;
};

void add_run_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "override the config seed");
  cmd->add_option("--output-dir", a.output_dir, "override the config output directory");
  cmd->add_option("--subset", a.subset, "evaluation images per class, or ALL");
}

runner::Experiment open_experiment(const RunArgs& a) {
  auto cfg = runner::load_config(a.config);
  runner::Overrides o;
  o.seed = a.seed;
  if (a.output_dir) o.output_dir = fs::path(*a.output_dir);
  o.subset = a.subset;
  runner::apply_overrides(cfg, o);
  return runner::Experiment(std::move(cfg));
}

// A .wt path, or a family name resolved to the newest matching bundle in
// `weights_dir`.
fs::path resolve_weights(const std::string& model, const fs::path& weights_dir) {
  if (fs::path(model).extension() == ".wt") {
    if (!fs::exists(model)) throw ConfigError("weights file not found: " + model);
    return model;
  }
  const std::string prefix = std::string(model::family_name(model::parse_family(model))) + "_";
  std::vector<fs::path> hits;
  if (fs::is_directory(weights_dir))
    for (const auto& e : fs::directory_iterator(weights_dir))
      if (e.path().extension() == ".wt" && e.path().filename().string().rfind(prefix, 0) == 0) hits.push_back(e.path());
  if (hits.empty())
    throw ConfigError("no trained " + prefix + "*.wt bundle in " + weights_dir.string() +
                      " (run `xbench train` first, or pass --weights-dir)");
  std::sort(hits.begin(), hits.end());
  return hits.back();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xbench: explainability benchmark for vision transformer classifiers"};
  app.require_subcommand(1);
  std::string log_level = "info", isa;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");
  app.add_option("--isa", isa, "force the kernel variant (scalar or avx2)");

  RunArgs train_args, faith_args, run_args;
  auto* train = app.add_subcommand("train", "fine-tune the configured backbones and write metrics.csv");
  add_run_options(train, train_args);
  auto* faithfulness = app.add_subcommand("faithfulness", "insertion/deletion AUC for every backbone and method");
  add_run_options(faithfulness, faith_args);
  auto* run = app.add_subcommand("run", "all stages: classification, faithfulness, gallery, error cases");
  add_run_options(run, run_args);

  auto* explain_cmd = app.add_subcommand("explain", "saliency map for one image");
  std::string model_arg, method_arg, image_arg, weights_dir, out_dir = ".";
  std::optional<int> target;
  explain_cmd->add_option("--model", model_arg, "family (vit, deit, dino, swin) or a .wt bundle")->required();
  explain_cmd->add_option("--method", method_arg, "rollout, grad_rollout or grad_cam")->required();
  explain_cmd->add_option("--image", image_arg, "input image")->required()->check(CLI::ExistingFile);
  explain_cmd->add_option("--target", target, "class to explain (default: predicted class)");
  explain_cmd->add_option("--weights-dir", weights_dir, "where to look for <family>_*.wt (default: <output-dir>/weights)");
  explain_cmd->add_option("--output-dir", out_dir, "directory for the map, sidecar and overlay");

  auto* report = app.add_subcommand("report", "print the tables of a finished run");
  std::string run_dir;
  report->add_option("--run", run_dir, "run output directory")->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset with the PBC or BUSI folder layout");
  std::string synth_dataset = "pbc", synth_root;
  int per_class = 40;
  uint64_t synth_seed = 0;
  synth->add_option("--dataset", synth_dataset, "pbc or busi");
  synth->add_option("--root", synth_root, "output directory")->required();
  synth->add_option("--per-class", per_class, "images per class");
  synth->add_option("--seed", synth_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (!isa.empty()) kernels::set_active_isa(isa == "scalar" ? kernels::Isa::Scalar : kernels::Isa::Avx2);
    spdlog::debug("kernels: {}", kernels::isa_name(kernels::active_isa()));

    if (*train) {
      auto e = open_experiment(train_args);
      e.run_classification();
      std::cout << "wrote " << e.write_manifest().string() << "\n";
    } else if (*faithfulness) {
      auto e = open_experiment(faith_args);
      const auto res = e.run_faithfulness();
      std::cout << faith::auc_table_text(res.auc);
      e.write_manifest();
    } else if (*run) {
      auto e = open_experiment(run_args);
      const auto rb = e.run_all();
      std::cout << runner::render_report(e.config().output_dir);
      if (!rb.failures.empty()) return 2;
    } else if (*explain_cmd) {
      const fs::path wt = resolve_weights(model_arg, weights_dir.empty() ? fs::path(out_dir) / "weights" : fs::path(weights_dir));
      const auto adapter = model::Adapter::load(wt);
      const auto method = explain::parse_method(method_arg);
      const auto rgb = data::decode_image(image_arg);
      const ImageTensor img = data::preprocess(rgb);
      const auto probs = model::predict_one(adapter, img);
      const int predicted = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      const int cls = target.value_or(predicted);
      if (cls < 0 || cls >= adapter.num_classes())
        throw ConfigError("--target must lie in [0, " + std::to_string(adapter.num_classes()) + ")");
      const explain::ExplainerSettings settings;
      const auto map = explain::explain(method, model::forward_with_capture(adapter, img, cls), settings);
      const std::string family(model::family_name(adapter.spec().family));
      const std::string stem = fs::path(image_arg).stem().string() + "_" + family + "_" + explain::method_name(method) +
                               "_c" + std::to_string(cls);
      const auto rec = explain::export_saliency(out_dir, stem, map, data::denormalize(img),
                                                {family, image_arg, "class " + std::to_string(cls), settings});
      std::cout << "predicted class " << predicted << " (p=" << probs[static_cast<size_t>(predicted)] << ")\n"
                << rec.map_png.string() << "\n" << rec.sidecar.string() << "\n" << rec.overlay_png.string() << "\n";
    } else if (*report) {
      std::cout << runner::render_report(run_dir);
    } else if (*synth) {
      if (runner::parse_dataset(synth_dataset) == runner::DatasetKind::PBC) data::write_synthetic_pbc(synth_root, per_class, synth_seed);
      else data::write_synthetic_busi(synth_root, per_class, synth_seed);
      std::cout << "wrote " << synth_root << "\n";
    }
  } catch (const CheckpointError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
