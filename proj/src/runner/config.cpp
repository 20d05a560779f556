#include "xbench/runner/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "xbench/common/error.hpp"
#include "xbench/common/rng.hpp"

namespace xbench::runner {

using nlohmann::json;

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

faith::BaselineSpec baseline_from(const json& j) {
  faith::BaselineSpec b;
  const std::string kind = upper(j.value("kind", "BLANK"));
  if (kind == "BLUR") b.kind = faith::BaselineKind::BLUR;
  else if (kind == "BLANK") b.kind = faith::BaselineKind::BLANK;
  else throw ConfigError("unknown baseline kind '" + kind + "' (expected BLUR or BLANK)");
  b.blur_sigma = j.value("sigma", 11.0);
  b.validate();
  return b;
}

json baseline_to(const faith::BaselineSpec& b) {
  return {{"kind", b.kind == faith::BaselineKind::BLUR ? "BLUR" : "BLANK"}, {"sigma", b.blur_sigma}};
}

explain::RolloutConfig rollout_from(const json& j, explain::RolloutConfig c) {
  if (j.contains("head_fusion")) {
    const std::string f = upper(j["head_fusion"].get<std::string>());
    if (f == "MEAN") c.head_fusion = explain::HeadFusion::MEAN;
    else if (f == "MAX") c.head_fusion = explain::HeadFusion::MAX;
    else if (f == "MIN") c.head_fusion = explain::HeadFusion::MIN;
    else throw ConfigError("unknown head_fusion '" + f + "'");
  }
  c.discard_ratio = j.value("discard_ratio", c.discard_ratio);
  c.residual_weight = j.value("residual_weight", c.residual_weight);
  c.validate();
  return c;
}

json rollout_to(const explain::RolloutConfig& c) {
  const char* f = c.head_fusion == explain::HeadFusion::MEAN ? "MEAN" : c.head_fusion == explain::HeadFusion::MAX ? "MAX" : "MIN";
  return {{"head_fusion", f}, {"discard_ratio", c.discard_ratio}, {"residual_weight", c.residual_weight}};
}

int parse_subset(const json& j) {
  if (j.is_string()) {
    if (upper(j.get<std::string>()) == "ALL") return 0;
    throw ConfigError("eval_subset must be a per-class count or \"ALL\"");
  }
  const int n = j.get<int>();
  if (n < 1) throw ConfigError("eval_subset must be positive");
  return n;
}

}  // namespace

DatasetKind parse_dataset(const std::string& text) {
  const std::string t = upper(text);
  if (t == "PBC") return DatasetKind::PBC;
  if (t == "BUSI") return DatasetKind::BUSI;
  throw ConfigError("unknown dataset '" + text + "' (expected PBC or BUSI)");
}

const char* dataset_name(DatasetKind d) { return d == DatasetKind::PBC ? "pbc" : "busi"; }

std::optional<model::ArchConfig> ExperimentConfig::arch_for(model::Family f) const {
  for (const auto& [fam, arch] : arch_overrides)
    if (fam == f) return arch;
  return std::nullopt;
}

std::filesystem::path ExperimentConfig::resolved_data_root() const {
  if (!data_root.empty()) return data_root;
  const char* env = std::getenv("XBENCH_DATA");
  if (!env || !*env)
    throw ConfigError(fmt::format("no data_root in the config and XBENCH_DATA is unset (expected $XBENCH_DATA/{})",
                                  dataset_name(dataset)));
  return std::filesystem::path(env) / dataset_name(dataset);
}

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion)
    throw ConfigError(fmt::format("config schema_version {} is not supported (expected {})", schema_version, kSchemaVersion));
  if (backbones.empty()) throw ConfigError("config lists no backbones");
  if (methods.empty()) throw ConfigError("config lists no explainer methods");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (train.epochs < 1 || train.batch_size < 1) throw ConfigError("train.epochs and train.batch_size must be positive");
  if (faithfulness.steps < 1 || faithfulness.batch_size < 1) throw ConfigError("faithfulness steps and batch_size must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
  explainers.rollout.validate();
  explainers.gradient_rollout.validate();
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    c.schema_version = j.at("schema_version").get<int>();
    c.dataset = parse_dataset(j.at("dataset").get<std::string>());
    if (j.contains("data_root")) c.data_root = j["data_root"].get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j["cache_dir"].get<std::string>();
    for (const auto& b : j.at("backbones")) c.backbones.push_back(model::parse_family(b.get<std::string>()));
    for (const auto& m : j.at("methods")) c.methods.push_back(explain::parse_method(m.get<std::string>()));
    const std::string init = upper(j.value("init", "CHECKPOINT"));
    if (init == "RANDOM") c.init = model::InitMode::Random;
    else if (init != "CHECKPOINT") throw ConfigError("init must be \"checkpoint\" or \"random\"");
    if (j.contains("arch_overrides"))
      for (const auto& [fam, arch] : j["arch_overrides"].items())
        c.arch_overrides.emplace_back(model::parse_family(fam), model::arch_from_json(arch.dump()));

    const json t = j.value("train", json::object());
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.workers = t.value("workers", c.train.workers);
    c.val_fraction = t.value("val_fraction", c.val_fraction);
    c.train_per_class = t.value("per_class", 0);
    if (j.contains("eval_subset")) c.eval_per_class = parse_subset(j["eval_subset"]);

    const json f = j.value("faithfulness", json::object());
    c.faithfulness.steps = f.value("steps", c.faithfulness.steps);
    c.faithfulness.batch_size = f.value("batch_size", c.faithfulness.batch_size);
    if (f.contains("insertion_baseline")) c.faithfulness.insertion = baseline_from(f["insertion_baseline"]);
    if (f.contains("deletion_baseline")) c.faithfulness.deletion = baseline_from(f["deletion_baseline"]);

    const json e = j.value("explainers", json::object());
    if (e.contains("rollout")) c.explainers.rollout = rollout_from(e["rollout"], c.explainers.rollout);
    if (e.contains("gradient_rollout"))
      c.explainers.gradient_rollout = rollout_from(e["gradient_rollout"], c.explainers.gradient_rollout);

    c.gallery_samples = j.value("gallery_samples", c.gallery_samples);
    const json err = j.value("errors", json::object());
    c.error_cases = err.value("max_cases", c.error_cases);
    c.error_all_classes = err.value("all_classes", c.error_all_classes);
    c.seed = j.value("seed", uint64_t{0});
    c.train.seed = c.seed;
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.workers = j.value("workers", 0u);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["dataset"] = upper(dataset_name(c.dataset));
  if (!c.data_root.empty()) j["data_root"] = c.data_root.string();
  if (!c.cache_dir.empty()) j["cache_dir"] = c.cache_dir.string();
  j["backbones"] = json::array();
  for (auto f : c.backbones) j["backbones"].push_back(model::family_name(f));
  j["methods"] = json::array();
  for (auto m : c.methods) j["methods"].push_back(explain::method_name(m));
  j["init"] = c.init == model::InitMode::Random ? "random" : "checkpoint";
  if (!c.arch_overrides.empty()) {
    j["arch_overrides"] = json::object();
    for (const auto& [fam, arch] : c.arch_overrides) j["arch_overrides"][model::family_name(fam)] = json::parse(model::arch_to_json(arch));
  }
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"workers", c.train.workers},
                {"val_fraction", c.val_fraction},
                {"per_class", c.train_per_class}};
  j["eval_subset"] = c.eval_per_class == 0 ? json("ALL") : json(c.eval_per_class);
  j["faithfulness"] = {{"steps", c.faithfulness.steps},
                       {"batch_size", c.faithfulness.batch_size},
                       {"insertion_baseline", baseline_to(c.faithfulness.insertion)},
                       {"deletion_baseline", baseline_to(c.faithfulness.deletion)}};
  j["explainers"] = {{"rollout", rollout_to(c.explainers.rollout)},
                     {"gradient_rollout", rollout_to(c.explainers.gradient_rollout)}};
  j["gallery_samples"] = c.gallery_samples;
  j["errors"] = {{"max_cases", c.error_cases}, {"all_classes", c.error_all_classes}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["workers"] = c.workers;
  return j.dump(2);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = config_to_json(cfg);
  return fnv1a64(s.data(), s.size());
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = cfg.train.seed = *o.seed;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.subset) {
    if (upper(*o.subset) == "ALL") {
      cfg.eval_per_class = 0;
    } else {
      size_t used = 0;
      int n = 0;
      try {
        n = std::stoi(*o.subset, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != o.subset->size() || n < 1) throw ConfigError("--subset must be a positive per-class count or ALL");
      cfg.eval_per_class = n;
    }
  }
  cfg.validate();
}

}  // namespace xbench::runner
