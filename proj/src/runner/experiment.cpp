#include "xbench/runner/experiment.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <spdlog/spdlog.h>

#include "xbench/common/error.hpp"
#include "xbench/common/thread_pool.hpp"
#include "xbench/explain/export.hpp"

namespace xbench::runner {

namespace fs = std::filesystem;

namespace {

int argmax(std::span<const float> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::span<const float> row_of(const Matrix& m, int r) { return {m.row(r), static_cast<size_t>(m.cols())}; }

std::string stem_of(const std::string& source_path) {
  std::string s = fs::path(source_path).stem().string();
  std::replace_if(s.begin(), s.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_'; }, '_');
  return s;
}

std::string image_id(const data::SampleRef& r) { return fs::path(r.source_path).generic_string(); }

Matrix predict_all(const model::Adapter& a, const data::SampleSource& src, unsigned workers) {
  Matrix probs(static_cast<int>(src.size()), a.num_classes());
  parallel_for(src.size(), workers, [&](size_t i) {
    const auto p = model::predict_one(a, src.pixels(i));
    std::copy(p.begin(), p.end(), probs.row(static_cast<int>(i)));
  });
  return probs;
}

data::RgbImage map_overlay(const model::Adapter& a, const ImageTensor& img, int target, explain::Method m,
                           const explain::ExplainerSettings& s, const data::RgbImage& base) {
  const auto bundle = model::forward_with_capture(a, img, target);
  return explain::overlay(base, explain::explain(m, bundle, s).values);
}

}  // namespace

void write_metrics_csv(const fs::path& path, const std::vector<ClassificationRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "model,accuracy,weighted_f1,macro_f1,images,status\n";
  for (const auto& r : rows)
    os << fmt::format("{},{:.2f},{:.2f},{:.2f},{},{}\n", r.model, 100.0 * r.metrics.accuracy,
                      100.0 * r.metrics.weighted_f1, 100.0 * r.metrics.macro_f1, r.metrics.count, r.status);
}

ImageEvaluation evaluate_image(const model::Adapter& adapter, const ImageTensor& image, explain::Method method,
                               const explain::ExplainerSettings& settings, const FaithConfig& fc,
                               bool reverse_ordering) {
  ImageEvaluation ev;
  const auto probs = model::predict_one(adapter, image);
  ev.target_class = argmax(probs);
  ev.confidence = probs[static_cast<size_t>(ev.target_class)];
  ev.map = explain::explain(method, model::forward_with_capture(adapter, image, ev.target_class), settings);
  auto order = faith::rank_pixels(ev.map.values);
  if (reverse_ordering) order = faith::reversed(order);
  const faith::Oracle oracle = [&](std::span<const ImageTensor> batch) { return model::predict(adapter, batch); };
  const faith::CurveOptions opts{fc.steps, fc.batch_size};
  ev.insertion = faith::faithfulness_curve(oracle, image, order, ev.target_class, faith::Direction::INSERTION,
                                           fc.insertion, opts);
  ev.deletion = faith::faithfulness_curve(oracle, image, order, ev.target_class, faith::Direction::DELETION,
                                          fc.deletion, opts);
  return ev;
}

std::vector<ErrorCase> misclassification_report(const model::Adapter& adapter, explain::Method method,
                                                const explain::ExplainerSettings& settings,
                                                const data::SampleSource& validation, int max_cases,
                                                bool all_classes, const fs::path& out_dir, const Matrix* probs) {
  Matrix local;
  if (!probs) {
    local = predict_all(adapter, validation, 1);
    probs = &local;
  }
  std::vector<ErrorCase> cases;
  const auto& names = *validation.collection().class_names;
  const std::string tag = fmt::format("{}_{}", model::family_name(adapter.spec().family), explain::method_name(method));
  for (size_t i = 0; i < validation.size() && static_cast<int>(cases.size()) < max_cases; ++i) {
    const auto row = row_of(*probs, static_cast<int>(i));
    const int pred = argmax(row);
    const int truth = validation.label(i);
    if (pred == truth) continue;
    ErrorCase c{image_id(validation.ref(i)), truth, pred, row[static_cast<size_t>(pred)], {}};
    const ImageTensor img = validation.pixels(i);
    const data::RgbImage base = data::denormalize(img);
    std::vector<data::RgbImage> cells{base, map_overlay(adapter, img, pred, method, settings, base),
                                      map_overlay(adapter, img, truth, method, settings, base)};
    if (all_classes)
      for (int k = 0; k < adapter.num_classes(); ++k)
        if (k != pred && k != truth) cells.push_back(map_overlay(adapter, img, k, method, settings, base));
    fs::create_directories(out_dir);
    c.panel = out_dir / fmt::format("{}_{:03d}_{}_as_{}.png", tag, cases.size(), names[static_cast<size_t>(truth)],
                                    names[static_cast<size_t>(pred)]);
    data::write_png(c.panel, explain::tile(cells, 1, static_cast<int>(cells.size())));
    spdlog::info("misclassified {}: true {} predicted {} ({:.2f}%)", c.image, names[static_cast<size_t>(truth)],
                 names[static_cast<size_t>(pred)], 100.0 * c.confidence);
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<data::SampleRef> gallery_picks(const std::vector<data::SampleRef>& subset, int n) {
  std::map<int, std::vector<data::SampleRef>> by_class;
  for (const auto& r : subset) by_class[r.label].push_back(r);
  std::vector<data::SampleRef> out;
  for (size_t round = 0; static_cast<int>(out.size()) < n; ++round) {
    bool any = false;
    for (auto& [label, refs] : by_class) {
      if (round < refs.size() && static_cast<int>(out.size()) < n) {
        out.push_back(refs[round]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

Experiment::Experiment(ExperimentConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  fs::create_directories(cfg_.output_dir);
  const fs::path cfg_path = cfg_.output_dir / "config.json";
  std::ofstream(cfg_path) << config_to_json(cfg_) << "\n";
  record("config", cfg_path);
}

void Experiment::record(const std::string& kind, const fs::path& path) {
  const fs::path rel = path.lexically_relative(cfg_.output_dir);
  const fs::path p = rel.empty() || *rel.begin() == ".." ? path : rel;
  for (const auto& a : artifacts_)
    if (a.second == p) return;
  artifacts_.emplace_back(kind, p);
}

const data::ImageCollection& Experiment::collection() {
  if (!collection_) {
    const fs::path root = cfg_.resolved_data_root();
    collection_ = cfg_.dataset == DatasetKind::PBC ? data::load_pbc(root) : data::load_busi(root);
    spdlog::info("{}: {} images in {} classes ({} skipped)", dataset_name(cfg_.dataset), collection_->samples.size(),
                 collection_->num_classes(), collection_->report.skipped);
    for (const auto& w : collection_->report.warnings) spdlog::warn("{}", w);
    if (collection_->num_classes() == 1) spdlog::warn("dataset has a single class; metrics are trivially perfect");
  }
  return *collection_;
}

const data::DatasetSplit& Experiment::split() {
  if (!split_) {
    const fs::path path = cfg_.output_dir / "split.manifest";
    if (fs::exists(path)) {
      split_ = data::read_split_manifest(path, collection());
      spdlog::info("reusing {}", path.string());
    } else {
      split_ = data::split(collection(), cfg_.val_fraction, cfg_.seed);
      data::write_split_manifest(path, collection(), *split_);
    }
    record("split", path);
    spdlog::info("split: {} train / {} validation", split_->train.size(), split_->validation.size());
  }
  return *split_;
}

std::vector<data::SampleRef> Experiment::eval_subset() {
  if (cfg_.eval_per_class == 0) return split().validation;
  return data::sample_eval_subset(split().validation, *collection().class_names, cfg_.eval_per_class, cfg_.seed);
}

fs::path Experiment::weights_path(model::Family f) const {
  return cfg_.output_dir / "weights" /
         fmt::format("{}_{}_{}.wt", model::family_name(f), dataset_name(cfg_.dataset), cfg_.seed);
}

model::Adapter& Experiment::adapter(model::Family f) {
  auto it = adapters_.find(f);
  if (it != adapters_.end()) return *it->second;
  const fs::path wt = weights_path(f);
  const int classes = static_cast<int>(collection().num_classes());
  std::unique_ptr<model::Adapter> a;
  if (fs::exists(wt)) {
    a = std::make_unique<model::Adapter>(model::Adapter::load(wt));
    if (a->num_classes() != classes)
      throw ConfigError(fmt::format("{} has {} classes, dataset has {}", wt.string(), a->num_classes(), classes));
    spdlog::info("loaded {}", wt.string());
  } else {
    model::BuildOptions opts;
    opts.init = cfg_.init;
    opts.cache_dir = cfg_.cache_dir;
    opts.seed = cfg_.seed;
    opts.arch_override = cfg_.arch_for(f);
    a = std::make_unique<model::Adapter>(model::build_adapter(model::backbone_spec(f), classes, opts));
    auto train_refs = split().train;
    if (cfg_.train_per_class > 0)
      train_refs = data::sample_eval_subset(train_refs, *collection().class_names, cfg_.train_per_class, cfg_.seed);
    data::SampleSource train(collection(), train_refs);
    spdlog::info("fine-tuning {} on {} images", model::family_display(f), train.size());
    model::TrainConfig tc = cfg_.train;
    tc.seed = cfg_.seed;
    const auto history = model::fine_tune(*a, train, tc, [&](int epoch, size_t step, size_t steps, double loss) {
      if (step % 10 == 0 || step == steps) spdlog::info("  epoch {} step {}/{} loss {:.4f}", epoch, step, steps, loss);
    });
    fs::create_directories(wt.parent_path());
    a->save(wt, {{"dataset", dataset_name(cfg_.dataset)}, {"seed", std::to_string(cfg_.seed)}});
    nlohmann::json side = {{"family", model::family_name(f)},
                           {"dataset", dataset_name(cfg_.dataset)},
                           {"seed", cfg_.seed},
                           {"train_images", train.size()},
                           {"epochs", nlohmann::json::array()}};
    for (const auto& e : history.epochs)
      side["epochs"].push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.accuracy}});
    fs::path metrics = wt;
    metrics.replace_extension(".metrics.json");
    std::ofstream(metrics) << side.dump(2) << "\n";
    record("weights", wt);
    record("weights_metrics", metrics);
  }
  return *(adapters_[f] = std::move(a));
}

const Matrix& Experiment::validation_probs(model::Family f) {
  auto it = val_probs_.find(f);
  if (it != val_probs_.end()) return it->second;
  data::SampleSource val(collection(), split().validation);
  return val_probs_[f] = predict_all(adapter(f), val, cfg_.workers);
}

std::vector<ClassificationRow> Experiment::run_classification() {
  std::vector<ClassificationRow> rows;
  std::vector<int> truth;
  for (const auto& r : split().validation) truth.push_back(r.label);
  for (auto f : cfg_.backbones) {
    ClassificationRow row;
    row.model = model::family_name(f);
    try {
      const Matrix& probs = validation_probs(f);
      std::vector<int> pred;
      for (int i = 0; i < probs.rows(); ++i) pred.push_back(argmax(row_of(probs, i)));
      row.metrics = classification_metrics(truth, pred, static_cast<int>(collection().num_classes()));
      row.weights = weights_path(f);
      // Extend the training sidecar with the validation numbers.
      fs::path side = row.weights;
      side.replace_extension(".metrics.json");
      nlohmann::json j = nlohmann::json::object();
      if (fs::exists(side)) j = nlohmann::json::parse(std::ifstream(side));
      j["validation"] = {{"accuracy", row.metrics.accuracy},
                         {"weighted_f1", row.metrics.weighted_f1},
                         {"macro_f1", row.metrics.macro_f1},
                         {"images", row.metrics.count},
                         {"confusion", row.metrics.confusion}};
      std::ofstream(side) << j.dump(2) << "\n";
      record("weights_metrics", side);
      spdlog::info("{}: accuracy {:.2f}% weighted F1 {:.2f}%", row.model, 100 * row.metrics.accuracy,
                   100 * row.metrics.weighted_f1);
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
      std::replace(row.status.begin(), row.status.end(), ',', ';');
      std::replace(row.status.begin(), row.status.end(), '\n', ' ');
      spdlog::error("{} classification failed: {}", row.model, e.what());
    }
    rows.push_back(std::move(row));
  }
  const fs::path out = cfg_.output_dir / "metrics.csv";
  write_metrics_csv(out, rows);
  record("metrics", out);
  return rows;
}

FaithfulnessResult Experiment::run_faithfulness() {
  FaithfulnessResult res;
  const auto subset = eval_subset();
  data::SampleSource src(collection(), subset);
  spdlog::info("faithfulness on {} images", src.size());
  for (auto f : cfg_.backbones) {
    const model::Adapter& a = adapter(f);
    for (auto m : cfg_.methods) {
      std::vector<std::optional<ImageEvaluation>> evals(src.size());
      std::mutex log_mu;
      parallel_for(src.size(), cfg_.workers, [&](size_t i) {
        try {
          evals[i] = evaluate_image(a, src.pixels(i), m, cfg_.explainers, cfg_.faithfulness);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(log_mu);
          spdlog::warn("skipping {} for {} / {}: {}", image_id(src.ref(i)), model::family_name(f),
                       explain::method_name(m), e.what());
        }
      });
      faith::AucRow row{std::string(model::family_name(f)), explain::method_name(m), 0.0, 0.0, 0, 0};
      std::vector<faith::FaithfulnessCurve> ins, del;
      for (size_t i = 0; i < evals.size(); ++i) {
        if (!evals[i]) {
          ++row.skipped;
          continue;
        }
        ins.push_back(evals[i]->insertion);
        del.push_back(evals[i]->deletion);
        res.curves.push_back({image_id(src.ref(i)), row.model, row.method, evals[i]->insertion});
        res.curves.push_back({image_id(src.ref(i)), row.model, row.method, evals[i]->deletion});
      }
      row.images = ins.size();
      if (!ins.empty()) {
        const auto ai = faith::aggregate_curves(ins);
        const auto ad = faith::aggregate_curves(del);
        row.insertion = ai.mean_auc;
        row.deletion = ad.mean_auc;
        res.mean_curves.push_back({"mean", row.model, row.method,
                                   {ai.fractions, ai.mean_probabilities, faith::Direction::INSERTION, ai.auc_of_mean}});
        res.mean_curves.push_back({"mean", row.model, row.method,
                                   {ad.fractions, ad.mean_probabilities, faith::Direction::DELETION, ad.auc_of_mean}});
      }
      spdlog::info("{} {}: insertion {:.3f} deletion {:.3f} over {} images ({} skipped)", row.model, row.method,
                   row.insertion, row.deletion, row.images, row.skipped);
      res.auc.push_back(row);
    }
  }
  const fs::path auc = cfg_.output_dir / "auc.csv", curves = cfg_.output_dir / "curves.csv",
                 mean = cfg_.output_dir / "curves_mean.csv";
  faith::write_auc_csv(auc, res.auc);
  faith::write_curves_csv(curves, res.curves);
  faith::write_curves_csv(mean, res.mean_curves);
  record("auc", auc);
  record("curves", curves);
  record("curves_mean", mean);
  return res;
}

std::vector<fs::path> Experiment::render_gallery(const std::vector<data::SampleRef>& samples) {
  std::vector<fs::path> out;
  if (samples.empty()) return out;
  data::SampleSource src(collection(), samples);
  const fs::path dir = cfg_.output_dir / "gallery";
  fs::create_directories(dir);
  const int cols = 1 + static_cast<int>(cfg_.backbones.size());
  for (auto m : cfg_.methods) {
    std::vector<data::RgbImage> cells(src.size() * static_cast<size_t>(cols));
    for (size_t i = 0; i < src.size(); ++i) {
      const ImageTensor img = src.pixels(i);
      const data::RgbImage base = data::denormalize(img);
      cells[i * static_cast<size_t>(cols)] = base;
      for (size_t b = 0; b < cfg_.backbones.size(); ++b) {
        const model::Adapter& a = adapter(cfg_.backbones[b]);
        const int pred = argmax(model::predict_one(a, img));
        cells[i * static_cast<size_t>(cols) + 1 + b] = map_overlay(a, img, pred, m, cfg_.explainers, base);
      }
    }
    const fs::path p = dir / fmt::format("{}.png", explain::method_name(m));
    data::write_png(p, explain::tile(cells, static_cast<int>(src.size()), cols));
    record("gallery", p);
    out.push_back(p);
  }
  // Row order of the grids.
  const fs::path legend = dir / "rows.txt";
  std::ofstream os(legend);
  os << "columns\tinput";
  for (auto f : cfg_.backbones) os << "\t" << model::family_name(f);
  os << "\n";
  for (size_t i = 0; i < src.size(); ++i)
    os << "row" << i << "\t" << image_id(src.ref(i)) << "\t" << (*collection().class_names)[static_cast<size_t>(src.label(i))] << "\n";
  record("gallery", legend);
  return out;
}

std::vector<ErrorCase> Experiment::run_error_analysis() {
  std::vector<ErrorCase> all;
  data::SampleSource val(collection(), split().validation, 0);
  const fs::path dir = cfg_.output_dir / "errors";
  for (auto f : cfg_.backbones) {
    const Matrix& probs = validation_probs(f);
    for (auto m : cfg_.methods) {
      auto cases = misclassification_report(adapter(f), m, cfg_.explainers, val, cfg_.error_cases,
                                            cfg_.error_all_classes, dir, &probs);
      for (const auto& c : cases) record("error_panel", c.panel);
      all.insert(all.end(), cases.begin(), cases.end());
    }
  }
  fs::create_directories(dir);
  const fs::path list = dir / "cases.csv";
  std::ofstream os(list);
  os << "image,true_class,predicted_class,confidence,panel\n";
  const auto& names = *collection().class_names;
  for (const auto& c : all)
    os << fmt::format("{},{},{},{:.4f},{}\n", c.image, names[static_cast<size_t>(c.true_class)],
                      names[static_cast<size_t>(c.predicted_class)], c.confidence,
                      c.panel.lexically_relative(cfg_.output_dir).generic_string());
  record("error_cases", list);
  return all;
}

ReportBundle Experiment::run_all() {
  ReportBundle rb;
  auto stage = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      rb.failures.push_back(fmt::format("{}: {}", name, e.what()));
      spdlog::error("stage {} failed: {}", name, e.what());
    }
  };
  stage("classification", [&] { rb.classification = run_classification(); });
  stage("faithfulness", [&] { rb.faithfulness = run_faithfulness(); });
  stage("gallery", [&] { rb.gallery = render_gallery(gallery_picks(eval_subset(), cfg_.gallery_samples)); });
  stage("errors", [&] { rb.error_cases = run_error_analysis(); });
  if (!rb.failures.empty()) {
    const fs::path p = cfg_.output_dir / "failures.txt";
    std::ofstream os(p);
    for (const auto& f : rb.failures) os << f << "\n";
    record("failures", p);
  }
  rb.manifest = write_manifest();
  return rb;
}

fs::path Experiment::write_manifest() {
  const fs::path p = cfg_.output_dir / "manifest.txt";
  std::ofstream os(p);
  os << "# xbench run manifest\n";
  os << fmt::format("config_hash\t{:016x}\n", config_hash(cfg_));
  os << "seed\t" << cfg_.seed << "\n";
  os << "dataset\t" << dataset_name(cfg_.dataset) << "\n";
  if (split_) {
    os << fmt::format("split_hash\t{:016x}\n", data::manifest_hash(split_->validation));
    os << fmt::format("eval_subset_hash\t{:016x}\n", data::manifest_hash(eval_subset()));
  }
  for (const auto& [kind, path] : artifacts_) os << "artifact\t" << kind << "\t" << path.generic_string() << "\n";
  return p;
}

}  // namespace xbench::runner
