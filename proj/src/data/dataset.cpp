#include "xbench/data/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "xbench/common/error.hpp"
#include "xbench/common/rng.hpp"
#include "xbench/data/image.hpp"

namespace fs = std::filesystem;

namespace xbench::data {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
  const std::string e = lower(p.extension().string());
  return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

void require_directory(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw ConfigError("dataset root is not a directory: " + root.string());
  }
}

// Lists image files of one class directory in sorted order, applying the
// mask filter, and optionally verifying they decode.
void scan_class(const fs::path& root, const std::string& dir_name, int label,
                std::initializer_list<const char*> exts, bool skip_masks,
                const LoadOptions& opts, ImageCollection& out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root / dir_name)) {
    if (!entry.is_regular_file() || !has_extension(entry.path(), exts)) continue;
    if (skip_masks && entry.path().filename().string().find("_mask") != std::string::npos) {
      continue;
    }
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    ++out.report.scanned;
    if (opts.verify) {
      try {
        (void)decode_image(f);
      } catch (const DataError& e) {
        ++out.report.skipped;
        out.report.warnings.emplace_back(e.what());
        spdlog::warn("skipping unreadable image: {}", f.string());
        continue;
      }
    }
    ++out.report.loaded;
    out.samples.push_back({fs::relative(f, root).generic_string(), label});
  }
}

}  // namespace

ImageCollection load_pbc(const fs::path& root, const LoadOptions& opts) {
  require_directory(root);
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  if (classes.empty()) throw DataError("no classes found under " + root.string());
  std::sort(classes.begin(), classes.end(),
            [](const std::string& a, const std::string& b) { return lower(a) < lower(b); });
  ImageCollection out;
  out.root = root;
  for (size_t c = 0; c < classes.size(); ++c) {
    scan_class(root, classes[c], static_cast<int>(c), {".jpg", ".jpeg"}, false, opts, out);
  }
  out.class_names = std::make_shared<const std::vector<std::string>>(std::move(classes));
  return out;
}

const std::vector<std::string>& busi_class_names() {
  static const std::vector<std::string> names{"benign", "malignant", "normal"};
  return names;
}

ImageCollection load_busi(const fs::path& root, const LoadOptions& opts) {
  require_directory(root);
  const auto& names = busi_class_names();
  ImageCollection out;
  out.root = root;
  out.class_names = std::make_shared<const std::vector<std::string>>(names);
  bool any = false;
  for (size_t c = 0; c < names.size(); ++c) {
    if (!fs::is_directory(root / names[c])) {
      spdlog::warn("BUSI class directory missing: {}", (root / names[c]).string());
      continue;
    }
    any = true;
    scan_class(root, names[c], static_cast<int>(c), {".png"}, true, opts, out);
  }
  if (!any) throw DataError("no classes found under " + root.string());
  return out;
}

ImageSample load_sample(const ImageCollection& collection, const SampleRef& ref) {
  ImageSample s;
  s.pixels = preprocess(decode_image(collection.root / ref.source_path));
  s.label = ref.label;
  s.class_names = collection.class_names;
  s.source_path = ref.source_path;
  return s;
}

DatasetSplit split(const ImageCollection& collection, double val_fraction, uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1)");
  }
  const size_t k = collection.num_classes();
  std::vector<std::vector<size_t>> by_class(k);
  for (size_t i = 0; i < collection.samples.size(); ++i) {
    by_class.at(collection.samples[i].label).push_back(i);
  }
  for (size_t c = 0; c < k; ++c) {
    if (!by_class[c].empty() && by_class[c].size() < 2) {
      throw DataError("class '" + (*collection.class_names)[c] +
                      "' has fewer than 2 samples; cannot split");
    }
  }

  // Largest-remainder allocation of the global validation count.
  const size_t total = static_cast<size_t>(
      std::llround(val_fraction * static_cast<double>(collection.samples.size())));
  std::vector<size_t> n_val(k);
  std::vector<std::pair<double, size_t>> remainders;
  size_t assigned = 0;
  for (size_t c = 0; c < k; ++c) {
    const double exact = val_fraction * static_cast<double>(by_class[c].size());
    n_val[c] = static_cast<size_t>(std::floor(exact));
    assigned += n_val[c];
    if (!by_class[c].empty()) remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t r = 0; r < remainders.size() && assigned < total; ++r) {
    ++n_val[remainders[r].second];
    ++assigned;
  }

  std::vector<bool> is_val(collection.samples.size(), false);
  for (size_t c = 0; c < k; ++c) {
    std::vector<size_t> idx = by_class[c];
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + c + 1);
    rng.shuffle(idx);
    for (size_t j = 0; j < n_val[c]; ++j) is_val[idx[j]] = true;
  }
  DatasetSplit out;
  out.seed = seed;
  out.val_fraction = val_fraction;
  out.stratified = true;
  for (size_t i = 0; i < collection.samples.size(); ++i) {
    (is_val[i] ? out.validation : out.train).push_back(collection.samples[i]);
  }
  return out;
}

std::vector<SampleRef> sample_eval_subset(const std::vector<SampleRef>& validation,
                                          const std::vector<std::string>& class_names,
                                          int per_class, uint64_t seed) {
  if (per_class < 0) throw ConfigError("per_class must be non-negative");
  std::vector<SampleRef> out;
  if (per_class == 0) return out;
  std::vector<std::vector<size_t>> by_class(class_names.size());
  for (size_t i = 0; i < validation.size(); ++i) by_class.at(validation[i].label).push_back(i);
  for (size_t c = 0; c < class_names.size(); ++c) {
    if (by_class[c].size() < static_cast<size_t>(per_class)) {
      throw DataError("class '" + class_names[c] + "' has only " +
                      std::to_string(by_class[c].size()) + " validation samples, need " +
                      std::to_string(per_class));
    }
  }
  for (size_t c = 0; c < class_names.size(); ++c) {
    std::vector<size_t> idx = by_class[c];
    Rng rng(seed * 0xD1B54A32D192ED03ULL + c + 1);
    rng.shuffle(idx);
    idx.resize(static_cast<size_t>(per_class));
    std::sort(idx.begin(), idx.end());
    for (size_t i : idx) out.push_back(validation[i]);
  }
  return out;
}

std::string split_manifest_text(const ImageCollection& collection, const DatasetSplit& split) {
  std::unordered_map<std::string, bool> val;
  for (const auto& s : split.validation) val[s.source_path] = true;
  for (const auto& s : split.train) val[s.source_path] = false;
  std::ostringstream os;
  for (const auto& s : collection.samples) {
    auto it = val.find(s.source_path);
    if (it == val.end()) continue;
    os << s.source_path << '\t' << (it->second ? "val" : "train") << '\n';
  }
  return os.str();
}

void write_split_manifest(const fs::path& path, const ImageCollection& collection,
                          const DatasetSplit& split) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write manifest " + path.string());
  os << split_manifest_text(collection, split);
}

DatasetSplit read_split_manifest(const fs::path& path, const ImageCollection& collection) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read split manifest " + path.string());
  std::unordered_map<std::string, std::string> role;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing tab");
    }
    const std::string r = line.substr(tab + 1);
    if (r != "train" && r != "val") {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad role '" + r + "'");
    }
    role[line.substr(0, tab)] = r;
  }
  DatasetSplit out;
  out.stratified = true;
  size_t matched = 0;
  for (const auto& s : collection.samples) {
    auto it = role.find(s.source_path);
    if (it == role.end()) continue;
    ++matched;
    (it->second == "val" ? out.validation : out.train).push_back(s);
  }
  if (matched != role.size()) {
    throw DataError("split manifest lists " + std::to_string(role.size() - matched) +
                    " paths not present in the collection");
  }
  const size_t n = out.train.size() + out.validation.size();
  out.val_fraction = n ? static_cast<double>(out.validation.size()) / n : 0.0;
  return out;
}

uint64_t manifest_hash(const std::vector<SampleRef>& samples) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : samples) {
    h = fnv1a64(s.source_path.data(), s.source_path.size(), h);
    h = fnv1a64(&s.label, sizeof(s.label), h);
  }
  return h;
}

}  // namespace xbench::data
