#include "xbench/faith/faithfulness.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "xbench/common/error.hpp"

namespace xbench::faith {

const char* direction_name(Direction d) { return d == Direction::INSERTION ? "INSERTION" : "DELETION"; }

PixelOrdering rank_pixels(const Matrix& map) {
  const auto v = map.values();
  for (float x : v)
    if (!std::isfinite(x)) throw Error("cannot rank a saliency map with non-finite values");
  PixelOrdering o{map.rows(), map.cols(), std::vector<int>(v.size())};
  std::iota(o.indices.begin(), o.indices.end(), 0);
  std::stable_sort(o.indices.begin(), o.indices.end(),
                   [&](int a, int b) { return v[static_cast<size_t>(a)] > v[static_cast<size_t>(b)]; });
  return o;
}

PixelOrdering reversed(const PixelOrdering& ordering) {
  PixelOrdering r = ordering;
  std::reverse(r.indices.begin(), r.indices.end());
  return r;
}

void BaselineSpec::validate() const {
  if (kind == BaselineKind::BLUR && !(blur_sigma > 0.0)) throw ConfigError("blur baseline needs sigma > 0");
}

std::string BaselineSpec::describe() const {
  return kind == BaselineKind::BLANK ? std::string("BLANK") : fmt::format("BLUR(sigma={})", blur_sigma);
}

namespace {

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<float> blur_plane(const float* src, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += k[static_cast<size_t>(d + r)] * src[y * w + mirror(x + d, w)];
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  std::vector<float> out(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += k[static_cast<size_t>(d + r)] * tmp[static_cast<size_t>(mirror(y + d, h)) * w + x];
      out[static_cast<size_t>(y) * w + x] = static_cast<float>(s);
    }
  return out;
}

void check_ordering(const ImageTensor& image, const PixelOrdering& ordering) {
  if (ordering.height != image.height || ordering.width != image.width ||
      ordering.indices.size() != static_cast<size_t>(image.height) * image.width)
    throw ShapeError("pixel ordering does not match the image size");
}

// Copies pixels ordering[from, to) from `src` into `dst` on every channel.
void copy_pixels(const ImageTensor& src, ImageTensor& dst, const PixelOrdering& ordering, size_t from, size_t to) {
  const size_t plane = static_cast<size_t>(src.height) * src.width;
  for (int c = 0; c < src.channels; ++c) {
    const float* s = src.data.data() + c * plane;
    float* d = dst.data.data() + c * plane;
    for (size_t k = from; k < to; ++k) {
      const auto p = static_cast<size_t>(ordering.indices[k]);
      d[p] = s[p];
    }
  }
}

}  // namespace

ImageTensor make_baseline(const ImageTensor& image, const BaselineSpec& spec) {
  spec.validate();
  if (spec.kind == BaselineKind::BLANK) return ImageTensor(image.channels, image.height, image.width, 0.0f);
  const int r = static_cast<int>(std::ceil(3.0 * spec.blur_sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double sum = 0.0;
  for (int d = -r; d <= r; ++d) sum += k[static_cast<size_t>(d + r)] = std::exp(-0.5 * d * d / (spec.blur_sigma * spec.blur_sigma));
  for (auto& x : k) x /= sum;
  ImageTensor out(image.channels, image.height, image.width);
  const size_t plane = static_cast<size_t>(image.height) * image.width;
  for (int c = 0; c < image.channels; ++c) {
    const auto b = blur_plane(image.data.data() + c * plane, image.height, image.width, k);
    std::copy(b.begin(), b.end(), out.data.begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return out;
}

std::vector<size_t> step_counts(size_t pixels, int steps) {
  if (steps < 1) throw ConfigError("faithfulness needs at least one step");
  if (static_cast<size_t>(steps) > pixels)
    throw ConfigError(fmt::format("{} steps exceed the {} pixels of the image", steps, pixels));
  std::vector<size_t> c(static_cast<size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) c[static_cast<size_t>(k)] = static_cast<size_t>(k) * pixels / static_cast<size_t>(steps);
  return c;
}

std::vector<ImageTensor> perturb_sequence(const ImageTensor& image, const PixelOrdering& ordering, Direction direction,
                                          const BaselineSpec& baseline, int steps) {
  check_ordering(image, ordering);
  const auto counts = step_counts(ordering.indices.size(), steps);
  const ImageTensor base = make_baseline(image, baseline);
  const ImageTensor& from = direction == Direction::INSERTION ? image : base;
  ImageTensor cur = direction == Direction::INSERTION ? base : image;
  std::vector<ImageTensor> seq;
  seq.reserve(counts.size());
  seq.push_back(cur);
  for (size_t k = 1; k < counts.size(); ++k) {
    copy_pixels(from, cur, ordering, counts[k - 1], counts[k]);
    seq.push_back(cur);
  }
  return seq;
}

double trapezoid_auc(std::span<const double> f, std::span<const double> p) {
  if (f.size() != p.size() || f.size() < 2) throw ShapeError("a curve needs at least two matching points");
  long double acc = 0.0L;
  for (size_t i = 1; i < f.size(); ++i)
    acc += (static_cast<long double>(f[i]) - f[i - 1]) * (static_cast<long double>(p[i]) + p[i - 1]);
  return static_cast<double>(acc / 2.0L);
}

FaithfulnessCurve faithfulness_curve(const Oracle& predict, const ImageTensor& image, const PixelOrdering& ordering,
                                     int target_class, Direction direction, const BaselineSpec& baseline,
                                     const CurveOptions& opts) {
  check_ordering(image, ordering);
  const auto counts = step_counts(ordering.indices.size(), opts.steps);
  const ImageTensor base = make_baseline(image, baseline);
  const ImageTensor& from = direction == Direction::INSERTION ? image : base;
  ImageTensor cur = direction == Direction::INSERTION ? base : image;

  FaithfulnessCurve curve;
  curve.direction = direction;
  curve.fractions.resize(counts.size());
  for (size_t k = 0; k < counts.size(); ++k) curve.fractions[k] = static_cast<double>(k) / opts.steps;
  curve.probabilities.reserve(counts.size());

  const size_t batch = static_cast<size_t>(std::max(1, opts.batch_size));
  std::vector<ImageTensor> pending;
  size_t first = 0;
  auto flush = [&] {
    if (pending.empty()) return;
    Matrix probs;
    try {
      probs = predict(pending);
    } catch (const std::exception& e) {
      throw Error(fmt::format("prediction failed at {} step {}: {}", direction_name(direction), first, e.what()));
    }
    if (probs.rows() != static_cast<int>(pending.size()) || target_class < 0 || target_class >= probs.cols())
      throw ShapeError(fmt::format("oracle returned {}x{} for {} images, target class {}", probs.rows(), probs.cols(),
                                   pending.size(), target_class));
    for (int r = 0; r < probs.rows(); ++r) curve.probabilities.push_back(probs(r, target_class));
    first += pending.size();
    pending.clear();
  };
  for (size_t k = 0; k < counts.size(); ++k) {
    if (k > 0) copy_pixels(from, cur, ordering, counts[k - 1], counts[k]);
    pending.push_back(cur);
    if (pending.size() == batch) flush();
  }
  flush();
  curve.auc = trapezoid_auc(curve.fractions, curve.probabilities);
  return curve;
}

FaithfulnessCurve faithfulness_curve(const Oracle& predict, const ImageTensor& image, const explain::SaliencyMap& map,
                                     int target_class, Direction direction, const BaselineSpec& baseline,
                                     const CurveOptions& opts) {
  return faithfulness_curve(predict, image, rank_pixels(map.values), target_class, direction, baseline, opts);
}

CurveAggregate aggregate_curves(std::span<const FaithfulnessCurve> curves) {
  CurveAggregate a;
  if (curves.empty()) return a;
  a.fractions = curves.front().fractions;
  a.mean_probabilities.assign(a.fractions.size(), 0.0);
  for (const auto& c : curves) {
    if (c.fractions != a.fractions) throw ShapeError("curves use different fraction grids");
    for (size_t i = 0; i < a.fractions.size(); ++i) a.mean_probabilities[i] += c.probabilities[i];
    a.mean_auc += c.auc;
  }
  const double n = static_cast<double>(curves.size());
  for (auto& p : a.mean_probabilities) p /= n;
  a.mean_auc /= n;
  a.auc_of_mean = trapezoid_auc(a.fractions, a.mean_probabilities);
  a.count = curves.size();
  return a;
}

void write_curves_csv(const std::filesystem::path& path, std::span<const CurveRecord> records) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "fraction,probability,image_id,model,method,direction\n";
  for (const auto& r : records)
    for (size_t i = 0; i < r.curve.fractions.size(); ++i)
      os << fmt::format("{:.6f},{:.9g},{},{},{},{}\n", r.curve.fractions[i], r.curve.probabilities[i], r.image_id,
                        r.model, r.method, direction_name(r.curve.direction));
}

void write_auc_csv(const std::filesystem::path& path, std::span<const AucRow> rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "model,method,insertion_auc,deletion_auc,images,skipped\n";
  for (const auto& r : rows)
    os << fmt::format("{},{},{:.6f},{:.6f},{},{}\n", r.model, r.method, r.insertion, r.deletion, r.images, r.skipped);
}

std::vector<AucRow> read_auc_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<AucRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    AucRow r;
    std::string f;
    std::getline(ss, r.model, ',');
    std::getline(ss, r.method, ',');
    std::getline(ss, f, ',');
    r.insertion = std::stod(f);
    std::getline(ss, f, ',');
    r.deletion = std::stod(f);
    std::getline(ss, f, ',');
    r.images = std::stoul(f);
    std::getline(ss, f, ',');
    r.skipped = std::stoul(f);
    rows.push_back(r);
  }
  return rows;
}

std::string auc_table_text(std::span<const AucRow> rows) {
  std::vector<std::string> models, methods;
  std::map<std::pair<std::string, std::string>, const AucRow*> cell;
  for (const auto& r : rows) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    cell[{r.method, r.model}] = &r;
  }
  std::string out = fmt::format("{:<14}", "Method");
  for (const auto& m : models) out += fmt::format(" | {:^17}", m);
  out += "\n" + fmt::format("{:<14}", "");
  for (size_t i = 0; i < models.size(); ++i) out += fmt::format(" | {:>8} {:>8}", "Del", "Ins");
  out += "\n";
  for (const auto& me : methods) {
    out += fmt::format("{:<14}", me);
    for (const auto& mo : models) {
      auto it = cell.find({me, mo});
      if (it == cell.end()) out += fmt::format(" | {:>8} {:>8}", "-", "-");
      else out += fmt::format(" | {:>8.2f} {:>8.2f}", it->second->deletion, it->second->insertion);
    }
    out += "\n";
  }
  return out;
}

}  // namespace xbench::faith
