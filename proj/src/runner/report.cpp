#include "xbench/runner/report.hpp"

#include <fmt/format.h>
#include <fstream>
#include <sstream>
#include <vector>

#include "xbench/common/error.hpp"
#include "xbench/faith/faithfulness.hpp"

namespace xbench::runner {

namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

std::string render_report(const fs::path& run) {
  if (!fs::is_directory(run)) throw ConfigError("run directory not found: " + run.string());
  std::string out;
  const fs::path metrics = run / "metrics.csv", auc = run / "auc.csv";
  if (!fs::exists(metrics) && !fs::exists(auc)) throw ConfigError("no metrics.csv or auc.csv in " + run.string());

  if (fs::exists(metrics)) {
    const auto rows = read_csv(metrics);
    out += "Classification (validation split)\n";
    out += fmt::format("{:<10} | {:>12} | {:>8} | {:>8} | {:>6} | {}\n", "Model", "Accuracy (%)", "F1 (%)",
                       "macroF1", "images", "status");
    for (size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 6) continue;
      out += fmt::format("{:<10} | {:>12} | {:>8} | {:>8} | {:>6} | {}\n", r[0], r[1], r[2], r[3], r[4], r[5]);
    }
    out += "\n";
  }
  if (fs::exists(auc)) {
    const auto rows = faith::read_auc_csv(auc);
    out += "Deletion (lower is better) and Insertion (higher is better) AUC\n";
    out += faith::auc_table_text(rows);
    size_t skipped = 0;
    for (const auto& r : rows) skipped += r.skipped;
    if (skipped) out += fmt::format("{} image explanations were skipped (see the run log)\n", skipped);
  }
  if (fs::exists(run / "failures.txt")) {
    std::ifstream is(run / "failures.txt");
    out += "\nFailed stages:\n" + std::string(std::istreambuf_iterator<char>(is), {});
  }
  std::ofstream(run / "report.txt") << out;
  // Keep the manifest complete.
  const fs::path manifest = run / "manifest.txt";
  if (fs::exists(manifest)) {
    std::ifstream is(manifest);
    const std::string text(std::istreambuf_iterator<char>(is), {});
    if (text.find("artifact\treport\treport.txt") == std::string::npos)
      std::ofstream(manifest, std::ios::app) << "artifact\treport\treport.txt\n";
  }
  return out;
}

}  // namespace xbench::runner
