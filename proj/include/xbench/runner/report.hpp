#pragma once

#include <filesystem>
#include <string>

namespace xbench::runner {

// Classification and AUC tables for a finished run directory, laid out like
// the published tables. Also written to <run>/report.txt.
std::string render_report(const std::filesystem::path& run_dir);

}  // namespace xbench::runner
