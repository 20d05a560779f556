#pragma once

#include <cstdint>
#include <filesystem>

namespace xbench::data {

// Procedural stand-ins that reproduce the on-disk layout of the two datasets
// (PBC: 8 class folders of 360x363 JPEGs; BUSI: 3 class folders of 500x500
// PNGs with `_mask` companions). Classes differ in colour and shape so that a
// small model can separate them; they are fixtures, not medical data.
void write_synthetic_pbc(const std::filesystem::path& root, int per_class, uint64_t seed);
void write_synthetic_busi(const std::filesystem::path& root, int per_class, uint64_t seed);

}  // namespace xbench::data
