#pragma once

#include <vector>

#include "xbench/data/dataset.hpp"

namespace xbench::data {

// Indexed access to preprocessed images of a sample list. Small lists are
// decoded once up front; larger ones are decoded on every access.
class SampleSource {
 public:
  SampleSource(const ImageCollection& collection, std::vector<SampleRef> refs,
               size_t preload_limit = 2048, unsigned workers = 0);

  size_t size() const { return refs_.size(); }
  const SampleRef& ref(size_t i) const { return refs_[i]; }
  int label(size_t i) const { return refs_[i].label; }
  ImageTensor pixels(size_t i) const;
  const ImageCollection& collection() const { return *collection_; }

 private:
  const ImageCollection* collection_;
  std::vector<SampleRef> refs_;
  std::vector<ImageTensor> cache_;
};

}  // namespace xbench::data
