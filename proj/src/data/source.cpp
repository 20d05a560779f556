#include "xbench/data/source.hpp"

#include "xbench/common/thread_pool.hpp"
#include "xbench/data/image.hpp"

namespace xbench::data {

SampleSource::SampleSource(const ImageCollection& collection, std::vector<SampleRef> refs,
                           size_t preload_limit, unsigned workers)
    : collection_(&collection), refs_(std::move(refs)) {
  if (refs_.size() <= preload_limit) {
    cache_.resize(refs_.size());
    parallel_for(refs_.size(), workers, [&](size_t i) {
      cache_[i] = preprocess(decode_image(collection_->root / refs_[i].source_path));
    });
  }
}

ImageTensor SampleSource::pixels(size_t i) const {
  if (!cache_.empty()) return cache_[i];
  return preprocess(decode_image(collection_->root / refs_[i].source_path));
}

}  // namespace xbench::data
