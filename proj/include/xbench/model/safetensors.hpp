#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace xbench::model {

struct StoredTensor {
  std::vector<int64_t> shape;
  std::vector<float> values;  // widened to f32
};

// Reader/writer for the safetensors container: u64 little-endian header
// length, JSON header, raw little-endian tensor bytes. F32, F16 and BF16
// tensors are readable; tensors are always written as F32.
class SafeTensors {
 public:
  static SafeTensors read(const std::filesystem::path& path);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const StoredTensor& at(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  void put(const std::string& name, StoredTensor tensor) { tensors_[name] = std::move(tensor); }
  void set_metadata(const std::string& key, const std::string& value) { metadata_[key] = value; }
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, StoredTensor> tensors_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace xbench::model
