#include "xbench/model/safetensors.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "xbench/common/error.hpp"

namespace xbench::model {
namespace {

float half_to_float(uint16_t h) {
  const uint32_t sign = (h & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1fu;
  uint32_t mant = h & 0x3ffu;
  uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

float bf16_to_float(uint16_t h) {
  const uint32_t bits = static_cast<uint32_t>(h) << 16;
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace

SafeTensors SafeTensors::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open weights file " + path.string());
  uint64_t header_len = 0;
  is.read(reinterpret_cast<char*>(&header_len), 8);
  if (!is || header_len > (1ULL << 30)) throw CheckpointError("corrupt safetensors header in " + path.string());
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  std::vector<char> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt safetensors header in " + path.string() + ": " + e.what());
  }
  SafeTensors out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) out.metadata_[m.key()] = m->get<std::string>();
      continue;
    }
    const std::string dtype = (*it)["dtype"].get<std::string>();
    StoredTensor t;
    t.shape = (*it)["shape"].get<std::vector<int64_t>>();
    const auto offs = (*it)["data_offsets"].get<std::vector<uint64_t>>();
    if (offs.size() != 2 || offs[1] < offs[0] || offs[1] > data.size()) {
      throw CheckpointError("bad data offsets for tensor " + it.key());
    }
    size_t numel = 1;
    for (auto d : t.shape) numel *= static_cast<size_t>(d);
    const char* src = data.data() + offs[0];
    const size_t bytes = offs[1] - offs[0];
    t.values.resize(numel);
    if (dtype == "F32" && bytes == numel * 4) {
      std::memcpy(t.values.data(), src, bytes);
    } else if ((dtype == "F16" || dtype == "BF16") && bytes == numel * 2) {
      for (size_t i = 0; i < numel; ++i) {
        uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        t.values[i] = dtype == "F16" ? half_to_float(h) : bf16_to_float(h);
      }
    } else if (dtype == "I64" || dtype == "I32" || dtype == "BOOL" || dtype == "U8") {
      continue;  // index buffers (e.g. relative_position_index) are recomputed
    } else {
      throw CheckpointError("unsupported dtype " + dtype + " for tensor " + it.key());
    }
    out.tensors_[it.key()] = std::move(t);
  }
  return out;
}

const StoredTensor& SafeTensors::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw CheckpointError("tensor not found: " + name);
  return it->second;
}

std::vector<std::string> SafeTensors::names() const {
  std::vector<std::string> n;
  for (const auto& [k, v] : tensors_) n.push_back(k);
  return n;
}

void SafeTensors::write(const std::filesystem::path& path) const {
  nlohmann::json j = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const uint64_t bytes = t.values.size() * 4;
    j[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata_.empty()) j["__metadata__"] = metadata_;
  std::string header = j.dump();
  while (header.size() % 8 != 0) header.push_back(' ');
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write weights file " + path.string());
  const uint64_t len = header.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors_) {
    os.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 4));
  }
  if (!os) throw Error("failed writing weights file " + path.string());
}

}  // namespace xbench::model
