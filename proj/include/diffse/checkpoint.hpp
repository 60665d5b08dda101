#pragma once

// Flat binary checkpoint container shared by every trainable model.
//
//   bytes 0..7   magic "DFSECKPT"
//   u32          format version (1)
//   u32 + bytes  architecture config, "key=value\n" lines (UTF-8)
//   u32          tensor count
//   index block  per tensor: u32 name length, name bytes, u32 rank,
//                u32 dims[rank], u64 element offset into the data block
//   data block   all tensors in declaration order, row-major float32
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffse/nn.hpp"

namespace diffse {

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<CheckpointTensor> tensors;

  /// Throws std::invalid_argument when the key is absent.
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  void set(const std::string& key, std::string value);
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename S>
void store_params(const nn::ParamSet<S>& params, Checkpoint& checkpoint) {
  for (const auto& t : params.tensors()) {
    CheckpointTensor ct;
    ct.name = t.name;
    ct.shape = {std::uint32_t(t.value.rows()), std::uint32_t(t.value.cols())};
    ct.data.reserve(std::size_t(t.value.size()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) ct.data.push_back(float(t.value(r, c)));
    checkpoint.tensors.push_back(std::move(ct));
  }
}

/// Copies tensors into `params`; names, order and shapes must match.
template <typename S>
void restore_params(const Checkpoint& checkpoint, nn::ParamSet<S>& params) {
  auto& ts = params.tensors();
  if (checkpoint.tensors.size() != ts.size()) {
    throw std::invalid_argument(fmt::format("checkpoint holds {} tensors, model expects {}", checkpoint.tensors.size(), ts.size()));
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const CheckpointTensor& ct = checkpoint.tensors[i];
    auto& t = ts[i];
    if (ct.name != t.name || ct.shape.size() != 2 || ct.shape[0] != std::uint32_t(t.value.rows()) ||
        ct.shape[1] != std::uint32_t(t.value.cols())) {
      throw std::invalid_argument(fmt::format("checkpoint tensor '{}' does not match model tensor '{}'", ct.name, t.name));
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = S(ct.data[k++]);
  }
}

}  // namespace diffse
