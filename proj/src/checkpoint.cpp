#include "diffse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace diffse {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::invalid_argument(fmt::format("{}: truncated checkpoint", path.string()));
  }
  return v;
}

std::string take_string(std::istream& in, std::uint32_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw std::invalid_argument(fmt::format("{}: truncated checkpoint", path.string()));
  return s;
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw std::invalid_argument(fmt::format("checkpoint config has no key '{}'", key));
}

int Checkpoint::get_int(const std::string& key) const { return std::stoi(get(key)); }
double Checkpoint::get_double(const std::string& key) const { return std::stod(get(key)); }

void Checkpoint::set(const std::string& key, std::string value) {
  for (auto& [k, v] : config) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  config.emplace_back(key, std::move(value));
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint {}", path.string()));
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);

  std::string text;
  for (const auto& [k, v] : checkpoint.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument(fmt::format("checkpoint config entry '{}' is not representable", k));
    }
    text += k + "=" + v + "\n";
  }
  put<std::uint32_t>(out, std::uint32_t(text.size()));
  out.write(text.data(), std::streamsize(text.size()));

  put<std::uint32_t>(out, std::uint32_t(checkpoint.tensors.size()));
  std::uint64_t offset = 0;
  for (const CheckpointTensor& t : checkpoint.tensors) {
    std::uint64_t elements = 1;
    for (auto d : t.shape) elements *= d;
    if (elements != t.data.size()) throw std::invalid_argument(fmt::format("tensor '{}' shape/data mismatch", t.name));
    put<std::uint32_t>(out, std::uint32_t(t.name.size()));
    out.write(t.name.data(), std::streamsize(t.name.size()));
    put<std::uint32_t>(out, std::uint32_t(t.shape.size()));
    for (auto d : t.shape) put<std::uint32_t>(out, d);
    put<std::uint64_t>(out, offset);
    offset += elements;
  }
  for (const CheckpointTensor& t : checkpoint.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open checkpoint {}", path.string()));
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::invalid_argument(fmt::format("{}: not a checkpoint (bad magic)", path.string()));
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) throw std::invalid_argument(fmt::format("{}: unsupported version {}", path.string(), version));

  Checkpoint ckpt;
  const std::string text = take_string(in, take<std::uint32_t>(in, path), path);
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(fmt::format("{}: malformed config line '{}'", path.string(), line));
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }

  const auto count = take<std::uint32_t>(in, path);
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = take_string(in, take<std::uint32_t>(in, path), path);
    const auto rank = take<std::uint32_t>(in, path);
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(take<std::uint32_t>(in, path));
      elements *= t.shape.back();
    }
    offsets.push_back(take<std::uint64_t>(in, path));
    t.data.resize(elements);
    ckpt.tensors.push_back(std::move(t));
  }
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    if (offsets[i] != expected) throw std::invalid_argument(fmt::format("{}: tensors out of declaration order", path.string()));
    auto& data = ckpt.tensors[i].data;
    if (!in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * sizeof(float)))) {
      throw std::invalid_argument(fmt::format("{}: truncated tensor data", path.string()));
    }
    expected += data.size();
  }
  return ckpt;
}

}  // namespace diffse
