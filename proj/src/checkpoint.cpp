#include "salgen/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace salgen {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::ifstream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError(path + ": truncated checkpoint");
  return v;
}

std::string get_bytes(std::ifstream& is, std::uint64_t n, const std::string& path) {
  if (n > (1ULL << 32)) throw CheckpointError(path + ": corrupt length field");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(path + ": truncated checkpoint");
  return s;
}

}  // namespace

void Checkpoint::put(const std::string& prefix, const ParamStore& ps) {
  for (const auto& [name, t] : ps.entries()) tensors.emplace_back(prefix + name, t);
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint has no tensor " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, _] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck, bool as_float32) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp + " for writing");
    os.write("SGCK", 4);
    put_raw(os, kCheckpointVersion);
    std::string meta = ck.meta.dump();
    put_raw<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put_raw<std::uint64_t>(os, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
      put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_raw<std::uint8_t>(os, as_float32 ? 1 : 0);
      put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
      for (auto d : t.shape()) put_raw<std::int64_t>(os, d);
      auto v = t.data();
      if (as_float32) {
        for (double x : v) put_raw(os, static_cast<float>(x));
      } else {
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
      }
    }
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SGCK", 4) != 0) throw CheckpointError(path + ": not a checkpoint");
  auto version = get_raw<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  std::string meta = get_bytes(is, get_raw<std::uint64_t>(is, path), path);
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": bad metadata: " + e.what());
  }
  auto count = get_raw<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_bytes(is, get_raw<std::uint32_t>(is, path), path);
    auto dtype = get_raw<std::uint8_t>(is, path);
    if (dtype > 1) throw CheckpointError(path + ": unknown dtype for " + name);
    auto ndim = get_raw<std::uint32_t>(is, path);
    if (ndim > 16) throw CheckpointError(path + ": corrupt rank for " + name);
    Shape shape(ndim);
    for (auto& d : shape) {
      d = get_raw<std::int64_t>(is, path);
      if (d < 0) throw CheckpointError(path + ": negative extent for " + name);
    }
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    if (dtype == 1) {
      for (auto& x : v) x = get_raw<float>(is, path);
    } else if (!v.empty() &&
               !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw CheckpointError(path + ": truncated data for " + name);
    }
    ck.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(v)));
  }
  return ck;
}

void restore_params(ParamStore& ps, const Checkpoint& ck, const std::string& prefix) {
  for (auto& [name, t] : ps.entries()) {
    const Tensor& src = ck.get(prefix + name);
    if (src.shape() != t.shape()) {
      throw CheckpointError("shape mismatch for " + prefix + name + ": " + shape_str(src.shape()) + " vs " +
                            shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    auto s = src.data();
    std::copy(s.begin(), s.end(), dst.begin());
  }
}

}  // namespace salgen
