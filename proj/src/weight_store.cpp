#include "hearx/nn/weight_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "hearx/nn/rng.hpp"

namespace hearx::nn {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) fail(Errc::io_error, "INXW: truncated file");
  T value = 0;
  for (size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

// Guards against absurd allocations from corrupt headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(Errc::configuration, "missing weight '" + name + "'");
  return it->second;
}

const Tensor& WeightStore::get(const std::string& name, const std::vector<Index>& shape) const {
  const Tensor& t = get(name);
  if (t.shape() != shape) {
    Tensor expect(shape);
    fail(Errc::configuration,
         "weight '" + name + "' has shape " + t.shape_string() + ", expected " + expect.shape_string());
  }
  return t;
}

Index WeightStore::parameter_count() const {
  Index n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

void WeightStore::merge(const WeightStore& other) {
  for (const auto& [name, t] : other.tensors_) tensors_.insert_or_assign(name, t);
}

void WeightStore::save(std::ostream& os) const {
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(os, 0);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (float v : t.values()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) fail(Errc::io_error, "INXW: write failed");
}

void WeightStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io_error, "INXW: cannot open '" + path.string() + "' for writing");
  save(os);
}

WeightStore WeightStore::load(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) fail(Errc::io_error, "INXW: truncated file");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(Errc::format_error, "INXW: bad magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kVersion) fail(Errc::format_error, "INXW: unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(is);

  WeightStore store;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto name_len = get_le<std::uint32_t>(is);
    if (name_len > (1u << 16)) fail(Errc::format_error, "INXW: implausible name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) fail(Errc::io_error, "INXW: truncated file");
    const auto dtype = get_le<std::uint8_t>(is);
    if (dtype != 0) fail(Errc::format_error, "INXW: unsupported dtype " + std::to_string(dtype));
    const auto ndim = get_le<std::uint32_t>(is);
    if (ndim > 16) fail(Errc::format_error, "INXW: implausible rank");
    std::vector<Index> shape(ndim);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      const auto v = get_le<std::uint64_t>(is);
      numel *= v;
      if (v > kMaxElements || numel > kMaxElements) fail(Errc::format_error, "INXW: implausible tensor size");
      d = static_cast<Index>(v);
    }
    std::vector<float> data(static_cast<size_t>(numel));
    for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(is));
    if (store.contains(name)) fail(Errc::format_error, "INXW: duplicate tensor '" + name + "'");
    store.set(name, Tensor(std::move(shape), std::move(data)));
  }
  return store;
}

WeightStore WeightStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::io_error, "INXW: cannot open '" + path.string() + "'");
  return load(is);
}

void seeded_uniform_fill(Tensor& t, std::uint64_t seed, Index fan_in) {
  SplitMix64 rng(seed);
  const double a = std::sqrt(1.0 / static_cast<double>(std::max<Index>(fan_in, 1)));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-a, a));
}

WeightStore init_weights(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  WeightStore store;
  for (const auto& spec : specs) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case Init::uniform: seeded_uniform_fill(t, SplitMix64(seed ^ fnv1a(spec.name)).next(), spec.fan_in); break;
      case Init::ones: std::fill(t.values().begin(), t.values().end(), 1.0f); break;
      case Init::zeros: break;
      case Init::constant: std::fill(t.values().begin(), t.values().end(), spec.value); break;
    }
    store.set(spec.name, std::move(t));
  }
  return store;
}

Index count_parameters(const std::vector<ParamSpec>& specs) {
  Index n = 0;
  for (const auto& s : specs) n += Tensor::numel(s.shape);
  return n;
}

void check_weights(const WeightStore& store, const std::vector<ParamSpec>& specs) {
  for (const auto& s : specs) store.get(s.name, s.shape);
}

}  // namespace hearx::nn
