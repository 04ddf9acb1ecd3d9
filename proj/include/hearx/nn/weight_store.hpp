#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hearx/nn/tensor.hpp"

namespace hearx::nn {

/// Named tensor container, serialized as "INXW".
///
/// Layout (little-endian):
///   magic "INXW" | u32 version | u32 tensor count
///   per tensor: u32 name length | UTF-8 name | u8 dtype (0 = f32) |
///               u32 ndim | u64 dims[ndim] | f32 data[prod(dims)]
/// Tensors are written in name order.
class WeightStore {
 public:
  static constexpr char kMagic[4] = {'I', 'N', 'X', 'W'};
  static constexpr std::uint32_t kVersion = 1;

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  /// Like get(), and also checks the stored shape.
  const Tensor& get(const std::string& name, const std::vector<Index>& shape) const;
  void set(const std::string& name, Tensor t) { tensors_.insert_or_assign(name, std::move(t)); }
  bool erase(const std::string& name) { return tensors_.erase(name) > 0; }

  size_t size() const { return tensors_.size(); }
  Index parameter_count() const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  /// Copies every tensor of `other` into this store (overwriting on clash).
  void merge(const WeightStore& other);

  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static WeightStore load(std::istream& is);
  static WeightStore load(const std::filesystem::path& path);

  friend bool operator==(const WeightStore& a, const WeightStore& b) { return a.tensors_ == b.tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Initialization rule attached to a declared parameter.
enum class Init { uniform, ones, zeros, constant };

struct ParamSpec {
  std::string name;
  std::vector<Index> shape;
  Init init = Init::uniform;
  Index fan_in = 1;
  float value = 0.0f;  // for Init::constant
};

/// Fills a tensor with uniform(-a, a), a = sqrt(1 / fan_in), from a SplitMix64 stream.
void seeded_uniform_fill(Tensor& t, std::uint64_t seed, Index fan_in);

/// Materializes declared parameters. Each tensor draws from its own stream
/// seeded by (seed, name), so declaration order does not matter.
WeightStore init_weights(const std::vector<ParamSpec>& specs, std::uint64_t seed);

Index count_parameters(const std::vector<ParamSpec>& specs);

/// Throws configuration error naming the first declared parameter that is
/// missing or has the wrong shape.
void check_weights(const WeightStore& store, const std::vector<ParamSpec>& specs);

}  // namespace hearx::nn
