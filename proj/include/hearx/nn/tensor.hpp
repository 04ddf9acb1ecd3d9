#pragma once

#include <Eigen/Core>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hearx/error.hpp"

namespace hearx::nn {

using Eigen::Index;
using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXf>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXf>;

/// Dense row-major float tensor.
///
/// Activations flowing through the models use the layout [T, F, C]: one frame
/// is a contiguous F x C matrix, which is what streaming inference consumes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<Index> shape, float fill = 0.0f) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(static_cast<size_t>(numel(shape_)), fill);
  }
  Tensor(std::vector<Index> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(static_cast<Index>(data_.size()) == numel(shape_), Errc::invalid_shape,
            "tensor: data length does not match shape " + shape_string());
  }

  static Index numel(const std::vector<Index>& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<size_t>(i)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](Index i) { return data_[static_cast<size_t>(i)]; }
  float operator[](Index i) const { return data_[static_cast<size_t>(i)]; }

  float& at(std::initializer_list<Index> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  float at(std::initializer_list<Index> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

  /// Whole buffer viewed as rows x cols.
  MatrixMap matrix(Index rows, Index cols) {
    require(rows * cols == size(), Errc::invalid_shape, "tensor: bad matrix view");
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    require(rows * cols == size(), Errc::invalid_shape, "tensor: bad matrix view");
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  /// Rank-2 tensor as a matrix.
  MatrixMap matrix() { return matrix(dim(0), size() / std::max<Index>(dim(0), 1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), size() / std::max<Index>(dim(0), 1)); }

  /// Frame t of a [T, F, C] tensor as an F x C matrix.
  MatrixMap frame(Index t) { return MatrixMap(data_.data() + t * dim(1) * dim(2), dim(1), dim(2)); }
  ConstMatrixMap frame(Index t) const { return ConstMatrixMap(data_.data() + t * dim(1) * dim(2), dim(1), dim(2)); }

  void reshape(std::vector<Index> shape) {
    require(numel(shape) == size(), Errc::invalid_shape, "tensor: reshape changes element count");
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void check_shape() const {
    for (Index d : shape_) require(d >= 0, Errc::invalid_shape, "tensor: negative dimension");
  }
  Index offset(std::initializer_list<Index> idx) const {
    require(static_cast<Index>(idx.size()) == rank(), Errc::invalid_shape, "tensor: index rank mismatch");
    Index off = 0;
    size_t i = 0;
    for (Index v : idx) off = off * shape_[i++] + v;
    return off;
  }

  std::vector<Index> shape_;
  std::vector<float> data_;
};

}  // namespace hearx::nn
