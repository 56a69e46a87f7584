#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsmm/error.hpp"

namespace dsmm {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = RowMatrix<double>;

// Dense row-major array. Rank-4 tensors are laid out (batch, channels,
// height, width); lower ranks are allowed for parameter vectors.
template <typename Scalar>
class BasicTensor {
 public:
  using Shape = std::vector<Index>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    data_ = Vector::Constant(checked_size(shape_), fill);
  }

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw DimensionError("data", "tensor data length " + std::to_string(data_.size()) +
                                       " does not match shape product " +
                                       std::to_string(checked_size(shape_)));
  }

  static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // Number of elements in one batch item of a rank-4 tensor.
  Index item_size() const { return shape_[1] * shape_[2] * shape_[3]; }

  // Copy of batch item n as a [1, C, H, W] tensor.
  BasicTensor item(Index n) const {
    const Index len = item_size();
    return BasicTensor({1, shape_[1], shape_[2], shape_[3]}, data_.segment(n * len, len));
  }

  void set_item(Index n, const BasicTensor& src) {
    const Index len = item_size();
    if (src.size() != len) throw DimensionError("batch", "batch item size mismatch");
    data_.segment(n * len, len) = src.vec();
  }

  static BasicTensor stack(const std::vector<BasicTensor>& items) {
    if (items.empty()) throw DimensionError("batch", "cannot stack zero tensors");
    const auto& s = items.front().shape_;
    BasicTensor out({static_cast<Index>(items.size()), s[1], s[2], s[3]});
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].shape_ != s) throw DimensionError("batch", "stacked tensors differ in shape");
      out.set_item(static_cast<Index>(i), items[i]);
    }
    return out;
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

 private:
  static Index checked_size(const Shape& shape) {
    Index n = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 1)
        throw DimensionError("axis " + std::to_string(i),
                             "tensor extent on axis " + std::to_string(i) + " must be >= 1");
      n *= shape[i];
    }
    return n;
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

std::string shape_string(const Tensor::Shape& shape);

struct ConvSpec {
  std::pair<Index, Index> kernel_size{1, 1};
  std::pair<Index, Index> stride{1, 1};
  Index out_channels = 1;
  bool has_bias = false;
  std::pair<Index, Index> padding{0, 0};

  // Output extent along one axis, or 0 when the input is too small.
  static Index output_extent(Index in, Index pad, Index kernel, Index stride) {
    if (in + 2 * pad < kernel) return 0;
    return (in + 2 * pad - kernel) / stride + 1;
  }
};

struct ConvGrads {
  Tensor input;
  Tensor kernels;
  std::optional<Tensor> bias;
};

// Cross-correlation (no kernel flip). Reduction over (channel, row, column)
// happens in that fixed order.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels,
                      const std::optional<Tensor>& bias, const ConvSpec& spec);

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const ConvSpec& spec,
                          const Tensor& grad_output);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

enum class LossDivisor {
  kBatch,           // 1/(2N) sum over every element
  kBatchAndPixels,  // additionally divided by the per-item element count
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

LossResult mse_loss(const Tensor& pred, const Tensor& target,
                    LossDivisor divisor = LossDivisor::kBatch);

// Central differences, one coordinate at a time. `f` must not retain `at`.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double eps);

// max over groups is up to the caller; this is ||a - b|| / max(||a||, ||b||).
double relative_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace dsmm
