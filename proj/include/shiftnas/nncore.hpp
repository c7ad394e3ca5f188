#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace shiftnas::nn {

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept;
  std::string shape_str() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { none, relu, tanh };
enum class LayerKind { dense, identity };

std::string_view to_string(Activation a);
std::string_view to_string(LayerKind k);
Activation activation_from_string(std::string_view s);
LayerKind layer_kind_from_string(std::string_view s);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::none;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act) {
    return {LayerKind::dense, in, out, act};
  }
  static LayerSpec identity(std::size_t dim) { return {LayerKind::identity, dim, dim, Activation::none}; }

  // Throws InvalidArgument when identity is not square/linear or a dimension is zero.
  void validate() const;
  std::size_t weight_count() const noexcept {
    return kind == LayerKind::dense ? in_dim * out_dim : 0;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Weights (in_dim x out_dim) and bias (out_dim). Both empty for identity layers.
struct DenseParams {
  Matrix weight;
  std::vector<double> bias;

  static DenseParams zeros_like(const LayerSpec& spec);
  std::size_t size() const noexcept { return weight.size() + bias.size(); }
  bool empty() const noexcept { return weight.empty() && bias.empty(); }

  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct LayerCache {
  Matrix input;
  Matrix output;
};

struct ForwardResult {
  Matrix output;
  LayerCache cache;
};

struct BackwardResult {
  Matrix grad_input;
  DenseParams grad_params;  // empty for identity
};

ForwardResult layer_forward(const LayerSpec& spec, const DenseParams& params, const Matrix& x);

BackwardResult layer_backward(const LayerSpec& spec, const DenseParams& params, const LayerCache& cache,
                              const Matrix& grad_out);

struct LossResult {
  double loss = 0.0;
  Matrix grad_logits;
};

// Mean cross-entropy of softmax(logits) against integer labels, with the
// gradient already divided by the batch size.
LossResult softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

// Index of the largest logit per row (first on ties).
std::vector<std::size_t> argmax_rows(const Matrix& logits);

// p <- p - lr * g
void sgd_step(DenseParams& params, const DenseParams& grads, double lr);
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);

// dst += src, shapes must agree
void accumulate(DenseParams& dst, const DenseParams& src);

}  // namespace shiftnas::nn
