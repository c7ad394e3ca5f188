#include "shiftnas/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shiftnas/error.hpp"

namespace shiftnas::nn {

namespace {

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_finite(std::string_view op, const Matrix& m) {
  if (!m.all_finite()) throw NumericError(std::string(op) + ": produced non-finite values");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

std::string_view to_string(LayerKind k) { return k == LayerKind::dense ? "dense" : "identity"; }

Activation activation_from_string(std::string_view s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

LayerKind layer_kind_from_string(std::string_view s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "identity") return LayerKind::identity;
  throw InvalidArgument("unknown layer kind '" + std::string(s) + "'");
}

void LayerSpec::validate() const {
  if (in_dim == 0 || out_dim == 0) throw InvalidArgument("LayerSpec: dimensions must be positive");
  if (kind == LayerKind::identity && (in_dim != out_dim || activation != Activation::none))
    throw InvalidArgument("LayerSpec: identity requires in_dim == out_dim and no activation");
}

DenseParams DenseParams::zeros_like(const LayerSpec& spec) {
  if (spec.kind == LayerKind::identity) return {};
  return {Matrix(spec.in_dim, spec.out_dim), std::vector<double>(spec.out_dim, 0.0)};
}

namespace {

void check_params(std::string_view op, const LayerSpec& spec, const DenseParams& params) {
  if (spec.kind == LayerKind::identity) {
    if (!params.empty()) shape_fail(op, "identity layer takes no parameters");
    return;
  }
  if (params.weight.rows() != spec.in_dim || params.weight.cols() != spec.out_dim ||
      params.bias.size() != spec.out_dim) {
    std::ostringstream os;
    os << "params W " << params.weight.shape_str() << " b " << params.bias.size() << " do not match spec "
       << spec.in_dim << "->" << spec.out_dim;
    shape_fail(op, os.str());
  }
}

}  // namespace

ForwardResult layer_forward(const LayerSpec& spec, const DenseParams& params, const Matrix& x) {
  if (x.cols() != spec.in_dim)
    shape_fail("layer_forward", "input " + x.shape_str() + " but in_dim " + std::to_string(spec.in_dim));
  check_params("layer_forward", spec, params);

  if (spec.kind == LayerKind::identity) return {x, {x, x}};

  const std::size_t n = x.rows(), in = spec.in_dim, out = spec.out_dim;
  Matrix y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    auto yr = y.row(i);
    std::copy(params.bias.begin(), params.bias.end(), yr.begin());
    auto xr = x.row(i);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      auto wr = params.weight.row(k);
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
    switch (spec.activation) {
      case Activation::none: break;
      case Activation::relu:
        for (auto& v : yr) v = v > 0.0 ? v : 0.0;
        break;
      case Activation::tanh:
        for (auto& v : yr) v = std::tanh(v);
        break;
    }
  }
  require_finite("layer_forward", y);
  return {y, {x, y}};
}

BackwardResult layer_backward(const LayerSpec& spec, const DenseParams& params, const LayerCache& cache,
                              const Matrix& grad_out) {
  if (grad_out.rows() != cache.output.rows() || grad_out.cols() != cache.output.cols() ||
      grad_out.cols() != spec.out_dim)
    shape_fail("layer_backward",
               "grad_out " + grad_out.shape_str() + " vs forward output " + cache.output.shape_str());
  check_params("layer_backward", spec, params);

  if (spec.kind == LayerKind::identity) return {grad_out, {}};

  const std::size_t n = grad_out.rows(), in = spec.in_dim, out = spec.out_dim;
  if (cache.input.rows() != n || cache.input.cols() != in)
    shape_fail("layer_backward", "cached input " + cache.input.shape_str() + " does not match spec");

  // gradient w.r.t. pre-activation
  Matrix delta = grad_out;
  switch (spec.activation) {
    case Activation::none: break;
    case Activation::relu:
      for (std::size_t i = 0; i < delta.size(); ++i)
        if (!(cache.output.data()[i] > 0.0)) delta.data()[i] = 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        const double t = cache.output.data()[i];
        delta.data()[i] *= 1.0 - t * t;
      }
      break;
  }

  BackwardResult r{Matrix(n, in), DenseParams::zeros_like(spec)};
  for (std::size_t i = 0; i < n; ++i) {
    auto dr = delta.row(i);
    auto xr = cache.input.row(i);
    for (std::size_t j = 0; j < out; ++j) r.grad_params.bias[j] += dr[j];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      auto gw = r.grad_params.weight.row(k);
      auto wr = params.weight.row(k);
      double gx = 0.0;
      for (std::size_t j = 0; j < out; ++j) {
        gw[j] += xv * dr[j];
        gx += dr[j] * wr[j];
      }
      r.grad_input(i, k) = gx;
    }
  }
  require_finite("layer_backward", r.grad_input);
  return r;
}

LossResult softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.rows(), k = logits.cols();
  if (n == 0) throw InvalidArgument("softmax_cross_entropy: empty batch");
  if (labels.size() != n)
    shape_fail("softmax_cross_entropy",
               std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");

  LossResult r{0.0, Matrix(n, k)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k)
      throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(labels[i]) + " >= " +
                            std::to_string(k) + " classes");
    auto lr = logits.row(i);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double sum = 0.0;
    auto gr = r.grad_logits.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      gr[j] = std::exp(lr[j] - mx);
      sum += gr[j];
    }
    r.loss += (std::log(sum) - (lr[labels[i]] - mx)) * inv_n;
    for (std::size_t j = 0; j < k; ++j) gr[j] = gr[j] / sum * inv_n;
    gr[labels[i]] -= inv_n;
  }
  if (!std::isfinite(r.loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
  return r;
}

std::vector<std::size_t> argmax_rows(const Matrix& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size())
    shape_fail("sgd_step", std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) + " grads");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void sgd_step(DenseParams& params, const DenseParams& grads, double lr) {
  if (params.weight.rows() != grads.weight.rows() || params.weight.cols() != grads.weight.cols())
    shape_fail("sgd_step", "weight " + params.weight.shape_str() + " vs grad " + grads.weight.shape_str());
  sgd_step(params.weight.data(), grads.weight.data(), lr);
  sgd_step(params.bias, grads.bias, lr);
}

void accumulate(DenseParams& dst, const DenseParams& src) {
  if (dst.weight.rows() != src.weight.rows() || dst.weight.cols() != src.weight.cols() ||
      dst.bias.size() != src.bias.size())
    shape_fail("accumulate", "weight " + dst.weight.shape_str() + " vs " + src.weight.shape_str());
  for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight.data()[i] += src.weight.data()[i];
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
}

}  // namespace shiftnas::nn
