#include "dmoe/backbone.hpp"

#include <cmath>

#include "dmoe/error.hpp"

namespace dmoe {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::identity:
      return "identity";
  }
  return "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw InvalidArgument("unknown activation '" + name + "'");
}

Backbone::Backbone(int input_dim, std::vector<DenseLayer> layers, Activation activation)
    : input_dim_(input_dim), layers_(std::move(layers)), activation_(activation) {
  int prev = input_dim_;
  for (const auto& l : layers_) {
    if (l.weight.cols() != prev || l.bias.size() != l.weight.rows()) {
      throw InvalidArgument("backbone layer shapes do not chain");
    }
    prev = static_cast<int>(l.weight.rows());
  }
}

Backbone Backbone::initialize(int input_dim, const BackboneSpec& spec, Rng& rng) {
  if (input_dim < 1) throw InvalidArgument("backbone input dimension must be positive");
  std::vector<DenseLayer> layers;
  int prev = input_dim;
  for (int width : spec.hidden) {
    if (width < 1) throw InvalidArgument("backbone layer width must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(prev + width));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer l{Matrix(width, prev), Vector::Zero(width)};
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
    layers.push_back(std::move(l));
    prev = width;
  }
  return Backbone(input_dim, std::move(layers), spec.activation);
}

int Backbone::output_dim() const noexcept {
  return layers_.empty() ? input_dim_ : static_cast<int>(layers_.back().weight.rows());
}

namespace {

void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::tanh:
      z = z.array().tanh();
      break;
    case Activation::relu:
      z = z.array().max(0.0);
      break;
    case Activation::identity:
      break;
  }
}

// Derivative expressed through the activation output h.
void scale_by_derivative(Matrix& grad, const Matrix& h, Activation a) {
  switch (a) {
    case Activation::tanh:
      grad.array() *= 1.0 - h.array().square();
      break;
    case Activation::relu:
      grad.array() *= (h.array() > 0.0).cast<double>();
      break;
    case Activation::identity:
      break;
  }
}

}  // namespace

void Backbone::set_input_normalization(Vector shift, Vector scale) {
  if (shift.size() != scale.size() || (shift.size() != 0 && shift.size() != input_dim_)) {
    throw InvalidArgument("input normalization must match the input dimension");
  }
  if (!shift.allFinite() || !scale.allFinite()) throw InvalidArgument("input normalization must be finite");
  input_shift_ = std::move(shift);
  input_scale_ = std::move(scale);
}

Matrix Backbone::normalized(const Matrix& inputs) const {
  if (inputs.rows() != input_dim_) {
    throw InvalidArgument("input dimension " + std::to_string(inputs.rows()) + " does not match backbone input " +
                          std::to_string(input_dim_));
  }
  if (input_shift_.size() == 0) return inputs;
  return input_scale_.asDiagonal() * (inputs.colwise() - input_shift_);
}

Matrix Backbone::encode(const Matrix& inputs) const {
  Matrix h = normalized(inputs);
  for (const auto& l : layers_) {
    Matrix z = l.weight * h;
    z.colwise() += l.bias;
    activate(z, activation_);
    h = std::move(z);
  }
  return h;
}

Matrix Backbone::encode(const Matrix& inputs, Trace& trace) const {
  trace.values.clear();
  trace.values.push_back(normalized(inputs));
  for (const auto& l : layers_) {
    Matrix z = l.weight * trace.values.back();
    z.colwise() += l.bias;
    activate(z, activation_);
    trace.values.push_back(std::move(z));
  }
  return trace.values.back();
}

Matrix Backbone::backward(const Trace& trace, const Matrix& grad_output, std::vector<DenseLayer>& grads) const {
  Matrix g = grad_output;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    scale_by_derivative(g, trace.values[li + 1], activation_);
    grads[li].weight.noalias() += g * trace.values[li].transpose();
    grads[li].bias += g.rowwise().sum();
    g = layers_[li].weight.transpose() * g;
  }
  if (input_scale_.size() != 0) g = input_scale_.asDiagonal() * g;
  return g;
}

std::vector<DenseLayer> Backbone::zero_gradients() const {
  std::vector<DenseLayer> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) {
    out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return out;
}

std::size_t Backbone::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

}  // namespace dmoe
