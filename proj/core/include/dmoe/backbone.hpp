#pragma once

#include <string>
#include <vector>

#include "dmoe/types.hpp"

namespace dmoe {

enum class Activation { tanh, relu, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// One architecture shared by every expert. Empty `hidden` gives the identity
// encoder h(x) = x.
struct BackboneSpec {
  std::vector<int> hidden{64, 32};
  Activation activation = Activation::tanh;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// Feed-forward encoder. Batches are column-major: one sample per column.
class Backbone {
 public:
  // Per-layer post-activation values, index 0 being the input batch.
  struct Trace {
    std::vector<Matrix> values;
  };

  Backbone() = default;
  Backbone(int input_dim, std::vector<DenseLayer> layers, Activation activation);

  // Glorot-uniform weights, zero biases.
  static Backbone initialize(int input_dim, const BackboneSpec& spec, Rng& rng);

  int input_dim() const noexcept { return input_dim_; }
  int output_dim() const noexcept;
  Activation activation() const noexcept { return activation_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  Matrix encode(const Matrix& inputs) const;
  Matrix encode(const Matrix& inputs, Trace& trace) const;

  // Accumulates parameter gradients into `grads` (same shapes as layers())
  // given dL/d(output) and returns dL/d(input).
  Matrix backward(const Trace& trace, const Matrix& grad_output, std::vector<DenseLayer>& grads) const;

  // Fixed affine map x -> (x - shift) * scale applied before the first
  // layer; not trained. Empty vectors leave inputs untouched.
  void set_input_normalization(Vector shift, Vector scale);
  const Vector& input_shift() const noexcept { return input_shift_; }
  const Vector& input_scale() const noexcept { return input_scale_; }

  std::vector<DenseLayer> zero_gradients() const;
  std::size_t parameter_count() const noexcept;

 private:
  int input_dim_ = 0;
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::tanh;
  Vector input_shift_;
  Vector input_scale_;

  Matrix normalized(const Matrix& inputs) const;
};

}  // namespace dmoe
