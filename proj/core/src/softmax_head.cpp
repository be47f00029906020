#include "dmoe/softmax_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmoe/error.hpp"

namespace dmoe {

SoftmaxHead SoftmaxHead::zeros(int classes, int inputs) {
  return SoftmaxHead{Matrix::Zero(classes, inputs), Vector::Zero(classes)};
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    p.col(c).array() -= p.col(c).maxCoeff();
    p.col(c) = p.col(c).array().exp();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

Matrix SoftmaxHead::probabilities(const Matrix& inputs) const {
  if (inputs.rows() != weight.cols()) throw InvalidArgument("softmax head input dimension mismatch");
  Matrix z = weight * inputs;
  z.colwise() += bias;
  return softmax_columns(z);
}

void SoftmaxHeadConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("head learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("head momentum must lie in [0, 1)");
  if (!(lr_decay > 0.0)) throw InvalidArgument("head lr decay must be positive");
  if (epochs < 1 || batch_size < 1 || lr_decay_every < 0) throw InvalidArgument("bad head epoch/batch settings");
  if (weight_decay < 0.0) throw InvalidArgument("head weight decay must be non-negative");
}

double softmax_objective(const SoftmaxHead& head, const Matrix& inputs, const std::vector<int>& labels,
                         double weight_decay, SoftmaxHead* grad) {
  if (static_cast<Eigen::Index>(labels.size()) != inputs.cols()) throw InvalidArgument("label count mismatch");
  if (inputs.rows() != head.weight.cols()) throw InvalidArgument("softmax head input dimension mismatch");
  Matrix z = head.weight * inputs;
  z.colwise() += head.bias;

  double nll = 0.0;
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const int y = labels[static_cast<std::size_t>(c)];
    if (y < 0 || y >= z.rows()) throw InvalidLabel("label " + std::to_string(y) + " out of range");
    const double zmax = z.col(c).maxCoeff();
    const Vector e = (z.col(c).array() - zmax).exp();
    const double sum = e.sum();
    nll += std::log(sum) + zmax - z(y, c);
    p.col(c) = e / sum;
  }
  const double total = nll + weight_decay * head.weight.squaredNorm();

  if (grad != nullptr) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) p(labels[static_cast<std::size_t>(c)], c) -= 1.0;
    grad->weight = p * inputs.transpose() + 2.0 * weight_decay * head.weight;
    grad->bias = p.rowwise().sum();
  }
  return total;
}

SoftmaxHead train_softmax_head(const Matrix& inputs, const std::vector<int>& labels, int num_classes,
                               const SoftmaxHeadConfig& cfg, const SoftmaxHead* init) {
  cfg.validate();
  if (num_classes < 1) throw InvalidArgument("softmax head needs at least one class");
  if (inputs.cols() == 0) throw InvalidArgument("softmax head needs training samples");
  if (!inputs.allFinite()) throw InvalidArgument("softmax head inputs are not finite");
  const Eigen::Index n = inputs.cols();

  Vector scale = (inputs.array().square().rowwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index f = 0; f < scale.size(); ++f)
    if (!(scale(f) > 0.0)) scale(f) = 1.0;
  const Matrix scaled = scale.cwiseInverse().asDiagonal() * inputs;

  SoftmaxHead head = SoftmaxHead::zeros(num_classes, static_cast<int>(inputs.rows()));
  if (init != nullptr) {
    if (init->num_classes() != num_classes || init->input_dim() != inputs.rows()) {
      throw InvalidArgument("initial head has the wrong shape");
    }
    head.weight = init->weight * scale.asDiagonal();
    head.bias = init->bias;
  }
  SoftmaxHead vel = SoftmaxHead::zeros(num_classes, static_cast<int>(inputs.rows()));
  SoftmaxHead grad;
  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Matrix bx;
  std::vector<int> by;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const int decays = cfg.lr_decay_every > 0 ? (epoch - 1) / cfg.lr_decay_every : 0;
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, decays);
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      bx.resize(scaled.rows(), b);
      by.resize(static_cast<std::size_t>(b));
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + k)];
        bx.col(k) = scaled.col(src);
        by[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(src)];
      }
      softmax_objective(head, bx, by, cfg.weight_decay * static_cast<double>(b) / static_cast<double>(n), &grad);
      const double step = lr / static_cast<double>(b);
      vel.weight = cfg.momentum * vel.weight - step * grad.weight;
      vel.bias = cfg.momentum * vel.bias - step * grad.bias;
      head.weight += vel.weight;
      head.bias += vel.bias;
    }
    if (!head.weight.allFinite() || !head.bias.allFinite()) {
      throw TrainingFailure(static_cast<std::size_t>(epoch), "softmax head parameters became non-finite");
    }
  }
  head.weight = head.weight * scale.cwiseInverse().asDiagonal();
  return head;
}

}  // namespace dmoe
