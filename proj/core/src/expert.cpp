#include "dmoe/expert.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmoe/error.hpp"
#include "dmoe/softmax_head.hpp"

namespace dmoe {

Matrix ExpertModel::class_weights() const {
  Matrix w = v;
  w.colwise() += w0;
  return w;
}

Matrix ExpertModel::head_weights() const {
  Matrix w(w0.size(), num_slots());
  w.leftCols(group.size()) = class_weights();
  w.col(group.size()) = w_nig;
  return w;
}

bool ExpertModel::all_finite() const {
  for (const auto& l : backbone.layers())
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return w0.allFinite() && v.allFinite() && w_nig.allFinite() && bias.allFinite();
}

ExpertModel make_expert(const TaskGroup& group, int input_dim, const BackboneSpec& spec, Rng& rng) {
  if (group.size() < 1) throw InvalidArgument("task group is empty");
  ExpertModel m;
  m.group = group;
  m.backbone = Backbone::initialize(input_dim, spec, rng);
  const int d = m.backbone.output_dim();
  m.w0 = Vector::Zero(d);
  m.v = Matrix::Zero(d, group.size());
  m.w_nig = Vector::Zero(d);
  m.bias = Vector::Zero(group.size() + 1);
  return m;
}

void TrainConfig::validate() const {
  for (double x : {mu, delta1, delta2, learning_rate, momentum, lr_decay}) {
    if (!std::isfinite(x)) throw InvalidArgument("training config holds a non-finite value");
  }
  if (!(mu > 0.0)) throw InvalidArgument("mu must be positive");
  if (delta1 < 0.0 || delta2 < 0.0) throw InvalidArgument("delta1 and delta2 must be non-negative");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("momentum must lie in [0, 1)");
  if (!(lr_decay > 0.0)) throw InvalidArgument("lr decay must be positive");
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (sim_refresh_period < 1) throw InvalidArgument("similarity refresh period must be at least 1");
  if (samples_per_class < 0 || lr_decay_every < 0) throw InvalidArgument("negative count in training config");
}

// ---------------------------------------------------------------------------

SimilarityState SimilarityState::from_affinity(const AffinityMatrix& s) {
  SimilarityState st;
  st.s = s.values();
  st.laplacian = -st.s;
  st.laplacian.diagonal() += st.s.rowwise().sum();
  return st;
}

SimilarityState similarity_matrix(const ClassFeatures& features, const KernelConfig& cfg) {
  return SimilarityState::from_affinity(visual_affinity_matrix(features, cfg));
}

// ---------------------------------------------------------------------------

namespace {

Matrix logits(const ExpertModel& model, const Matrix& encodings) {
  Matrix z = model.head_weights().transpose() * encodings;
  z.colwise() += model.bias;
  return z;
}

void check_labels(const Batch& batch, int num_slots) {
  if (static_cast<Eigen::Index>(batch.labels.size()) != batch.inputs.cols()) {
    throw InvalidArgument("batch has " + std::to_string(batch.labels.size()) + " labels for " +
                          std::to_string(batch.inputs.cols()) + " samples");
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= num_slots) {
      throw InvalidLabel("label " + std::to_string(y) + " outside 0.." + std::to_string(num_slots - 1));
    }
  }
}

}  // namespace

Matrix forward_batch(const ExpertModel& model, const Matrix& inputs) {
  return softmax_columns(logits(model, model.backbone.encode(inputs)));
}

Vector forward(const ExpertModel& model, const Vector& x) {
  return forward_batch(model, Matrix(x)).col(0);
}

double manifold_penalty(const Matrix& class_weights, const Matrix& laplacian) {
  return (class_weights * laplacian).cwiseProduct(class_weights).sum();
}

double objective(const ExpertModel& model, const Batch& batch, const SimilarityState& sim, const TrainConfig& cfg,
                 double reg_scale, ExpertGradients* grad) {
  const int m = model.group.size();
  check_labels(batch, m + 1);
  if (sim.laplacian.rows() != m || sim.laplacian.cols() != m) {
    throw InvalidArgument("similarity state does not match the group size");
  }

  Backbone::Trace trace;
  const Matrix h = model.backbone.encode(batch.inputs, trace);
  const Matrix head = model.head_weights();
  Matrix z = head.transpose() * h;
  z.colwise() += model.bias;

  double ce = 0.0;
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double zmax = z.col(c).maxCoeff();
    const Vector e = (z.col(c).array() - zmax).exp();
    const double sum = e.sum();
    ce += std::log(sum) + zmax - z(batch.labels[static_cast<std::size_t>(c)], c);
    p.col(c) = e / sum;
  }

  const Matrix wc = head.leftCols(m);
  const double reg = cfg.delta1 * (wc.squaredNorm() + model.w_nig.squaredNorm()) +
                     0.5 * cfg.delta2 * manifold_penalty(wc, sim.laplacian);
  const double total = cfg.mu * ce + reg_scale * reg;

  if (grad != nullptr) {
    Matrix g = cfg.mu * p;
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(batch.labels[static_cast<std::size_t>(c)], c) -= cfg.mu;

    const Matrix dhead = h * g.transpose();  // d x (M+1)
    Matrix dwc = dhead.leftCols(m);
    dwc += reg_scale * (2.0 * cfg.delta1 * wc + cfg.delta2 * wc * sim.laplacian);

    grad->w0 = dwc.rowwise().sum();
    if (cfg.freeze_class_components) {
      grad->v = Matrix::Zero(dwc.rows(), dwc.cols());
    } else {
      grad->v = dwc;
    }
    grad->w_nig = dhead.col(m) + reg_scale * 2.0 * cfg.delta1 * model.w_nig;
    grad->bias = g.rowwise().sum();
    grad->backbone = model.backbone.zero_gradients();
    model.backbone.backward(trace, head * g, grad->backbone);
  }
  return total;
}

double loss(const ExpertModel& model, const Batch& batch, const SimilarityState& sim, const TrainConfig& cfg) {
  return objective(model, batch, sim, cfg, 1.0, nullptr);
}

ExpertGradients gradient(const ExpertModel& model, const Batch& batch, const SimilarityState& sim,
                         const TrainConfig& cfg) {
  ExpertGradients g;
  objective(model, batch, sim, cfg, 1.0, &g);
  return g;
}

// ---------------------------------------------------------------------------

Vector parameter_vector(const ExpertModel& model) {
  std::vector<double> out;
  auto push = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  for (const auto& l : model.backbone.layers()) {
    push(l.weight);
    push(l.bias);
  }
  push(model.w0);
  push(model.v);
  push(model.w_nig);
  push(model.bias);
  return Eigen::Map<const Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

void set_parameter_vector(ExpertModel& model, const Vector& params) {
  Eigen::Index pos = 0;
  auto pull = [&](auto& m) {
    if (pos + m.size() > params.size()) throw InvalidArgument("parameter vector too short");
    std::copy(params.data() + pos, params.data() + pos + m.size(), m.data());
    pos += m.size();
  };
  for (auto& l : model.backbone.layers()) {
    pull(l.weight);
    pull(l.bias);
  }
  pull(model.w0);
  pull(model.v);
  pull(model.w_nig);
  pull(model.bias);
  if (pos != params.size()) throw InvalidArgument("parameter vector too long");
}

Vector gradient_vector(const ExpertGradients& grad) {
  std::vector<double> out;
  auto push = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  for (const auto& l : grad.backbone) {
    push(l.weight);
    push(l.bias);
  }
  push(grad.w0);
  push(grad.v);
  push(grad.w_nig);
  push(grad.bias);
  return Eigen::Map<const Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

// ---------------------------------------------------------------------------

Batch sample_not_in_group(const Dataset& ds, const TaskGroup& group, std::size_t count, std::uint64_t seed) {
  Batch out;
  out.inputs.resize(ds.dim, static_cast<Eigen::Index>(count));
  if (count == 0) return out;

  std::vector<std::size_t> pool;
  for (std::size_t i : ds.train)
    if (!group.contains(ds.labels[i])) pool.push_back(i);
  if (pool.size() < count) {
    throw InvalidDataset("not-in-group pool has " + std::to_string(pool.size()) + " samples, " +
                         std::to_string(count) + " requested");
  }
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(count);
  out.inputs = gather_columns(ds, pool);
  out.labels.assign(count, group.sentinel_index());
  return out;
}

Batch expert_training_set(const TaskGroup& group, const Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (int slot = 0; slot < group.size(); ++slot) {
    const ClassId c = group.members[static_cast<std::size_t>(slot)];
    if (c < 0 || c >= ds.num_classes) throw InvalidDataset("group member " + std::to_string(c) + " not in dataset");
    auto mine = class_indices(ds, Split::train, c);
    if (mine.empty()) throw InvalidDataset("class " + std::to_string(c) + " has no training samples");
    if (cfg.samples_per_class > 0 && mine.size() > static_cast<std::size_t>(cfg.samples_per_class)) {
      mine.resize(static_cast<std::size_t>(cfg.samples_per_class));
    }
    idx.insert(idx.end(), mine.begin(), mine.end());
    labels.insert(labels.end(), mine.size(), slot);
  }

  std::size_t pool = 0;
  for (std::size_t i : ds.train)
    if (!group.contains(ds.labels[i])) ++pool;
  // Default: as many not-in-group samples as in-group ones.
  std::size_t want = cfg.sentinel_samples >= 0 ? static_cast<std::size_t>(cfg.sentinel_samples) : idx.size();
  want = std::min(want, pool);
  const Batch sentinel = sample_not_in_group(ds, group, want, derive_seed(cfg.seed, 0x5e47));

  Batch out;
  out.inputs.resize(ds.dim, static_cast<Eigen::Index>(idx.size() + want));
  out.inputs.leftCols(static_cast<Eigen::Index>(idx.size())) = gather_columns(ds, idx);
  out.inputs.rightCols(static_cast<Eigen::Index>(want)) = sentinel.inputs;
  out.labels = std::move(labels);
  out.labels.insert(out.labels.end(), sentinel.labels.begin(), sentinel.labels.end());
  return out;
}

namespace {

ClassFeatures in_group_features(const Matrix& columns, const std::vector<int>& labels, int m) {
  std::vector<std::vector<Eigen::Index>> by_slot(static_cast<std::size_t>(m));
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] < m) by_slot[static_cast<std::size_t>(labels[k])].push_back(static_cast<Eigen::Index>(k));
  ClassFeatures out;
  for (const auto& cols : by_slot) {
    Matrix f(static_cast<Eigen::Index>(cols.size()), columns.rows());
    for (std::size_t r = 0; r < cols.size(); ++r) f.row(static_cast<Eigen::Index>(r)) = columns.col(cols[r]).transpose();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

ExpertModel train_expert(const TaskGroup& group, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const Batch data = expert_training_set(group, ds, cfg);
  const auto n = static_cast<Eigen::Index>(data.size());
  const int m = group.size();

  Rng rng(cfg.seed);
  ExpertModel model = make_expert(group, ds.dim, cfg.backbone, rng);
  if (cfg.standardize_inputs) {
    const Vector mean = data.inputs.rowwise().mean();
    const Vector sd = ((data.inputs.colwise() - mean).array().square().rowwise().mean()).sqrt();
    model.backbone.set_input_normalization(mean, sd.unaryExpr([](double s) { return s > 1e-12 ? 1.0 / s : 1.0; }));
  }
  SimilarityState sim = similarity_matrix(in_group_features(data.inputs, data.labels, m), cfg.kernel);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Vector velocity = Vector::Zero(parameter_vector(model).size());
  ExpertGradients grad;
  Batch batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (epoch > 1 && (epoch - 1) % cfg.sim_refresh_period == 0) {
      const Matrix enc = model.backbone.encode(data.inputs);
      sim = similarity_matrix(in_group_features(enc, data.labels, m), cfg.kernel);
    }
    const int decays = cfg.lr_decay_every > 0 ? (epoch - 1) / cfg.lr_decay_every : 0;
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, decays);

    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      batch.inputs.resize(data.inputs.rows(), b);
      batch.labels.resize(static_cast<std::size_t>(b));
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + k)];
        batch.inputs.col(k) = data.inputs.col(src);
        batch.labels[static_cast<std::size_t>(k)] = data.labels[static_cast<std::size_t>(src)];
      }
      objective(model, batch, sim, cfg, static_cast<double>(b) / static_cast<double>(n), &grad);
      velocity = cfg.momentum * velocity - (lr / static_cast<double>(b)) * gradient_vector(grad);
      set_parameter_vector(model, parameter_vector(model) + velocity);
    }

    const double full = objective(model, data, sim, cfg, 1.0, nullptr);
    if (!std::isfinite(full) || !model.all_finite()) throw TrainingFailure(static_cast<std::size_t>(epoch), "non-finite loss");
    model.loss_trajectory.push_back(full);
  }
  return model;
}

double within_group_accuracy(const ExpertModel& model, const Dataset& ds, Split split) {
  const int m = model.group.size();
  std::size_t hits = 0;
  std::size_t total = 0;
  for (int slot = 0; slot < m; ++slot) {
    const auto idx = class_indices(ds, split, model.group.members[static_cast<std::size_t>(slot)]);
    if (idx.empty()) continue;
    const Matrix p = forward_batch(model, gather_columns(ds, idx));
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      Eigen::Index best = 0;
      p.col(c).head(m).maxCoeff(&best);
      hits += best == slot ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace dmoe
