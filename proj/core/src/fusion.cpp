#include "dmoe/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "dmoe/checkpoint.hpp"
#include "dmoe/error.hpp"
#include "json.hpp"

namespace dmoe {

std::string to_string(StackingVariant v) { return v == StackingVariant::odds ? "odds" : "scaled"; }

StackingVariant stacking_variant_from_string(const std::string& name) {
  if (name == "odds") return StackingVariant::odds;
  if (name == "scaled") return StackingVariant::scaled;
  throw InvalidArgument("unknown stacking variant '" + name + "' (expected odds|scaled)");
}

double scaled_variant_factor(double lambda) { return lambda > 0.0 ? lambda : 1.0; }

namespace {

double clamp_phi(double phi) { return std::clamp(phi, kPhiEpsilon, 1.0 - kPhiEpsilon); }

// Weight the group's in-group scores receive: (1 - phi) / phi or lambda' phi.
double group_factor(double phi, double lambda, StackingVariant variant) {
  return variant == StackingVariant::odds ? (1.0 - phi) / phi : scaled_variant_factor(lambda) * phi;
}

void check_experts(std::span<const ExpertModel> experts, const GroupingPlan& plan) {
  if (static_cast<int>(experts.size()) != plan.num_groups()) {
    throw InvalidArgument("mixture has " + std::to_string(experts.size()) + " experts for " +
                          std::to_string(plan.num_groups()) + " groups");
  }
  for (std::size_t j = 0; j < experts.size(); ++j) {
    if (experts[j].group.members != plan.groups[j].members) {
      throw InvalidArgument("expert " + std::to_string(j) + " was trained for a different task group");
    }
  }
}

}  // namespace

ExpertScores expert_scores(const ExpertModel& model, const Vector& x) {
  const Vector q = forward(model, x);
  const int m = model.group.size();
  return ExpertScores{q.head(m), clamp_phi(q(m))};
}

Vector stack_scores(const GroupingPlan& plan, std::span<const ExpertScores> scores, double lambda,
                    StackingVariant variant) {
  if (static_cast<int>(scores.size()) != plan.num_groups()) {
    throw InvalidArgument("got scores from " + std::to_string(scores.size()) + " experts for " +
                          std::to_string(plan.num_groups()) + " groups");
  }
  Vector upsilon = Vector::Zero(plan.num_classes);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const auto& g = plan.groups[j];
    const auto& s = scores[j];
    if (s.p.size() != g.size()) throw InvalidArgument("score vector does not match group size");
    const double factor = group_factor(s.phi, lambda, variant);
    // Non-members have PS(i, j) = 0, so only members contribute.
    for (int slot = 0; slot < g.size(); ++slot) {
      upsilon(g.members[static_cast<std::size_t>(slot)]) += s.p(slot) * factor;
    }
  }
  return upsilon;
}

Vector stack_features(std::span<const ExpertModel> experts, const GroupingPlan& plan, const Vector& x,
                      double lambda, StackingVariant variant) {
  check_experts(experts, plan);
  std::vector<ExpertScores> scores;
  scores.reserve(experts.size());
  for (const auto& e : experts) scores.push_back(expert_scores(e, x));
  return stack_scores(plan, scores, lambda, variant);
}

Matrix stack_features_batch(std::span<const ExpertModel> experts, const GroupingPlan& plan, const Matrix& inputs,
                            double lambda, StackingVariant variant) {
  check_experts(experts, plan);
  Matrix upsilon = Matrix::Zero(plan.num_classes, inputs.cols());
  for (std::size_t j = 0; j < experts.size(); ++j) {
    const auto& g = plan.groups[j];
    const int m = g.size();
    const Matrix q = forward_batch(experts[j], inputs);
    for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
      const double factor = group_factor(clamp_phi(q(m, c)), lambda, variant);
      for (int slot = 0; slot < m; ++slot) upsilon(g.members[static_cast<std::size_t>(slot)], c) += q(slot, c) * factor;
    }
  }
  return upsilon;
}

void MixtureModel::validate() const {
  check_experts(experts, plan);
  if (head.num_classes() != plan.num_classes || head.input_dim() != plan.num_classes) {
    throw InvariantViolation("stacking head must be Omega x Omega");
  }
}

// ---------------------------------------------------------------------------

double mixture_objective(const MixtureModel& mixture, const Matrix& inputs, const std::vector<ClassId>& labels,
                         double weight_decay, MixtureGradients* grad) {
  check_experts(mixture.experts, mixture.plan);
  const auto b = inputs.cols();
  const std::size_t n_exp = mixture.experts.size();

  std::vector<Matrix> enc(n_exp);
  std::vector<Matrix> q(n_exp);
  Matrix upsilon = Matrix::Zero(mixture.plan.num_classes, b);
  for (std::size_t j = 0; j < n_exp; ++j) {
    const auto& e = mixture.experts[j];
    const int m = e.group.size();
    enc[j] = e.backbone.encode(inputs);
    Matrix z = e.head_weights().transpose() * enc[j];
    z.colwise() += e.bias;
    q[j] = softmax_columns(z);
    for (Eigen::Index c = 0; c < b; ++c) {
      const double factor = group_factor(clamp_phi(q[j](m, c)), mixture.lambda, mixture.variant);
      for (int slot = 0; slot < m; ++slot) upsilon(e.group.members[static_cast<std::size_t>(slot)], c) += q[j](slot, c) * factor;
    }
  }

  SoftmaxHead head_grad;
  const double value = softmax_objective(mixture.head, upsilon, labels, weight_decay, grad ? &head_grad : nullptr);
  if (grad == nullptr) return value;

  // dL/dY = W^T (P - Y); recover P - Y from the bias gradient's building block.
  Matrix zh = mixture.head.weight * upsilon;
  zh.colwise() += mixture.head.bias;
  Matrix g = softmax_columns(zh);
  for (Eigen::Index c = 0; c < b; ++c) g(labels[static_cast<std::size_t>(c)], c) -= 1.0;
  const Matrix dups = mixture.head.weight.transpose() * g;

  grad->head = std::move(head_grad);
  grad->experts.clear();
  const double lam = scaled_variant_factor(mixture.lambda);
  for (std::size_t j = 0; j < n_exp; ++j) {
    const auto& e = mixture.experts[j];
    const int m = e.group.size();
    Matrix dz(m + 1, b);
    for (Eigen::Index c = 0; c < b; ++c) {
      const double raw_phi = q[j](m, c);
      const double phi = clamp_phi(raw_phi);
      const bool clamped = phi != raw_phi;
      const double factor = group_factor(phi, mixture.lambda, mixture.variant);
      const double dfactor =
          clamped ? 0.0 : (mixture.variant == StackingVariant::odds ? -1.0 / (phi * phi) : lam);
      Vector dq(m + 1);
      double dphi = 0.0;
      for (int slot = 0; slot < m; ++slot) {
        const double du = dups(e.group.members[static_cast<std::size_t>(slot)], c);
        dq(slot) = du * factor;
        dphi += du * q[j](slot, c) * dfactor;
      }
      dq(m) = dphi;
      const auto qc = q[j].col(c);
      dz.col(c) = qc.cwiseProduct(dq.array().matrix() - Vector::Constant(m + 1, qc.dot(dq)));
    }
    const Matrix dhead = enc[j] * dz.transpose();
    ExpertGradients eg;
    eg.v = dhead.leftCols(m);
    eg.w0 = eg.v.rowwise().sum();
    eg.w_nig = dhead.col(m);
    eg.bias = dz.rowwise().sum();
    grad->experts.push_back(std::move(eg));
  }
  return value;
}

MixtureModel train_stacking_head(std::vector<ExpertModel> experts, GroupingPlan plan, const Dataset& ds,
                                 StackingVariant variant, const FusionConfig& cfg) {
  validate_plan(plan);
  check_experts(experts, plan);
  if (plan.num_classes != ds.num_classes) throw InvalidArgument("plan and dataset disagree on the class count");

  MixtureModel mix;
  mix.lambda = plan.lambda;
  mix.variant = variant;
  mix.experts = std::move(experts);
  mix.plan = std::move(plan);

  const Matrix inputs = gather_columns(ds, ds.train);
  std::vector<int> labels;
  labels.reserve(ds.train.size());
  for (std::size_t i : ds.train) labels.push_back(ds.labels[i]);

  const Matrix upsilon = stack_features_batch(mix.experts, mix.plan, inputs, mix.lambda, variant);
  const int n = mix.plan.num_classes;
  const SoftmaxHead eye{Matrix::Identity(n, n), Vector::Zero(n)};
  mix.head = train_softmax_head(upsilon, labels, n, cfg.head, cfg.identity_init ? &eye : nullptr);

  if (cfg.end_to_end && cfg.refine_epochs > 0) {
    const Eigen::Index count = inputs.cols();
    Vector inv_sq_scale = (upsilon.array().square().rowwise().sum() / static_cast<double>(count)).matrix();
    for (Eigen::Index f = 0; f < inv_sq_scale.size(); ++f) inv_sq_scale(f) = inv_sq_scale(f) > 0.0 ? 1.0 / inv_sq_scale(f) : 1.0;
    Rng rng(derive_seed(cfg.head.seed, 0xe2e));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (int epoch = 1; epoch <= cfg.refine_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < count; start += cfg.refine_batch_size) {
        const Eigen::Index b = std::min<Eigen::Index>(cfg.refine_batch_size, count - start);
        Matrix bx(inputs.rows(), b);
        std::vector<ClassId> by(static_cast<std::size_t>(b));
        for (Eigen::Index k = 0; k < b; ++k) {
          const Eigen::Index src = order[static_cast<std::size_t>(start + k)];
          bx.col(k) = inputs.col(src);
          by[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(src)];
        }
        MixtureGradients g;
        mixture_objective(mix, bx, by, cfg.head.weight_decay * static_cast<double>(b) / static_cast<double>(count), &g);
        const double step = cfg.refine_learning_rate / static_cast<double>(b);
        // Head step in RMS-scaled coordinates, as in train_softmax_head.
        mix.head.weight -= step * g.head.weight * inv_sq_scale.asDiagonal();
        mix.head.bias -= step * g.head.bias;
        // The odds factor can reach 1/eps, so expert steps are norm-clipped.
        for (std::size_t j = 0; j < mix.experts.size(); ++j) {
          auto& e = mix.experts[j];
          auto& ge = g.experts[j];
          const double norm = std::sqrt(ge.w0.squaredNorm() + ge.v.squaredNorm() + ge.w_nig.squaredNorm() +
                                        ge.bias.squaredNorm()) / static_cast<double>(b);
          const double clip = norm > cfg.refine_clip ? cfg.refine_clip / norm : 1.0;
          e.w0 -= clip * step * ge.w0;
          e.v -= clip * step * ge.v;
          e.w_nig -= clip * step * ge.w_nig;
          e.bias -= clip * step * ge.bias;
        }
      }
      const double value = mixture_objective(mix, inputs, labels, cfg.head.weight_decay, nullptr);
      if (!std::isfinite(value)) throw TrainingFailure(static_cast<std::size_t>(epoch), "end-to-end refinement diverged");
    }
  }
  return mix;
}

// ---------------------------------------------------------------------------

std::vector<RankedClass> rank_scores(const Vector& scores, int k) {
  if (k < 1 || k > scores.size()) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside 1.." + std::to_string(scores.size()));
  }
  std::vector<ClassId> ids(static_cast<std::size_t>(scores.size()));
  std::iota(ids.begin(), ids.end(), ClassId{0});
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](ClassId a, ClassId b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  std::vector<RankedClass> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) out.push_back({ids[static_cast<std::size_t>(r)], scores(ids[static_cast<std::size_t>(r)])});
  return out;
}

Matrix predict_proba(const MixtureModel& mixture, const Matrix& inputs) {
  return mixture.head.probabilities(
      stack_features_batch(mixture.experts, mixture.plan, inputs, mixture.lambda, mixture.variant));
}

std::vector<RankedClass> predict(const MixtureModel& mixture, const Vector& x, int k) {
  if (k < 1 || k > mixture.num_classes()) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside 1.." + std::to_string(mixture.num_classes()));
  }
  return rank_scores(predict_proba(mixture, Matrix(x)).col(0), k);
}

// ---------------------------------------------------------------------------

int EarlyFusionModel::feature_dim() const noexcept {
  int d = 0;
  for (const auto& e : encoders) d += e.output_dim();
  return d;
}

Matrix EarlyFusionModel::features(const Matrix& inputs) const {
  Matrix out(feature_dim(), inputs.cols());
  Eigen::Index row = 0;
  for (const auto& e : encoders) {
    out.middleRows(row, e.output_dim()) = e.encode(inputs);
    row += e.output_dim();
  }
  return out;
}

Matrix EarlyFusionModel::predict_proba(const Matrix& inputs) const { return head.probabilities(features(inputs)); }

int early_fusion_dimension(std::span<const ExpertModel> experts) {
  if (experts.empty()) throw InvalidArgument("early fusion needs at least one expert");
  const int d = experts.front().encoding_dim();
  for (const auto& e : experts) {
    if (e.encoding_dim() != d) throw InvalidArgument("experts disagree on the encoding dimension");
  }
  return d * static_cast<int>(experts.size());
}

EarlyFusionModel early_fusion_train(std::span<const ExpertModel> experts, const Dataset& ds,
                                    const SoftmaxHeadConfig& cfg) {
  early_fusion_dimension(experts);
  EarlyFusionModel model;
  for (const auto& e : experts) model.encoders.push_back(e.backbone);
  std::vector<int> labels;
  for (std::size_t i : ds.train) labels.push_back(ds.labels[i]);
  model.head = train_softmax_head(model.features(gather_columns(ds, ds.train)), labels, ds.num_classes, cfg);
  return model;
}

std::vector<RankedClass> predict(const EarlyFusionModel& model, const Vector& x, int k) {
  return rank_scores(model.predict_proba(Matrix(x)).col(0), k);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json head_json(const SoftmaxHead& head) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
    rows.push_back(std::vector<double>(head.weight.row(r).begin(), head.weight.row(r).end()));
  }
  return {{"weight", rows}, {"bias", std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size())}};
}

SoftmaxHead head_from(const nlohmann::json& j) {
  const auto rows = j.at("weight").get<std::vector<std::vector<double>>>();
  const auto bias = j.at("bias").get<std::vector<double>>();
  const auto cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  SoftmaxHead head{Matrix(static_cast<Eigen::Index>(rows.size()), cols), Vector(static_cast<Eigen::Index>(bias.size()))};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<Eigen::Index>(rows[r].size()) != cols) throw ParseError(0, "ragged head weight matrix");
    for (Eigen::Index c = 0; c < cols; ++c) head.weight(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  }
  for (std::size_t k = 0; k < bias.size(); ++k) head.bias(static_cast<Eigen::Index>(k)) = bias[k];
  if (head.bias.size() != head.weight.rows()) throw ParseError(0, "head bias does not match weight rows");
  return head;
}

}  // namespace

std::string softmax_head_to_json(const SoftmaxHead& head) { return head_json(head).dump(); }

SoftmaxHead softmax_head_from_json(const std::string& text) {
  try {
    return head_from(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("softmax head json: ") + e.what());
  }
}

std::string mixture_to_json(const MixtureModel& mixture, const std::vector<std::string>& expert_paths) {
  if (expert_paths.size() != mixture.experts.size()) throw InvalidArgument("one checkpoint path per expert required");
  nlohmann::json j;
  j["format_version"] = kMixtureFormatVersion;
  j["plan"] = nlohmann::json::parse(plan_to_json(mixture.plan));
  j["expert_checkpoint_paths"] = expert_paths;
  j["variant"] = to_string(mixture.variant);
  j["lambda"] = mixture.lambda;
  j["head_params"] = head_json(mixture.head);
  return j.dump();
}

MixtureModel mixture_from_json(const std::string& text, const std::string& base_dir) {
  MixtureModel mix;
  std::vector<std::string> paths;
  try {
    const auto j = nlohmann::json::parse(text);
    const int version = j.at("format_version").get<int>();
    if (version != kMixtureFormatVersion) throw ParseError(0, "unsupported mixture version " + std::to_string(version));
    mix.plan = plan_from_json(j.at("plan").dump());
    paths = j.at("expert_checkpoint_paths").get<std::vector<std::string>>();
    mix.variant = stacking_variant_from_string(j.at("variant").get<std::string>());
    mix.lambda = j.at("lambda").get<double>();
    mix.head = head_from(j.at("head_params"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("mixture checkpoint: ") + e.what());
  }
  for (const auto& p : paths) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    mix.experts.push_back(load_expert(path.string()).model);
  }
  mix.validate();
  return mix;
}

std::string early_fusion_to_json(const EarlyFusionModel& model, const std::vector<std::string>& expert_paths) {
  if (expert_paths.size() != model.encoders.size()) throw InvalidArgument("one checkpoint path per encoder required");
  nlohmann::json j;
  j["format_version"] = kMixtureFormatVersion;
  j["expert_checkpoint_paths"] = expert_paths;
  j["head_params"] = head_json(model.head);
  return j.dump();
}

EarlyFusionModel early_fusion_from_json(const std::string& text, const std::string& base_dir) {
  EarlyFusionModel model;
  std::vector<std::string> paths;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != kMixtureFormatVersion) throw ParseError(0, "unsupported early fusion version");
    paths = j.at("expert_checkpoint_paths").get<std::vector<std::string>>();
    model.head = head_from(j.at("head_params"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("early fusion checkpoint: ") + e.what());
  }
  for (const auto& p : paths) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    model.encoders.push_back(load_expert(path.string()).model.backbone);
  }
  if (model.head.input_dim() != model.feature_dim()) throw InvariantViolation("early fusion head does not match encoders");
  return model;
}

}  // namespace dmoe
