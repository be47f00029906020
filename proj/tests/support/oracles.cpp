#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace oracle {

namespace {

double act(double z, dmoe::Activation a) {
  switch (a) {
    case dmoe::Activation::tanh: return std::tanh(z);
    case dmoe::Activation::relu: return z > 0.0 ? z : 0.0;
    case dmoe::Activation::identity: return z;
  }
  return z;
}

std::vector<double> column(const dmoe::Matrix& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, c);
  return out;
}

// Logits of every head slot for an encoding h.
std::vector<double> head_logits(const dmoe::ExpertModel& model, const std::vector<double>& h) {
  const int m = model.group.size();
  std::vector<double> z(static_cast<std::size_t>(m + 1));
  for (int j = 0; j <= m; ++j) {
    double acc = model.bias(j);
    for (std::size_t r = 0; r < h.size(); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      const double w = j < m ? model.w0(ri) + model.v(ri, j) : model.w_nig(ri);
      acc += w * h[r];
    }
    z[static_cast<std::size_t>(j)] = acc;
  }
  return z;
}

double log_sum_exp(const std::vector<double>& z) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : z) top = std::max(top, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

}  // namespace

std::vector<double> encode(const dmoe::Backbone& backbone, const std::vector<double>& x) {
  std::vector<double> h = x;
  const auto& shift = backbone.input_shift();
  const auto& scale = backbone.input_scale();
  if (shift.size() > 0) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      h[i] = (h[i] - shift(ii)) * scale(ii);
    }
  }
  for (const auto& layer : backbone.layers()) {
    std::vector<double> next(static_cast<std::size_t>(layer.weight.rows()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      double acc = layer.bias(r);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) acc += layer.weight(r, c) * h[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = act(acc, backbone.activation());
    }
    h = std::move(next);
  }
  return h;
}

std::vector<double> expert_forward(const dmoe::ExpertModel& model, const std::vector<double>& x) {
  const auto z = head_logits(model, encode(model.backbone, x));
  const double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) p[j] = std::exp(z[j] - lse);
  return p;
}

double expert_loss(const dmoe::ExpertModel& model, const dmoe::Batch& batch, const Matrix& s, double mu,
                   double delta1, double delta2) {
  const int m = model.group.size();
  const auto d = model.w0.size();
  double ce = 0.0;
  for (Eigen::Index c = 0; c < batch.inputs.cols(); ++c) {
    const auto z = head_logits(model, encode(model.backbone, column(batch.inputs, c)));
    ce += log_sum_exp(z) - z[static_cast<std::size_t>(batch.labels[static_cast<std::size_t>(c)])];
  }
  double ridge = 0.0;
  for (int j = 0; j < m; ++j)
    for (Eigen::Index r = 0; r < d; ++r) ridge += std::pow(model.w0(r) + model.v(r, j), 2);
  for (Eigen::Index r = 0; r < d; ++r) ridge += model.w_nig(r) * model.w_nig(r);

  double manifold = 0.0;
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      double dist = 0.0;
      for (Eigen::Index r = 0; r < d; ++r) dist += std::pow(model.v(r, a) - model.v(r, b), 2);
      manifold += s(a, b) * dist;
    }
  }
  return mu * ce + delta1 * ridge + delta2 / 4.0 * manifold;
}

std::vector<double> stack(const dmoe::GroupingPlan& plan, const std::vector<GroupScore>& scores, double lambda,
                          dmoe::StackingVariant variant) {
  std::vector<double> ups(static_cast<std::size_t>(plan.num_classes), 0.0);
  for (int i = 0; i < plan.num_classes; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < plan.groups.size(); ++j) {
      const auto& members = plan.groups[j].members;
      const auto it = std::find(members.begin(), members.end(), i);
      const bool member = it != members.end();
      const double ps = member ? scores[j].p[static_cast<std::size_t>(it - members.begin())] : 0.0;
      const double phi = std::min(std::max(scores[j].phi, 1e-6), 1.0 - 1e-6);
      if (variant == dmoe::StackingVariant::odds) {
        const double weight = member ? 1.0 : lambda;
        total += weight * ps * (1.0 - phi) / phi;
      } else {
        const double weight = member ? 1.0 : 0.0;
        const double lam = lambda > 0.0 ? lambda : 1.0;
        total += lam * weight * ps * phi;
      }
    }
    ups[static_cast<std::size_t>(i)] = total;
  }
  return ups;
}

std::vector<double> head_softmax(const dmoe::SoftmaxHead& head, const std::vector<double>& upsilon) {
  std::vector<double> z(static_cast<std::size_t>(head.weight.rows()));
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
    double acc = head.bias(r);
    for (Eigen::Index c = 0; c < head.weight.cols(); ++c) acc += head.weight(r, c) * upsilon[static_cast<std::size_t>(c)];
    z[static_cast<std::size_t>(r)] = acc;
  }
  const double lse = log_sum_exp(z);
  for (double& v : z) v = std::exp(v - lse);
  return z;
}

int path_nodes(const std::vector<dmoe::TaxonomyNode>& nodes, int leaf_a, int leaf_b) {
  std::map<int, int> parent;
  for (const auto& n : nodes) parent[n.id] = n.parent ? *n.parent : -1;
  auto chain = [&](int id) {
    std::vector<int> out{id};
    while (parent.at(out.back()) != -1) out.push_back(parent.at(out.back()));
    return out;
  };
  const auto a = chain(leaf_a);
  const auto b = chain(leaf_b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (a[i] == b[j]) return static_cast<int>(i + j + 1);
    }
  }
  throw std::logic_error("leaves share no ancestor");
}

std::vector<int> canonical(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  for (int l : labels) {
    auto it = remap.find(l);
    if (it == remap.end()) it = remap.emplace(l, static_cast<int>(remap.size())).first;
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> min_ncut_partition(const Matrix& affinity, int k) {
  const int n = static_cast<int>(affinity.rows());
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) degree[static_cast<std::size_t>(i)] += affinity(i, j);

  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  // Restricted growth strings enumerate each set partition exactly once.
  std::vector<int> rgs(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int pos, int used) {
    if (used + (n - pos) < k) return;
    if (pos == n) {
      if (used != k) return;
      double cost = 0.0;
      for (int b = 0; b < k; ++b) {
        double cut = 0.0, vol = 0.0;
        for (int i = 0; i < n; ++i) {
          if (rgs[static_cast<std::size_t>(i)] != b) continue;
          vol += degree[static_cast<std::size_t>(i)];
          for (int j = 0; j < n; ++j)
            if (rgs[static_cast<std::size_t>(j)] != b) cut += affinity(i, j);
        }
        if (vol > 0.0) cost += cut / vol;
      }
      if (cost < best_cost - 1e-12) {
        best_cost = cost;
        best = rgs;
      }
      return;
    }
    for (int b = 0; b <= std::min(used, k - 1); ++b) {
      rgs[static_cast<std::size_t>(pos)] = b;
      rec(pos + 1, std::max(used, b + 1));
    }
  };
  rec(0, 0);
  return best;
}

Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double step) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const double up = f(probe);
    probe(i) = x(i) - step;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Vector& a, const Vector& b, double floor) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

}  // namespace oracle
