#include "dmoe/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "dmoe/error.hpp"
#include "json.hpp"

namespace dmoe {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Matrix matrix_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ParseError(0, "ragged matrix in checkpoint");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json config_json(const TrainConfig& cfg) {
  json j;
  j["mu"] = cfg.mu;
  j["delta1"] = cfg.delta1;
  j["delta2"] = cfg.delta2;
  j["learning_rate"] = cfg.learning_rate;
  j["momentum"] = cfg.momentum;
  j["lr_decay"] = cfg.lr_decay;
  j["lr_decay_every"] = cfg.lr_decay_every;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["sim_refresh_period"] = cfg.sim_refresh_period;
  j["samples_per_class"] = cfg.samples_per_class;
  j["sentinel_samples"] = cfg.sentinel_samples;
  j["freeze_class_components"] = cfg.freeze_class_components;
  j["standardize_inputs"] = cfg.standardize_inputs;
  j["seed"] = cfg.seed;
  j["backbone_hidden"] = cfg.backbone.hidden;
  j["activation"] = to_string(cfg.backbone.activation);
  j["kernel_bandwidth"] = cfg.kernel.bandwidth ? json(*cfg.kernel.bandwidth) : json(nullptr);
  j["kernel_max_pairs"] = cfg.kernel.max_bandwidth_pairs;
  j["kernel_seed"] = cfg.kernel.seed;
  return j;
}

TrainConfig config_from(const json& j) {
  TrainConfig cfg;
  cfg.mu = j.at("mu").get<double>();
  cfg.delta1 = j.at("delta1").get<double>();
  cfg.delta2 = j.at("delta2").get<double>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.lr_decay = j.at("lr_decay").get<double>();
  cfg.lr_decay_every = j.at("lr_decay_every").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.sim_refresh_period = j.at("sim_refresh_period").get<int>();
  cfg.samples_per_class = j.at("samples_per_class").get<int>();
  cfg.sentinel_samples = j.at("sentinel_samples").get<int>();
  cfg.freeze_class_components = j.at("freeze_class_components").get<bool>();
  cfg.standardize_inputs = j.value("standardize_inputs", true);
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.backbone.hidden = j.at("backbone_hidden").get<std::vector<int>>();
  cfg.backbone.activation = activation_from_string(j.at("activation").get<std::string>());
  if (!j.at("kernel_bandwidth").is_null()) cfg.kernel.bandwidth = j.at("kernel_bandwidth").get<double>();
  cfg.kernel.max_bandwidth_pairs = j.at("kernel_max_pairs").get<std::size_t>();
  cfg.kernel.seed = j.at("kernel_seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("training config json: ") + e.what());
  }
}

std::string expert_to_json(const ExpertModel& model, const TrainConfig& cfg) {
  json j;
  j["format_version"] = kExpertFormatVersion;
  j["group"] = {{"index", model.group.index}, {"members", model.group.members}};
  j["config"] = config_json(cfg);
  json layers = json::array();
  for (const auto& l : model.backbone.layers()) {
    layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  }
  j["backbone_params"] = {{"input_dim", model.backbone.input_dim()},
                          {"activation", to_string(model.backbone.activation())},
                          {"input_shift", vector_to_json(model.backbone.input_shift())},
                          {"input_scale", vector_to_json(model.backbone.input_scale())},
                          {"layers", layers}};
  j["W0"] = vector_to_json(model.w0);
  // One row per class slot.
  j["V"] = matrix_to_json(model.v.transpose());
  j["w_nig"] = vector_to_json(model.w_nig);
  j["b"] = vector_to_json(model.bias);
  j["loss_trajectory"] = model.loss_trajectory;
  return j.dump();
}

ExpertCheckpoint expert_from_json(const std::string& text) {
  ExpertCheckpoint ck;
  try {
    const json j = json::parse(text);
    const int version = j.at("format_version").get<int>();
    if (version != kExpertFormatVersion) {
      throw ParseError(0, "unsupported expert checkpoint version " + std::to_string(version));
    }
    ck.config = config_from(j.at("config"));
    ck.model.group.index = j.at("group").at("index").get<int>();
    ck.model.group.members = j.at("group").at("members").get<std::vector<ClassId>>();

    const auto& bp = j.at("backbone_params");
    std::vector<DenseLayer> layers;
    for (const auto& l : bp.at("layers")) layers.push_back({matrix_from_json(l.at("weight")), vector_from_json(l.at("bias"))});
    ck.model.backbone = Backbone(bp.at("input_dim").get<int>(), std::move(layers),
                                 activation_from_string(bp.at("activation").get<std::string>()));
    if (bp.contains("input_shift")) {
      ck.model.backbone.set_input_normalization(vector_from_json(bp.at("input_shift")),
                                                vector_from_json(bp.at("input_scale")));
    }
    ck.model.w0 = vector_from_json(j.at("W0"));
    ck.model.v = matrix_from_json(j.at("V"), ck.model.w0.size()).transpose();
    ck.model.w_nig = vector_from_json(j.at("w_nig"));
    ck.model.bias = vector_from_json(j.at("b"));
    ck.model.loss_trajectory = j.at("loss_trajectory").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("expert checkpoint: ") + e.what());
  }
  const auto& m = ck.model;
  const int d = m.backbone.output_dim();
  if (m.w0.size() != d || m.v.rows() != d || m.v.cols() != m.group.size() || m.w_nig.size() != d ||
      m.bias.size() != m.group.size() + 1) {
    throw ParseError(0, "expert checkpoint has inconsistent shapes");
  }
  return ck;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

void save_expert(const std::string& path, const ExpertModel& model, const TrainConfig& cfg) {
  write_text_file(path, expert_to_json(model, cfg));
}

ExpertCheckpoint load_expert(const std::string& path) { return expert_from_json(read_text_file(path)); }

}  // namespace dmoe
