#include "dmoe/experiment_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "dmoe/error.hpp"

namespace dmoe {

std::string to_string(OntologySource s) { return s == OntologySource::semantic ? "semantic" : "visual"; }
std::string to_string(Assignment a) { return a == Assignment::tree ? "tree" : "random"; }
std::string to_string(FusionMode f) { return f == FusionMode::late ? "late" : "early"; }

void ExperimentConfig::validate() const {
  if (ks.empty()) throw InvalidArgument("ks must not be empty");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw InvalidArgument("every k must be at least 1");
    if (i > 0 && ks[i] <= ks[i - 1]) throw InvalidArgument("ks must be strictly ascending");
  }
  if (!(lambda >= 0.0 && lambda < 1.0)) throw InvalidArgument("lambda must lie in [0, 1)");
  if (group_size < 1) throw InvalidArgument("group_size must be at least 1");
  if (categories < 0) throw InvalidArgument("categories must be >= 0");
  if (workers < 1) throw InvalidArgument("workers must be at least 1");
  if (data_path.empty()) synth.validate();
  train.validate();
  fusion_cfg.head.validate();
  if (fusion_cfg.refine_epochs < 0 || fusion_cfg.refine_batch_size < 1 || !(fusion_cfg.refine_learning_rate > 0.0)) {
    throw InvalidArgument("bad end-to-end refinement settings");
  }
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw InvalidArgument("bad value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw InvalidArgument("bad boolean '" + text + "' for " + key);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, item));
  return out;
}

std::string join(const std::vector<int>& xs, const std::string& empty) {
  if (xs.empty()) return empty;
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  bool hashed = true;  // execution-only settings stay out of the hash and echo
};

#define DMOE_INT(name, member)                                                           \
  Field {                                                                                \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },            \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<decltype(c.member)>(name, v); } \
  }
#define DMOE_REAL(name, member)                                                          \
  Field {                                                                                \
    name, [](const ExperimentConfig& c) { return fmt(c.member); },                       \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); } \
  }
#define DMOE_BOOL(name, member)                                                          \
  Field {                                                                                \
    name, [](const ExperimentConfig& c) { return fmt(c.member); },                       \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"data_path", [](const ExperimentConfig& c) { return c.data_path; },
            [](ExperimentConfig& c, const std::string& v) { c.data_path = v; }},
      Field{"taxonomy_path", [](const ExperimentConfig& c) { return c.taxonomy_path; },
            [](ExperimentConfig& c, const std::string& v) { c.taxonomy_path = v; }},
      DMOE_INT("n_categories", synth.n_categories),
      DMOE_INT("classes_per_category", synth.classes_per_category),
      DMOE_INT("dim", synth.dim),
      DMOE_INT("samples_per_class", synth.samples_per_class),
      DMOE_REAL("category_spread", synth.category_spread),
      DMOE_REAL("class_spread", synth.class_spread),
      DMOE_REAL("train_fraction", synth.train_fraction),
      DMOE_INT("data_seed", synth.seed),
      Field{"ontology", [](const ExperimentConfig& c) { return to_string(c.ontology); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "semantic") c.ontology = OntologySource::semantic;
              else if (v == "visual") c.ontology = OntologySource::visual;
              else throw InvalidArgument("ontology must be semantic or visual");
            }},
      DMOE_INT("categories", categories),
      DMOE_INT("group_size", group_size),
      DMOE_REAL("lambda", lambda),
      Field{"assignment", [](const ExperimentConfig& c) { return to_string(c.assignment); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "tree") c.assignment = Assignment::tree;
              else if (v == "random") c.assignment = Assignment::random;
              else throw InvalidArgument("assignment must be tree or random");
            }},
      DMOE_REAL("mu", train.mu),
      DMOE_REAL("delta1", train.delta1),
      DMOE_REAL("delta2", train.delta2),
      DMOE_REAL("learning_rate", train.learning_rate),
      DMOE_REAL("momentum", train.momentum),
      DMOE_REAL("lr_decay", train.lr_decay),
      DMOE_INT("lr_decay_every", train.lr_decay_every),
      DMOE_INT("epochs", train.epochs),
      DMOE_INT("batch_size", train.batch_size),
      DMOE_INT("sim_refresh_period", train.sim_refresh_period),
      DMOE_INT("train_samples_per_class", train.samples_per_class),
      DMOE_INT("sentinel_samples", train.sentinel_samples),
      DMOE_BOOL("freeze_class_components", train.freeze_class_components),
      DMOE_BOOL("standardize_inputs", train.standardize_inputs),
      Field{"hidden", [](const ExperimentConfig& c) { return join(c.train.backbone.hidden, "none"); },
            [](ExperimentConfig& c, const std::string& v) { c.train.backbone.hidden = parse_int_list("hidden", v); }},
      Field{"activation", [](const ExperimentConfig& c) { return to_string(c.train.backbone.activation); },
            [](ExperimentConfig& c, const std::string& v) { c.train.backbone.activation = activation_from_string(v); }},
      Field{"bandwidth",
            [](const ExperimentConfig& c) { return c.train.kernel.bandwidth ? fmt(*c.train.kernel.bandwidth) : "auto"; },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto") c.train.kernel.bandwidth.reset();
              else c.train.kernel.bandwidth = parse_number<double>("bandwidth", v);
            }},
      Field{"variant", [](const ExperimentConfig& c) { return to_string(c.variant); },
            [](ExperimentConfig& c, const std::string& v) { c.variant = stacking_variant_from_string(v); }},
      Field{"fusion", [](const ExperimentConfig& c) { return to_string(c.fusion); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "late") c.fusion = FusionMode::late;
              else if (v == "early") c.fusion = FusionMode::early;
              else throw InvalidArgument("fusion must be late or early");
            }},
      DMOE_REAL("head_learning_rate", fusion_cfg.head.learning_rate),
      DMOE_REAL("head_momentum", fusion_cfg.head.momentum),
      DMOE_REAL("head_lr_decay", fusion_cfg.head.lr_decay),
      DMOE_INT("head_lr_decay_every", fusion_cfg.head.lr_decay_every),
      DMOE_INT("head_epochs", fusion_cfg.head.epochs),
      DMOE_INT("head_batch_size", fusion_cfg.head.batch_size),
      DMOE_REAL("head_weight_decay", fusion_cfg.head.weight_decay),
      DMOE_BOOL("head_identity_init", fusion_cfg.identity_init),
      DMOE_BOOL("end_to_end", fusion_cfg.end_to_end),
      DMOE_INT("refine_epochs", fusion_cfg.refine_epochs),
      DMOE_REAL("refine_learning_rate", fusion_cfg.refine_learning_rate),
      Field{"ks", [](const ExperimentConfig& c) { return join(c.ks, ""); },
            [](ExperimentConfig& c, const std::string& v) { c.ks = parse_int_list("ks", v); }},
      DMOE_INT("seed", seed),
      Field{"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
            [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }, false},
      Field{"workers", [](const ExperimentConfig& c) { return std::to_string(c.workers); },
            [](ExperimentConfig& c, const std::string& v) { c.workers = parse_number<int>("workers", v); }, false},
  };
  return table;
}

#undef DMOE_INT
#undef DMOE_REAL
#undef DMOE_BOOL

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw InvalidArgument("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

std::string get_setting(const ExperimentConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_settings(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) apply_setting(cfg, k, v);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
  ExperimentConfig cfg;
  apply_settings(cfg, parse_key_values(in));
  return cfg;
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    if (f.hashed) out += f.key + "=" + f.get(cfg) + "\n";
  }
  return out;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_text(cfg))));
  return buf;
}

StageSeeds stage_seeds(const ExperimentConfig& cfg) {
  return StageSeeds{cfg.synth.seed, derive_seed(cfg.seed, 1), derive_seed(cfg.seed, 2), derive_seed(cfg.seed, 3),
                    derive_seed(cfg.seed, 4)};
}

}  // namespace dmoe
