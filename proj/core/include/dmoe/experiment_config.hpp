#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dmoe/dataset.hpp"
#include "dmoe/expert.hpp"
#include "dmoe/fusion.hpp"

namespace dmoe {

enum class OntologySource { semantic, visual };
enum class Assignment { tree, random };
enum class FusionMode { late, early };

std::string to_string(OntologySource s);
std::string to_string(Assignment a);
std::string to_string(FusionMode f);

struct ExperimentConfig {
  // Dataset: a feature file when data_path is set, otherwise `synth`.
  std::string data_path;
  std::string taxonomy_path;  // needed by the semantic ontology for file data
  SynthSpec synth;

  OntologySource ontology = OntologySource::semantic;
  int categories = 0;  // k; 0 picks the smallest k with every category <= M

  int group_size = 10;  // M
  double lambda = 0.5;
  Assignment assignment = Assignment::tree;

  TrainConfig train;
  StackingVariant variant = StackingVariant::odds;
  FusionMode fusion = FusionMode::late;
  FusionConfig fusion_cfg;

  std::vector<int> ks{1, 5, 10};
  std::string output_dir;  // empty: nothing is written
  std::uint64_t seed = 1;  // every stage seed is derived from this
  int workers = 1;         // parallel expert trainings

  // ks ascending and >= 1, lambda in [0, 1), nested configs valid.
  void validate() const;
};

// Every recognised key, in canonical order.
const std::vector<std::string>& config_keys();

// Sets one field from its text form; throws InvalidArgument for unknown
// keys or unparsable values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const ExperimentConfig& cfg, const std::string& key);

// `key = value` lines; blank lines and `#` comments are skipped. Throws
// ParseError naming the line.
std::map<std::string, std::string> parse_key_values(std::istream& in);
ExperimentConfig load_config(const std::string& path);
void apply_settings(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv);

// Canonical `key=value` lines in config_keys() order.
std::string config_to_text(const ExperimentConfig& cfg);
// FNV-1a over config_to_text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
std::uint64_t fnv1a(const std::string& text);

// Seeds handed to each stage.
struct StageSeeds {
  std::uint64_t data, ontology, assignment, experts, head;
};
StageSeeds stage_seeds(const ExperimentConfig& cfg);

}  // namespace dmoe
