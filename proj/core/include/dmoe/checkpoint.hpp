#pragma once

#include <string>

#include "dmoe/expert.hpp"

namespace dmoe {

inline constexpr int kExpertFormatVersion = 1;

struct ExpertCheckpoint {
  ExpertModel model;
  TrainConfig config;
};

// Versioned JSON document: format_version, group, config, backbone_params,
// W0, V, w_nig, b, loss_trajectory. Doubles are written in shortest
// round-trip form so a reload is bit-exact.
std::string expert_to_json(const ExpertModel& model, const TrainConfig& cfg);
ExpertCheckpoint expert_from_json(const std::string& text);

void save_expert(const std::string& path, const ExpertModel& model, const TrainConfig& cfg);
ExpertCheckpoint load_expert(const std::string& path);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dmoe
