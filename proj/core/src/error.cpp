#include "dmoe/error.hpp"

#include <utility>

namespace dmoe {

TrainingFailure::TrainingFailure(std::size_t epoch, const std::string& what)
    : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

StageError::StageError(std::string stage, const std::string& cause)
    : Error("[" + stage + "] " + cause), stage_(std::move(stage)) {}

}  // namespace dmoe
