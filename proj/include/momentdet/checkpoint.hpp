#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>

#include "momentdet/model.hpp"

namespace momentdet {

/// Versioned container: a JSON config echo plus named float64 parameter
/// arrays. Loading validates the magic/version and returns the raw contents;
/// load_into() checks that the parameter set matches the model exactly.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config_echo,
                     const ParamStore& params);

struct CheckpointData {
  nlohmann::json config;
  std::map<std::string, Mat> params;
};

CheckpointData load_checkpoint(const std::filesystem::path& path);

void load_into(Model& model, const std::map<std::string, Mat>& params);

}  // namespace momentdet
