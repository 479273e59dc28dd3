#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "vlabel/model.hpp"
#include "vlabel/train.hpp"

namespace vlabel {

inline constexpr const char* kVersion = "0.1.0";

/// Everything a run needs, resolved before it starts.
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train{};
  std::string data;  // manifest path
  std::string out = "run";
  std::uint64_t seed = 1;  // master seed; copied into train.seed
  bool paper_mode = false;
};

/// Command-line values that take precedence over the config file.
struct ConfigOverrides {
  bool paper_mode = false;
  std::optional<double> learning_rate;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> data;
  std::optional<std::string> out;
};

/// Defaults (desk, or paper with paper_mode), then the file, then the flags.
/// An empty path or an empty file means defaults only.
RunConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& flags = {});
RunConfig run_config_from_json(const nlohmann::json& j, const ConfigOverrides& flags = {});

nlohmann::json to_json(const RunConfig& cfg);

/// Writes run.json (config echo, master seed, versions) into dir.
void write_run_record(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command);

}  // namespace vlabel
