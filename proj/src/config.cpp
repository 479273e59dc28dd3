#include "vlabel/config.hpp"

#include "vlabel/io.hpp"

namespace vlabel {

namespace {

std::uint64_t seed_value(const nlohmann::json& v) {
  if (!v.is_number_unsigned()) throw ConfigError("config key 'seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, const ConfigOverrides& flags) {
  if (!j.is_null() && !j.is_object()) throw ConfigError("config file must hold a JSON object");
  RunConfig cfg;
  cfg.paper_mode = flags.paper_mode;
  Variant variant = Variant::standard;
  if (flags.variant) variant = variant_from_string(*flags.variant);
  if (j.is_object() && j.contains("train") && j["train"].is_object() && j["train"].contains("variant") &&
      !flags.variant) {
    if (!j["train"]["variant"].is_string()) throw ConfigError("config key 'train.variant' has the wrong type");
    variant = variant_from_string(j["train"]["variant"].get<std::string>());
  }
  if (cfg.paper_mode) {
    cfg.model = ModelConfig::paper();
    cfg.train = TrainConfig::paper(variant);
  }
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") {
        cfg.model = model_config_from_json(value, cfg.model);
      } else if (key == "train") {
        if (value.is_object() && value.contains("seed")) {
          throw ConfigError("config key 'train.seed' is not allowed; use the top-level 'seed'");
        }
        cfg.train = train_config_from_json(value, cfg.train);
      } else if (key == "data") {
        if (!value.is_string()) throw ConfigError("config key 'data' must be a string");
        cfg.data = value.get<std::string>();
      } else if (key == "out") {
        if (!value.is_string()) throw ConfigError("config key 'out' must be a string");
        cfg.out = value.get<std::string>();
      } else if (key == "seed") {
        cfg.seed = seed_value(value);
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  }
  cfg.train.variant = variant;
  if (flags.learning_rate) cfg.train.learning_rate = *flags.learning_rate;
  if (flags.epochs) cfg.train.epochs = *flags.epochs;
  if (flags.batch_size) cfg.train.batch_size = *flags.batch_size;
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.data) cfg.data = *flags.data;
  if (flags.out) cfg.out = *flags.out;
  cfg.train.seed = cfg.seed;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& flags) {
  nlohmann::json j;
  if (path) {
    const std::string text = read_file(*path);
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path->string() + ": " + e.what());
      }
    }
  }
  return run_config_from_json(j, flags);
}

nlohmann::json to_json(const RunConfig& cfg) {
  auto train = to_json(cfg.train);
  train.erase("seed");
  return {{"model", to_json(cfg.model)}, {"train", train}, {"data", cfg.data}, {"out", cfg.out}, {"seed", cfg.seed}};
}

void write_run_record(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command) {
  nlohmann::json j{{"command", command},
                   {"paper_mode", cfg.paper_mode},
                   {"seed", cfg.seed},
                   {"config", to_json(cfg)},
                   {"versions",
                    {{"vlabel", kVersion},
                     {"checkpoint_format", 1},
                     {"predictions_format", 1},
                     {"frame_stack_format", 1}}}};
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "run.json", j.dump(2) + "\n");
}

}  // namespace vlabel
