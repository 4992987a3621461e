#pragma once

#include "poserac/checkpoint.hpp"
#include "poserac/counter.hpp"
#include "poserac/csv.hpp"
#include "poserac/data_model.hpp"
#include "poserac/model.hpp"
#include "poserac/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>

namespace poserac {

// Everything a command needs, assembled from built-in defaults, then the JSON
// config file, then command-line flags.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  counting::TriggerConfig trigger;
  data::ClassRegistry classes = data::default_class_registry();
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    train.validate();
    trigger.validate();
    if (classes.size() != model.num_classes) throw ConfigError("class registry size does not match num_classes");
  }
};

namespace detail {
template <class T>
T get_as(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}
}  // namespace detail

// Example:
//   {"seed": 7, "classes": ["squat", "push_up"],
//    "model": {"layers": 2}, "train": {"epochs": 3}, "trigger": {"upper": 0.9}}
inline RunConfig parse_run_config(const std::string& text, RunConfig cfg = {}) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      cfg.seed = detail::get_as<std::uint64_t>(value, key);
    } else if (key == "classes") {
      cfg.classes = data::ClassRegistry(detail::get_as<std::vector<std::string>>(value, key));
    } else if (key == "model") {
      try {
        cfg.model = checkpoint::model_config_from_json(value, cfg.model);
      } catch (const ParseError& e) {
        throw ConfigError(e.what());
      }
    } else if (key == "train") {
      if (!value.is_object()) throw ConfigError("config 'train' must be an object");
      for (const auto& [k, v] : value.items()) {
        auto& t = cfg.train;
        if (k == "epochs") t.epochs = detail::get_as<int>(v, k);
        else if (k == "batch_size") t.batch_size = detail::get_as<int>(v, k);
        else if (k == "learning_rate") t.learning_rate = detail::get_as<double>(v, k);
        else if (k == "alpha") t.alpha = detail::get_as<double>(v, k);
        else if (k == "margin") t.margin = detail::get_as<double>(v, k);
        else if (k == "beta1") t.beta1 = detail::get_as<double>(v, k);
        else if (k == "beta2") t.beta2 = detail::get_as<double>(v, k);
        else if (k == "epsilon") t.epsilon = detail::get_as<double>(v, k);
        else throw ConfigError("unknown train config key '" + k + "'");
      }
    } else if (key == "trigger") {
      if (!value.is_object()) throw ConfigError("config 'trigger' must be an object");
      for (const auto& [k, v] : value.items()) {
        auto& t = cfg.trigger;
        if (k == "upper") t.upper = detail::get_as<double>(v, k);
        else if (k == "lower") t.lower = detail::get_as<double>(v, k);
        else if (k == "smoothing_window") t.smoothing_window = detail::get_as<int>(v, k);
        else if (k == "either_order") t.either_order = detail::get_as<bool>(v, k);
        else throw ConfigError("unknown trigger config key '" + k + "'");
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.model.num_classes = cfg.classes.size();
  cfg.train.seed = cfg.seed;
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = csv::read_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text);
}

}  // namespace poserac
