#pragma once

#include "poserac/csv.hpp"
#include "poserac/data_model.hpp"
#include "poserac/error.hpp"
#include "poserac/model.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace poserac::checkpoint {

inline constexpr const char* kFormat = "poserac-checkpoint";
inline constexpr int kVersion = 1;

using nlohmann::json;

inline json model_config_to_json(const model::ModelConfig& c) {
  return json{{"keypoints", c.keypoints},           {"keypoint_dim", c.keypoint_dim}, {"embed_dim", c.embed_dim},
              {"layers", c.layers},                 {"heads", c.heads},               {"head_dim", c.head_dim},
              {"mlp_hidden", c.mlp_hidden},         {"num_classes", c.num_classes},   {"mapping_hidden", c.mapping_hidden},
              {"embedding_hidden", c.embedding_hidden}};
}

// Reads the keys present in `j` over `base`; unknown keys are rejected.
inline model::ModelConfig model_config_from_json(const json& j, model::ModelConfig base = {}) {
  if (!j.is_object()) throw ParseError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "keypoints") base.keypoints = value.get<int>();
      else if (key == "keypoint_dim") base.keypoint_dim = value.get<int>();
      else if (key == "embed_dim") base.embed_dim = value.get<int>();
      else if (key == "layers") base.layers = value.get<int>();
      else if (key == "heads") base.heads = value.get<int>();
      else if (key == "head_dim") base.head_dim = value.get<int>();
      else if (key == "mlp_hidden") base.mlp_hidden = value.get<int>();
      else if (key == "num_classes") base.num_classes = value.get<int>();
      else if (key == "mapping_hidden") base.mapping_hidden = value.get<int>();
      else if (key == "embedding_hidden") base.embedding_hidden = value.get<bool>();
      else throw ParseError("unknown model config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ParseError("model config key '" + key + "': " + e.what());
    }
  }
  return base;
}

struct Checkpoint {
  model::ModelParams params;
  data::ClassRegistry classes;
};

inline std::string to_string(const model::ModelParams& params, const data::ClassRegistry& classes) {
  if (classes.size() != params.config.num_classes) {
    throw ValidationError("checkpoint: class registry size " + std::to_string(classes.size()) +
                          " does not match num_classes " + std::to_string(params.config.num_classes));
  }
  json tensors = json::array();
  model::for_each_tensor(params.weights, params.config.embedding_hidden, [&](const std::string& name, const Matrix& m) {
    if (!all_finite(m)) throw NumericError("checkpoint: tensor '" + name + "' has non-finite values");
    std::vector<double> flat(m.data(), m.data() + m.size());
    tensors.push_back(json{{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", std::move(flat)}});
  });
  json j{{"format", kFormat},
         {"version", kVersion},
         {"config", model_config_to_json(params.config)},
         {"classes", classes.names()},
         {"tensors", std::move(tensors)}};
  return j.dump() + "\n";
}

inline Checkpoint from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) throw ParseError("checkpoint: unrecognized format");
    const int version = j.at("version").get<int>();
    if (version != kVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    ck.params.config = model_config_from_json(j.at("config"));
    ck.params.config.validate();
    ck.classes = data::ClassRegistry(j.at("classes").get<std::vector<std::string>>());
    if (ck.classes.size() != ck.params.config.num_classes) {
      throw ParseError("checkpoint: class list length does not match num_classes");
    }
    ck.params.weights = model::zero_weights(ck.params.config);

    const auto& tensors = j.at("tensors");
    std::size_t i = 0;
    model::for_each_tensor(ck.params.weights, ck.params.config.embedding_hidden, [&](const std::string& name, Matrix& m) {
      if (i >= tensors.size()) throw ParseError("checkpoint: missing tensor '" + name + "'");
      const auto& t = tensors[i++];
      if (t.at("name").get<std::string>() != name) {
        throw ParseError("checkpoint: expected tensor '" + name + "', found '" + t.at("name").get<std::string>() + "'");
      }
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
        throw ParseError("checkpoint: tensor '" + name + "' has wrong shape; expected " + shape_string(m));
      }
      const auto data = t.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != m.size()) {
        throw ParseError("checkpoint: tensor '" + name + "' has wrong element count");
      }
      std::copy(data.begin(), data.end(), m.data());
    });
    if (i != tensors.size()) throw ParseError("checkpoint: unexpected extra tensors");
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

inline void save(const std::string& path, const model::ModelParams& params, const data::ClassRegistry& classes) {
  csv::write_file(path, to_string(params, classes));
}

inline Checkpoint load(const std::string& path) {
  try {
    return from_string(csv::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace poserac::checkpoint
