// wsseg - weakly supervised point cloud segmentation
//
// JSON run configuration. Every field is optional and falls back to the
// module default; unknown keys and type mismatches are rejected with the
// dotted JSON path of the offending entry.
//
// {
//   "scene":       {"num_points", "num_classes", "extent", "color_noise", "seed", "count"},
//   "training":    {"max_epoch", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps",
//                   "batch", "seed", "warmup_epoch", "lambda_mode", "lambda_constant",
//                   "points_per_step", "val_every", "hidden", "embedding_dim", "knn_k",
//                   "stats_epsilon"},
//   "propagation": {"sigma", "k_top"},
//   "paths":       {"val_scenes"}
// }

#ifndef WSSEG_CONFIG_HPP
#define WSSEG_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "wsseg/core/io.hpp"
#include "wsseg/core/scene.hpp"
#include "wsseg/training.hpp"

namespace wsseg {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RunConfig {
  SceneSpec scene;
  std::size_t scene_count = 10;
  TrainConfig training;
  std::string val_scenes;  ///< optional directory of validation PLYs
};

namespace detail {

class JsonReader {
 public:
  using Handler = std::function<void(const nlohmann::json&, const std::string&)>;

  void field(const std::string& key, Handler h) { handlers_[key] = std::move(h); }

  void read(const nlohmann::json& obj, const std::string& path) const {
    if (!obj.is_object()) throw ConfigError((path.empty() ? std::string("<root>") : path) + ": expected object");
    for (const auto& [key, value] : obj.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) throw ConfigError("unknown key: " + sub);
      it->second(value, sub);
    }
  }

 private:
  std::map<std::string, Handler> handlers_;
};

template <typename Int>
JsonReader::Handler int_field(Int& target, long long min_value) {
  return [&target, min_value](const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected integer");
    const auto x = v.get<long long>();
    if (x < min_value) throw ConfigError(path + ": must be >= " + std::to_string(min_value));
    target = static_cast<Int>(x);
  };
}

inline JsonReader::Handler seed_field(std::uint64_t& target) {
  return [&target](const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected integer");
    target = v.is_number_unsigned() ? v.get<std::uint64_t>() : static_cast<std::uint64_t>(v.get<long long>());
  };
}

inline JsonReader::Handler real_field(double& target) {
  return [&target](const nlohmann::json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected number");
    target = v.get<double>();
  };
}

}  // namespace detail

inline RunConfig parse_config_json(const nlohmann::json& root) {
  using namespace detail;
  RunConfig cfg;

  JsonReader scene;
  scene.field("num_points", int_field(cfg.scene.num_points, 1));
  scene.field("num_classes", int_field(cfg.scene.num_classes, 2));
  scene.field("extent", real_field(cfg.scene.extent));
  scene.field("color_noise", real_field(cfg.scene.color_noise));
  scene.field("seed", seed_field(cfg.scene.seed));
  scene.field("count", int_field(cfg.scene_count, 1));

  TrainConfig& t = cfg.training;
  JsonReader training;
  training.field("max_epoch", int_field(t.max_epoch, 1));
  training.field("learning_rate", real_field(t.learning_rate));
  training.field("adam_beta1", real_field(t.adam_beta1));
  training.field("adam_beta2", real_field(t.adam_beta2));
  training.field("adam_eps", real_field(t.adam_eps));
  training.field("batch", int_field(t.batch, 1));
  training.field("seed", seed_field(t.seed));
  training.field("warmup_epoch", int_field(t.warmup_epoch, 0));
  training.field("lambda_mode", [&t](const nlohmann::json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected string");
    const auto s = v.get<std::string>();
    if (s == "nonlinear") t.lambda_mode = LambdaMode::kNonlinear;
    else if (s == "constant") t.lambda_mode = LambdaMode::kConstant;
    else if (s == "disabled") t.lambda_mode = LambdaMode::kDisabled;
    else throw ConfigError(path + ": expected one of nonlinear, constant, disabled");
  });
  training.field("lambda_constant", real_field(t.lambda_constant));
  training.field("points_per_step", int_field(t.points_per_step, 0));
  training.field("val_every", int_field(t.val_every, 1));
  training.field("hidden", int_field(t.hidden, 4));
  training.field("embedding_dim", int_field(t.embedding_dim, 2));
  training.field("knn_k", int_field(t.knn_k, 1));
  training.field("stats_epsilon", real_field(t.stats_epsilon));

  JsonReader propagation;
  propagation.field("sigma", [&t](const nlohmann::json& v, const std::string& path) {
    if (v.is_null()) {
      t.propagation.sigma.reset();
      return;
    }
    if (!v.is_number()) throw ConfigError(path + ": expected number or null");
    t.propagation.sigma = v.get<double>();
  });
  propagation.field("k_top", int_field(t.propagation.k_top, 1));

  JsonReader paths;
  paths.field("val_scenes", [&cfg](const nlohmann::json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected string");
    cfg.val_scenes = v.get<std::string>();
  });

  JsonReader top;
  top.field("scene", [&](const nlohmann::json& v, const std::string& p) { scene.read(v, p); });
  top.field("training", [&](const nlohmann::json& v, const std::string& p) { training.read(v, p); });
  top.field("propagation", [&](const nlohmann::json& v, const std::string& p) { propagation.read(v, p); });
  top.field("paths", [&](const nlohmann::json& v, const std::string& p) { paths.read(v, p); });
  top.read(root, "");

  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  if (!(cfg.scene.extent > 0.0)) throw ConfigError("scene.extent: must be positive");
  if (!(cfg.scene.color_noise >= 0.0 && cfg.scene.color_noise <= 0.2))
    throw ConfigError("scene.color_noise: must lie in [0, 0.2]");
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config_json(j);
}

}  // namespace wsseg

#endif  // WSSEG_CONFIG_HPP
