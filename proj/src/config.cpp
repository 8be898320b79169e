#include "maskedit/config.hpp"

#include <yaml-cpp/yaml.h>

#include "maskedit/errors.hpp"

namespace maskedit {
namespace {

using nlohmann::json;

json tps_json(const geometry::TpsConfig& t) {
  return {{"grid_size", t.grid_size}, {"sigma", t.sigma}, {"affine_sigma", t.affine_sigma}};
}

geometry::TpsConfig tps_from(const json& j) {
  return {j.at("grid_size").get<int>(), j.at("sigma").get<double>(), j.at("affine_sigma").get<double>()};
}

json scalar_from_yaml(const YAML::Node& n) {
  const std::string s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "null" || s == "~") return nullptr;
  try {
    std::size_t used = 0;
    const long long i = std::stoll(s, &used);
    if (used == s.size()) return i;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Map: {
      json j = json::object();
      for (const auto& kv : n) j[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return j;
    }
    case YAML::NodeType::Sequence: {
      json j = json::array();
      for (const auto& v : n) j.push_back(yaml_to_json(v));
      return j;
    }
    case YAML::NodeType::Scalar:
      return scalar_from_yaml(n);
    default:
      return nullptr;
  }
}

void reject_unknown(const json& given, const json& known, const std::string& path) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw FormatError("unknown config key " + path + key);
    if (value.is_object()) reject_unknown(value, known.at(key), path + key + ".");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DimensionError("learning_rate must be positive");
  if (steps < 0) throw DimensionError("steps must be nonnegative");
  if (batch_size < 1) throw DimensionError("batch_size must be at least 1");
  if (resolution < 16 || resolution % 16) throw DimensionError("resolution must be a positive multiple of 16");
  if (model.num_keypoints < 1) throw DimensionError("num_keypoints must be at least 1");
  if (!(model.temperature > 0.0)) throw DimensionError("temperature must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw DimensionError("Adam betas must be in [0,1)");
  if (identity_pair_probability < 0.0 || identity_pair_probability > 1.0)
    throw DimensionError("identity_pair_probability must be in [0,1]");
  const LossWeights& w = loss_weights;
  for (double v : {w.eq, w.perc, w.context, w.bound, w.mask, w.rec, w.cyc})
    if (v < 0.0) throw DimensionError("loss weights must be nonnegative");
  if (pair_tps.grid_size < 2 || equivariance_tps.grid_size < 2) throw DimensionError("TPS grid must be at least 2x2");
  if (checkpoint_every < 0 || snapshot_every < 0) throw DimensionError("cadences must be nonnegative");
}

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c;
  c.model.num_keypoints = 4;
  c.resolution = 64;
  c.batch_size = 1;
  return c;
}

json to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  const LossWeights& w = c.loss_weights;
  return {
      {"seed", c.seed},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"resolution", c.resolution},
      {"learning_rate", c.learning_rate},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_epsilon", c.adam_epsilon},
      {"update_mode", c.update_mode == UpdateMode::Joint ? "joint" : "round_robin"},
      {"detach_cycle", c.detach_cycle},
      {"boundary_dilation", c.boundary_dilation},
      {"identity_pair_probability", c.identity_pair_probability},
      {"checkpoint_every", c.checkpoint_every},
      {"snapshot_every", c.snapshot_every},
      {"model",
       {{"num_keypoints", m.num_keypoints},
        {"temperature", m.temperature},
        {"heatmap_size", m.heatmap_size},
        {"predictor_expansion", m.predictor_expansion},
        {"predictor_max_features", m.predictor_max_features},
        {"predictor_blocks", m.predictor_blocks},
        {"attention",
         {{"block_expansion", m.attention.block_expansion},
          {"max_features", m.attention.max_features},
          {"num_blocks", m.attention.num_blocks}}}}},
      {"loss_weights",
       {{"eq", w.eq}, {"perc", w.perc}, {"context", w.context}, {"bound", w.bound}, {"mask", w.mask},
        {"rec", w.rec}, {"cyc", w.cyc}}},
      {"contextual",
       {{"layers", c.contextual.layers},
        {"weights", c.contextual.weights},
        {"bandwidth", c.contextual.bandwidth},
        {"epsilon", c.contextual.epsilon}}},
      {"pair_tps", tps_json(c.pair_tps)},
      {"equivariance_tps", tps_json(c.equivariance_tps)},
  };
}

TrainConfig train_config_from_json(const json& given) {
  const json defaults = to_json(TrainConfig{});
  reject_unknown(given, defaults, "");
  json j = defaults;
  j.merge_patch(given);
  TrainConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.resolution = j.at("resolution").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
    const std::string mode = j.at("update_mode").get<std::string>();
    if (mode == "joint")
      c.update_mode = UpdateMode::Joint;
    else if (mode == "round_robin")
      c.update_mode = UpdateMode::RoundRobin;
    else
      throw FormatError("update_mode must be joint or round_robin, got " + mode);
    c.detach_cycle = j.at("detach_cycle").get<bool>();
    c.boundary_dilation = j.at("boundary_dilation").get<int>();
    c.identity_pair_probability = j.at("identity_pair_probability").get<double>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.snapshot_every = j.at("snapshot_every").get<int>();
    const json& m = j.at("model");
    c.model.num_keypoints = m.at("num_keypoints").get<int>();
    c.model.temperature = m.at("temperature").get<double>();
    c.model.heatmap_size = m.at("heatmap_size").get<int>();
    c.model.predictor_expansion = m.at("predictor_expansion").get<int>();
    c.model.predictor_max_features = m.at("predictor_max_features").get<int>();
    c.model.predictor_blocks = m.at("predictor_blocks").get<int>();
    const json& a = m.at("attention");
    c.model.attention = {a.at("block_expansion").get<int>(), a.at("max_features").get<int>(),
                         a.at("num_blocks").get<int>()};
    const json& w = j.at("loss_weights");
    c.loss_weights = {w.at("eq").get<double>(),  w.at("perc").get<double>(), w.at("context").get<double>(),
                      w.at("bound").get<double>(), w.at("mask").get<double>(), w.at("rec").get<double>(),
                      w.at("cyc").get<double>()};
    const json& cx = j.at("contextual");
    c.contextual.layers = cx.at("layers").get<std::vector<std::string>>();
    c.contextual.weights = cx.at("weights").get<std::vector<double>>();
    c.contextual.bandwidth = cx.at("bandwidth").get<double>();
    c.contextual.epsilon = cx.at("epsilon").get<double>();
    c.pair_tps = tps_from(j.at("pair_tps"));
    c.equivariance_tps = tps_from(j.at("equivariance_tps"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid training config: ") + e.what());
  }
  c.validate();
  return c;
}

json yaml_file_to_json(const std::filesystem::path& path) {
  try {
    return yaml_to_json(YAML::LoadFile(path.string()));
  } catch (const YAML::Exception& e) {
    throw FormatError("cannot parse " + path.string() + ": " + e.what());
  }
}

TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides) {
  json j = to_json(base);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("override must look like key=value: " + item);
    std::string pointer = "/" + item.substr(0, eq);
    for (char& ch : pointer)
      if (ch == '.') ch = '/';
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) throw FormatError("unknown config key " + item.substr(0, eq));
    j[ptr] = yaml_to_json(YAML::Load(item.substr(eq + 1)));
  }
  return train_config_from_json(j);
}

TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(path)) throw NotFoundError("config file " + path.string() + " not found");
  return apply_overrides(train_config_from_json(yaml_file_to_json(path)), overrides);
}

}  // namespace maskedit
