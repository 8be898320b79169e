#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskedit/geometry.hpp"
#include "maskedit/losses.hpp"
#include "maskedit/pipeline.hpp"

namespace maskedit {

enum class UpdateMode { Joint, RoundRobin };

struct TrainConfig {
  std::uint64_t seed = 1;
  int steps = 2000;
  int batch_size = 4;
  int resolution = 64;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  UpdateMode update_mode = UpdateMode::Joint;
  bool detach_cycle = false;
  int boundary_dilation = 2;
  // Fraction of pairs trained with x_A = y_A (no deformation).
  double identity_pair_probability = 0.0;
  int checkpoint_every = 500;
  int snapshot_every = 500;

  ModelConfig model;
  LossWeights loss_weights;
  ContextualConfig contextual;
  geometry::TpsConfig pair_tps;
  geometry::TpsConfig equivariance_tps;

  // Throws DimensionError on out-of-range values.
  void validate() const;

  // K=4, 64x64, batch 1: the CPU smoke-test scale.
  static TrainConfig desk_scale();
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

// YAML file plus "dotted.key=value" overrides (values parsed as YAML scalars).
TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides);

nlohmann::json yaml_file_to_json(const std::filesystem::path& path);

}  // namespace maskedit
