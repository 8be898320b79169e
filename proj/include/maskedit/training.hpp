#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maskedit/config.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/image.hpp"
#include "maskedit/pipeline.hpp"

namespace maskedit {

struct DatasetRecord {
  std::string image;
  std::string mask;
};

struct DatasetManifest {
  std::vector<DatasetRecord> records;
  std::string split = "train";

  // Newline-delimited JSON {"image": path, "mask": path}; relative paths are
  // resolved against the manifest's directory.
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct Sample {
  RGBImage image;
  BinaryMask mask;
};

// Loads and resizes every record; throws FormatError when a mask is missing
// or does not match its image.
std::vector<Sample> load_dataset(const DatasetManifest& manifest, int resolution);

struct SynthesizedPair {
  BinaryMask x_A;
  bool empty_input = false;  // y_A had no foreground and was returned as is
};

// x_A = threshold(sample(y_A, TPS), 0.5), deterministic per seed.
SynthesizedPair synthesize_pair(const BinaryMask& y_A, const geometry::TpsConfig& tps, std::uint64_t seed);

struct AdamSlot {
  std::int64_t t = 0;  // updates applied to this parameter
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, AdamSlot> slots;  // by parameter name
};

// One bias-corrected Adam update of every named parameter that is selected.
void adam_update(AdamState& state, const nn::NamedTensors& params, const TrainConfig& config,
                 const std::function<bool(const std::string&)>& selected);

struct TrainState {
  TrainConfig config;
  Pipeline pipeline;
  AdamState optimizer;
  std::int64_t step = 0;
  std::mt19937_64 rng;

  static TrainState create(const TrainConfig& config);
};

struct Batch {
  Tensor x_A;  // [B, 1, H, W]
  Tensor y_A;  // [B, 1, H, W]
  Tensor y_B;  // [B, 3, H, W]
  std::vector<geometry::TPSParams> equivariance_tps;
  std::vector<int> indices;
};

// Draws the next batch from the state's generator.
Batch next_batch(TrainState& state, const std::vector<Sample>& dataset);

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::map<std::string, double> breakdown)
      : Error(what), breakdown_(std::move(breakdown)) {}
  const std::map<std::string, double>& breakdown() const { return breakdown_; }

 private:
  std::map<std::string, double> breakdown_;
};

struct StepReport {
  std::int64_t step = 0;  // step counter after the update
  std::map<std::string, double> breakdown;
  std::vector<std::string> updated_segments;
};

struct StepOutputs {
  ForwardOutput forward;
  Tensor cycle;
};

// Forward, losses, backward, one optimizer update.
StepReport train_step(TrainState& state, const Batch& batch, StepOutputs* outputs = nullptr);

struct TrainLoopOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  // Overrides the configured total when set (useful when resuming).
  std::optional<int> steps;
  std::function<void(const StepReport&)> on_step;
};

struct TrainLoopResult {
  TrainState state;
  std::filesystem::path checkpoint;  // final checkpoint
  std::vector<StepReport> history;
};

// Writes metrics.jsonl, checkpoints (checkpoint_<step>.bin and
// checkpoint_latest.bin) and snapshot strips under out_dir.
TrainLoopResult train_loop(const TrainConfig& config, const std::vector<Sample>& dataset,
                           const TrainLoopOptions& options);

}  // namespace maskedit
