#include "maskedit/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "maskedit/checkpoint.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/losses.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {
namespace {

using nlohmann::json;

Tensor stack_planes(const std::vector<const Image*>& images) {
  const Image& first = *images.front();
  std::vector<double> data;
  data.reserve(images.size() * first.data.size());
  for (const Image* img : images) data.insert(data.end(), img->data.begin(), img->data.end());
  return Tensor::from({static_cast<int>(images.size()), first.channels, first.height, first.width}, std::move(data));
}

Image attention_strip(const Tensor& attn) {
  // One grey tile per channel, batch entry 0.
  const int m = attn.dim(1), h = attn.dim(2), w = attn.dim(3);
  std::vector<Image> tiles;
  for (int i = 0; i < m; ++i) {
    Image t = Image::zeros(1, h, w);
    std::copy_n(attn.values().begin() + static_cast<std::ptrdiff_t>(i) * h * w, h * w, t.data.begin());
    tiles.push_back(std::move(t));
  }
  return tile_row(tiles);
}

void write_snapshot(const std::filesystem::path& dir, std::int64_t step, const Batch& batch, const StepOutputs& out) {
  const auto& f = out.forward;
  std::vector<Image> tiles{Image::from_tensor(batch.y_B),         Image::from_tensor(batch.y_A),
                           Image::from_tensor(batch.x_A),         Image::from_tensor(f.result.mask),
                           Image::from_tensor(f.result.image),    Image::from_tensor(f.pseudo.image),
                           Image::from_tensor(out.cycle)};
  save_png(tile_row(tiles), dir / ("step_" + std::to_string(step) + "_images.png"));
  save_png(attention_strip(f.attention_I), dir / ("step_" + std::to_string(step) + "_attention_I.png"));
  save_png(attention_strip(f.attention_T), dir / ("step_" + std::to_string(step) + "_attention_T.png"));
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("manifest " + path.string() + " not found");
  DatasetManifest m;
  const auto base = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      DatasetRecord r{j.at("image").get<std::string>(), j.at("mask").get<std::string>()};
      for (std::string* p : {&r.image, &r.mask})
        if (std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
      if (j.contains("split")) m.split = j.at("split").get<std::string>();
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& r : records) out << json{{"image", r.image}, {"mask", r.mask}}.dump() << "\n";
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest, int resolution) {
  if (manifest.records.empty()) throw FormatError("dataset manifest is empty");
  std::vector<Sample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    if (!std::filesystem::exists(r.mask)) throw FormatError("mask " + r.mask + " does not exist");
    Image image = load_image(r.image);
    BinaryMask mask = load_mask(r.mask);
    if (mask.height != image.height || mask.width != image.width)
      throw FormatError("mask " + r.mask + " is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                        ", image is " + std::to_string(image.height) + "x" + std::to_string(image.width));
    out.push_back({resize(image, resolution, resolution), threshold(resize(mask, resolution, resolution))});
  }
  return out;
}

SynthesizedPair synthesize_pair(const BinaryMask& y_A, const geometry::TpsConfig& tps, std::uint64_t seed) {
  if (y_A.channels != 1) throw ShapeError("synthesize_pair expects a single-channel mask");
  if (count_foreground(y_A) == 0) return {y_A, true};
  const auto field = geometry::apply_tps(geometry::random_tps(tps, seed),
                                         geometry::make_identity_grid(y_A.height, y_A.width));
  return {threshold(geometry::sample(y_A, field, Padding::Zeros), 0.5), false};
}

void adam_update(AdamState& state, const nn::NamedTensors& params, const TrainConfig& c,
                 const std::function<bool(const std::string&)>& selected) {
  ++state.step;
  for (const auto& [name, param] : params) {
    if (selected && !selected(name)) continue;
    Tensor p = param;
    const std::size_t n = p.numel();
    AdamSlot& slot = state.slots[name];
    if (slot.m.size() != n) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(c.beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(c.beta2, static_cast<double>(slot.t));
    const auto g = p.grad();
    const bool has = p.has_grad();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has ? g[i] : 0.0;
      slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * gi;
      slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * gi * gi;
      w[i] -= c.learning_rate * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + c.adam_epsilon);
    }
  }
}

TrainState TrainState::create(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.pipeline = Pipeline::create(config.model, config.seed);
  s.rng.seed(config.seed ^ 0x9e3779b97f4a7c15ull);
  return s;
}

Batch next_batch(TrainState& state, const std::vector<Sample>& dataset) {
  if (dataset.empty()) throw FormatError("dataset is empty");
  const TrainConfig& c = state.config;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(dataset.size()) - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Batch b;
  std::vector<BinaryMask> x_masks;
  std::vector<const Image*> ya, yb, xa;
  for (int i = 0; i < c.batch_size; ++i) {
    const int idx = pick(state.rng);
    const std::uint64_t pair_seed = state.rng();
    const std::uint64_t eq_seed = state.rng();
    const bool identity = unit(state.rng) < c.identity_pair_probability;
    const Sample& s = dataset[static_cast<std::size_t>(idx)];
    if (s.image.height != c.resolution || s.image.width != c.resolution)
      throw ShapeError("dataset sample does not match the training resolution");
    x_masks.push_back(identity ? s.mask : synthesize_pair(s.mask, c.pair_tps, pair_seed).x_A);
    b.equivariance_tps.push_back(geometry::random_tps(c.equivariance_tps, eq_seed));
    b.indices.push_back(idx);
    ya.push_back(&s.mask);
    yb.push_back(&s.image);
  }
  for (const auto& m : x_masks) xa.push_back(&m);
  b.x_A = stack_planes(xa);
  b.y_A = stack_planes(ya);
  b.y_B = stack_planes(yb);
  return b;
}

StepReport train_step(TrainState& state, const Batch& batch, StepOutputs* outputs) {
  const TrainConfig& c = state.config;
  const Pipeline& p = state.pipeline;
  const nn::NamedTensors params = p.parameters();
  for (const auto& [name, t] : params) Tensor(t).zero_grad();

  ForwardOutput f = forward(p, batch.x_A, batch.y_A, batch.y_B, true);
  const Tensor cycle = cycle_pass(p, batch.y_A, f.pseudo, c.detach_cycle);
  const FeatureExtractor& phi = default_features();

  LossTerms terms;
  terms.eq = equivariance_loss(p.correspondence, f.exemplar, batch.equivariance_tps);
  terms.perc = perceptual_loss(f.result.image, f.pseudo.image, phi);
  terms.context = contextual_loss(f.result.image, f.pseudo.image, c.contextual, phi);
  terms.bound = boundary_iou_loss(f.corr.warped_masks, batch.x_A, c.boundary_dilation);
  const MaskLosses ml = mask_alignment_losses(f.result.mask, f.pseudo.mask, batch.x_A);
  terms.mask_I = ml.transport;
  terms.mask_T = ml.guidance;
  terms.rec = reconstruction_loss(f.result.image, f.pseudo.image);
  terms.cyc = cycle_loss(batch.y_B, cycle);
  TotalLoss total = total_loss(terms, c.loss_weights);

  for (const auto& [name, v] : total.breakdown)
    if (!std::isfinite(v)) {
      std::string what = "non-finite loss at step " + std::to_string(state.step + 1) + ":";
      for (const auto& [n2, v2] : total.breakdown) what += " " + n2 + "=" + std::to_string(v2);
      throw NumericError(what, total.breakdown);
    }

  total.total.backward();

  StepReport report;
  std::function<bool(const std::string&)> selected;
  if (c.update_mode == UpdateMode::RoundRobin) {
    const std::string seg = kSegments[state.step % 3];
    selected = [seg](const std::string& name) { return name.rfind(seg + ".", 0) == 0; };
    report.updated_segments = {seg};
  } else {
    report.updated_segments.assign(std::begin(kSegments), std::end(kSegments));
  }
  adam_update(state.optimizer, params, c, selected);
  ++state.step;
  report.step = state.step;
  report.breakdown = std::move(total.breakdown);
  if (outputs) *outputs = {std::move(f), cycle};
  return report;
}

TrainLoopResult train_loop(const TrainConfig& config, const std::vector<Sample>& dataset,
                           const TrainLoopOptions& options) {
  if (dataset.empty()) throw FormatError("dataset is empty");
  TrainLoopResult result;
  if (options.resume) {
    result.state = load_checkpoint(*options.resume);
  } else {
    result.state = TrainState::create(config);
  }
  TrainState& state = result.state;
  const int total_steps = options.steps.value_or(config.steps);
  const auto& out = options.out_dir;
  std::filesystem::create_directories(out / "snapshots");
  std::ofstream metrics(out / "metrics.jsonl", options.resume ? std::ios::app : std::ios::trunc);

  auto checkpoint = [&](bool latest_only) {
    if (!latest_only) save_checkpoint(state, out / ("checkpoint_" + std::to_string(state.step) + ".bin"));
    result.checkpoint = out / "checkpoint_latest.bin";
    save_checkpoint(state, result.checkpoint);
  };

  if (state.step == 0) checkpoint(false);
  const auto start = std::chrono::steady_clock::now();
  while (state.step < total_steps) {
    const Batch batch = next_batch(state, dataset);
    StepOutputs outputs;
    StepReport report;
    try {
      report = train_step(state, batch, &outputs);
    } catch (const NumericError& e) {
      std::ofstream dump(out / "nonfinite_dump.json");
      dump << json{{"step", state.step + 1}, {"breakdown", e.breakdown()}, {"indices", batch.indices}}.dump(2);
      throw;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json rec{{"step", report.step}, {"seconds", seconds}};
    for (const auto& [k, v] : report.breakdown) rec[k] = v;
    metrics << rec.dump() << "\n";
    metrics.flush();
    if (options.on_step) options.on_step(report);
    result.history.push_back(std::move(report));
    if (state.config.snapshot_every > 0 && state.step % state.config.snapshot_every == 0)
      write_snapshot(out / "snapshots", state.step, batch, outputs);
    if (state.config.checkpoint_every > 0 && state.step % state.config.checkpoint_every == 0) checkpoint(false);
  }
  checkpoint(true);
  return result;
}

}  // namespace maskedit
