#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "maskedit/checkpoint.hpp"
#include "maskedit/evaluation.hpp"
#include "maskedit/features.hpp"
#include "maskedit/inference.hpp"
#include "maskedit/segmenter.hpp"
#include "maskedit/server.hpp"
#include "maskedit/synthetic.hpp"
#include "maskedit/training.hpp"

namespace fs = std::filesystem;
using namespace maskedit;

namespace {

int train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& data,
          const std::string& out, const std::string& resume, int steps) {
  const TrainConfig config = config_path.empty() ? apply_overrides(TrainConfig::desk_scale(), overrides)
                                                 : load_train_config(config_path, overrides);
  const auto dataset = load_dataset(DatasetManifest::load(data), config.resolution);
  TrainLoopOptions options;
  options.out_dir = out;
  if (!resume.empty()) options.resume = resume;
  if (steps > 0) options.steps = steps;
  options.on_step = [](const StepReport& r) {
    if (r.step % 50 == 0 || r.step == 1) std::cout << "step " << r.step << " loss " << r.breakdown.at("total") << std::endl;
  };
  const auto result = train_loop(config, dataset, options);
  std::cout << "checkpoint " << result.checkpoint.string() << "\n";
  return 0;
}

int evaluate(const std::string& manifest, const std::string& out, const std::vector<std::string>& metrics,
             bool no_lpips, int dilation) {
  ReportOptions options;
  FeatureLpips backend;
  if (!no_lpips) options.lpips_backend = &backend;
  if (!metrics.empty()) options.metrics = metrics;
  options.roi_dilation = dilation;
  const MetricReport report = run_report(load_report_manifest(manifest), options);
  std::ofstream file(out);
  file << (fs::path(out).extension() == ".csv" ? report.to_csv() : report.to_json());
  if (!file) throw Error("cannot write " + out);
  std::cout << report.to_csv();
  return 0;
}

int manipulate_cmd(const std::string& ckpt, const std::string& exemplar, const std::string& exemplar_mask,
                   const std::string& edited_mask, const std::string& out, const std::string& diagnostics,
                   const std::string& segmenter) {
  const auto model = load_model(ckpt);
  const RGBImage y_B = load_image(exemplar);
  MaskBackend backend = MaskFile{exemplar_mask};
  if (exemplar_mask.empty()) {
    if (segmenter.empty()) throw Error("--exemplar-mask or --segmenter is required");
    backend = SegmenterEndpoint{segmenter};
  }
  const ExtractedMask y_A = extract_mask(y_B, backend, MaskPrompt{{{y_B.width / 2.0, y_B.height / 2.0, 1}}, {}});
  for (const auto& w : y_A.warnings) std::cerr << "warning: " << w << "\n";
  // Raw levels so that non-binary edited masks are reported.
  Image x_A = load_image(edited_mask);
  if (x_A.channels == 3) {
    Image grey = Image::zeros(1, x_A.height, x_A.width);
    for (std::size_t p = 0; p < grey.data.size(); ++p)
      grey.data[p] = (x_A.data[p] + x_A.data[p + x_A.plane_size()] + x_A.data[p + 2 * x_A.plane_size()]) / 3.0;
    x_A = grey;
  }
  ManipulationOptions options;
  options.diagnostics = !diagnostics.empty();
  const ManipulationResult r = manipulate(*model, y_B, y_A.mask, x_A, options);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  save_png(r.image, out);
  if (r.diagnostics) {
    const fs::path dir = diagnostics;
    fs::create_directories(dir);
    save_png(r.mask, dir / "mask.png");
    save_png(tile_row(r.diagnostics->attention), dir / "attention.png");
    save_png(tile_row(r.diagnostics->warped_masks), dir / "warped_masks.png");
    save_png(tile_row(r.diagnostics->guidance), dir / "guidance.png");
    nlohmann::json kp{{"source", r.diagnostics->source_keypoints}, {"driver", r.diagnostics->driver_keypoints}};
    std::ofstream(dir / "keypoints.json") << kp.dump(2) << "\n";
  }
  return 0;
}

int serve(const std::string& ckpt, ServerConfig config) {
  if (!fs::exists(ckpt)) throw NotFoundError("checkpoint " + ckpt + " not found");
  // Block the stop signals before any server thread exists; the main
  // thread collects them with sigwait.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(load_model(ckpt), config);
  const int port = server.bind();
  server.start();
  std::cout << "listening on http://" << config.host << ":" << port << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  std::cout << "stopping (draining in-flight requests)" << std::endl;
  server.stop();
  return 0;
}

int make_dataset(const std::string& out, int count, int resolution, std::uint64_t seed) {
  const auto manifest = write_dataset(make_synthetic_dataset(count, resolution, seed), out);
  std::cout << manifest.records.size() << " samples in " << out << "\n";
  return 0;
}

int export_backbone(const std::string& out) {
  nlohmann::json j{{"seed", kBackboneSeed}, {"layers", FeatureExtractor::layer_names()}, {"tensors", nlohmann::json::object()}};
  for (const auto& [name, t] : default_features().weights()) {
    std::vector<double> values(t.values().begin(), t.values().end());
    j["tensors"][name] = {{"shape", t.shape()}, {"data", values}};
  }
  std::ofstream file(out);
  file << j.dump() << "\n";
  if (!file) throw Error("cannot write " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskedit: mask-driven exemplar image manipulation"};
  app.require_subcommand(1);

  std::string config_path, data, out = "runs/train", resume;
  std::vector<std::string> overrides;
  int steps = 0;
  auto* train_cmd = app.add_subcommand("train", "Train the three model segments");
  train_cmd->add_option("--config", config_path, "YAML configuration (defaults to the desk-scale preset)");
  train_cmd->add_option("--set", overrides, "Override a config key, e.g. --set model.num_keypoints=4");
  train_cmd->add_option("--data", data, "Dataset manifest (JSON lines with image and mask paths)")->required();
  train_cmd->add_option("--out", out, "Run directory");
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_option("--steps", steps, "Total steps (overrides the config)");

  std::string manifest, report_out;
  std::vector<std::string> metrics;
  bool no_lpips = false;
  int dilation = 3;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score manipulation outputs");
  eval_cmd->add_option("--manifest", manifest, "JSON lines {output, exemplar, x_A, y_A, style}")->required();
  eval_cmd->add_option("--out", report_out, "report.csv or report.json")->required();
  eval_cmd->add_option("--metrics", metrics, "Subset of metrics")->check(CLI::IsMember(metric_names()));
  eval_cmd->add_flag("--no-lpips", no_lpips, "Report LPIPS as unavailable");
  eval_cmd->add_option("--roi-dilation", dilation, "ROI dilation radius in pixels");

  std::string ckpt, exemplar, exemplar_mask, edited_mask, image_out, diagnostics, segmenter;
  auto* manip_cmd = app.add_subcommand("manipulate", "Apply one mask edit to an exemplar");
  manip_cmd->add_option("--ckpt", ckpt)->required();
  manip_cmd->add_option("--exemplar", exemplar)->required();
  manip_cmd->add_option("--exemplar-mask", exemplar_mask);
  manip_cmd->add_option("--segmenter", segmenter, "Segmenter endpoint used when no exemplar mask is given");
  manip_cmd->add_option("--edited-mask", edited_mask)->required();
  manip_cmd->add_option("--out", image_out)->required();
  manip_cmd->add_option("--diagnostics", diagnostics, "Directory for keypoints and attention previews");

  ServerConfig server;
  std::string server_segmenter;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP editing service");
  serve_cmd->add_option("--ckpt", ckpt)->required();
  serve_cmd->add_option("--host", server.host);
  serve_cmd->add_option("--port", server.port);
  serve_cmd->add_option("--ui", server.ui_dir, "Static UI bundle served at /");
  serve_cmd->add_option("--segmenter", server_segmenter);
  serve_cmd->add_option("--store", server.store_path, "SQLite session database");
  serve_cmd->add_option("--session-ttl", server.session_ttl_seconds);

  std::string dataset_out;
  int count = 20, resolution = 64;
  std::uint64_t seed = 7;
  auto* data_cmd = app.add_subcommand("make-dataset", "Write a synthetic image/mask dataset");
  data_cmd->add_option("--out", dataset_out)->required();
  data_cmd->add_option("--count", count);
  data_cmd->add_option("--resolution", resolution);
  data_cmd->add_option("--seed", seed);

  std::string weights_out;
  auto* export_cmd = app.add_subcommand("export-backbone", "Dump the frozen feature backbone as JSON");
  export_cmd->add_option("--out", weights_out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return train(config_path, overrides, data, out, resume, steps);
    if (*eval_cmd) return evaluate(manifest, report_out, metrics, no_lpips, dilation);
    if (*manip_cmd) return manipulate_cmd(ckpt, exemplar, exemplar_mask, edited_mask, image_out, diagnostics, segmenter);
    if (*serve_cmd) {
      if (!server_segmenter.empty()) server.segmenter = SegmenterEndpoint{server_segmenter};
      return serve(ckpt, server);
    }
    if (*data_cmd) return make_dataset(dataset_out, count, resolution, seed);
    if (*export_cmd) return export_backbone(weights_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
