#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "maskedit/checkpoint.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/inference.hpp"
#include "maskedit/segmenter.hpp"
#include "maskedit/server.hpp"
#include "maskedit/session.hpp"
#include "support/fixtures.hpp"

using namespace maskedit;
using maskedit::testing::random_blob;
using maskedit::testing::random_image;
using maskedit::testing::scratch_dir;
using nlohmann::json;

namespace {

TrainConfig tiny() {
  TrainConfig c = TrainConfig::desk_scale();
  c.model.num_keypoints = 2;
  c.model.heatmap_size = 32;
  c.model.predictor_blocks = 3;
  c.model.attention.num_blocks = 3;
  c.resolution = 32;
  return c;
}

std::shared_ptr<const ModelHandle> tiny_model() {
  static const auto model = make_model_handle(Pipeline::create(tiny().model, 5), tiny());
  return model;
}

// Serves a fixed mask on POST /segment and records the last request.
struct MockSegmenter {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  json last;
  BinaryMask reply;

  explicit MockSegmenter(BinaryMask mask) : reply(std::move(mask)) {
    server.Post("/v1/segment", [this](const httplib::Request& req, httplib::Response& res) {
      last = json::parse(req.body);
      res.set_content(json{{"mask", base64_encode(encode_png(reply))}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockSegmenter() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

Bytes png(const Image& img) { return encode_png(img); }

}  // namespace

TEST_CASE("base64 round trip") {
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 100u}) {
    Bytes b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 37 + 11);
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK(base64_encode(Bytes{'M', 'a'}) == "TWE=");
  CHECK_THROWS_AS(base64_decode("abc"), FormatError);
}

TEST_CASE("largest component keeps one region") {
  BinaryMask m = Image::zeros(1, 10, 10);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) m.at(0, y, x) = 1;
  for (int y = 5; y < 10; ++y)
    for (int x = 5; x < 9; ++x) m.at(0, y, x) = 1;
  const BinaryMask l = largest_component(m);
  CHECK(count_foreground(l) == 20);
  CHECK(l.at(0, 0, 0) == 0.0);
  CHECK(l.at(0, 9, 8) == 1.0);
  CHECK(count_foreground(largest_component(Image::zeros(1, 4, 4))) == 0);
}

TEST_CASE("file mask backend") {
  const auto dir = scratch_dir("maskfile");
  const RGBImage img = random_image(3, 24, 24, 1);
  const BinaryMask blob = random_blob(24, 24, 2);
  save_png(blob, dir / "m.png");
  const ExtractedMask e = extract_mask(img, MaskFile{dir / "m.png"});
  CHECK(e.mask == blob);
  CHECK(e.warnings.empty());
  save_png(Image::zeros(1, 24, 24), dir / "black.png");
  const ExtractedMask empty = extract_mask(img, MaskFile{dir / "black.png"});
  REQUIRE(empty.warnings.size() == 1);
  CHECK(empty.warnings[0].find("empty") != std::string::npos);
  CHECK_THROWS_AS(extract_mask(img, MaskFile{dir / "missing.png"}), NotFoundError);
}

TEST_CASE("segmenter backend: mock round trip and degraded mode") {
  const BinaryMask fixture = random_blob(24, 32, 3);
  MockSegmenter mock(fixture);
  const RGBImage img = random_image(3, 24, 32, 4);
  MaskPrompt prompt;
  prompt.points = {{10, 12, 1}, {3, 4, 0}};
  prompt.box = std::array<double, 4>{1, 2, 20, 22};
  const ExtractedMask e = extract_mask(img, SegmenterEndpoint{mock.url()}, prompt);
  CHECK(e.mask == fixture);
  CHECK(mock.last.at("points") == json::parse("[[10.0,12.0,1],[3.0,4.0,0]]"));
  CHECK(mock.last.at("box") == json::parse("[1.0,2.0,20.0,22.0]"));
  CHECK(decode_image(base64_decode(mock.last.at("image"))) == quantize8(img));

  // Nothing listens on the port the mock used a moment ago.
  int dead_port;
  {
    httplib::Server probe;
    dead_port = probe.bind_to_any_port("127.0.0.1");
  }
  CHECK_THROWS_WITH_AS(extract_mask(img, SegmenterEndpoint{"http://127.0.0.1:" + std::to_string(dead_port), 1.0}),
                       doctest::Contains("degraded mode"), UnavailableError);
}

TEST_CASE("load_model freezes a checkpoint and rejects bad files") {
  const auto dir = scratch_dir("load_model");
  const TrainState s = TrainState::create(tiny());
  save_checkpoint(s, dir / "ok.bin");
  const auto model = load_model(dir / "ok.bin");
  CHECK(model->num_keypoints() == 2);
  for (const auto& [name, t] : model->pipeline.parameters()) CHECK_FALSE(t.requires_grad());

  const auto bytes = serialize_checkpoint(s);
  std::ofstream(dir / "cut.bin", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 100);
  CHECK_THROWS_AS(load_model(dir / "cut.bin"), FormatError);

  // Transport segment from a K=3 model inside a K=2 checkpoint.
  TrainConfig k3 = tiny();
  k3.model.num_keypoints = 3;
  TrainState mixed = TrainState::create(tiny());
  const TrainState other = TrainState::create(k3);
  mixed.pipeline.transport = other.pipeline.transport;
  save_checkpoint(mixed, dir / "mixed.bin");
  CHECK_THROWS_AS(load_model(dir / "mixed.bin"), ConsistencyError);
}

TEST_CASE("manipulate: shapes, diagnostics, warnings, errors") {
  const auto model = tiny_model();
  const RGBImage y_B = random_image(3, 32, 32, 1);
  const BinaryMask y_A = random_blob(32, 32, 2), x_A = random_blob(32, 32, 3);
  ManipulationOptions diag;
  diag.diagnostics = true;
  const ManipulationResult r = manipulate(*model, y_B, y_A, x_A, diag);
  CHECK(r.image.height == 32);
  CHECK(r.image == quantize8(r.image));
  CHECK(is_binary(r.mask));
  REQUIRE(r.diagnostics);
  CHECK(r.diagnostics->source_keypoints.size() == 2);
  CHECK(r.diagnostics->driver_keypoints.size() == 2);
  CHECK(r.diagnostics->attention.size() == 3);
  CHECK(r.diagnostics->guidance.size() == 2);

  // Stateless: same inputs, same output, weights untouched.
  std::vector<double> before;
  for (const auto& [n, t] : model->pipeline.parameters()) before.insert(before.end(), t.values().begin(), t.values().end());
  CHECK(manipulate(*model, y_B, y_A, x_A).image == r.image);
  std::vector<double> after;
  for (const auto& [n, t] : model->pipeline.parameters()) after.insert(after.end(), t.values().begin(), t.values().end());
  CHECK(before == after);

  Image soft = x_A;
  for (double& v : soft.data) v = v * 0.8 + 0.1;
  const ManipulationResult t = manipulate(*model, y_B, y_A, soft);
  CHECK(t.image == manipulate(*model, y_B, y_A, x_A).image);
  CHECK_FALSE(t.warnings.empty());

  ManipulationOptions dm;
  dm.refine = "diffusion";
  CHECK_THROWS_AS(manipulate(*model, y_B, y_A, x_A, dm), NotSupportedError);
  ManipulationOptions res;
  res.resolution = std::array<int, 2>{64, 64};
  CHECK_THROWS_AS(manipulate(*model, y_B, y_A, x_A, res), ShapeError);
  CHECK_THROWS_AS(manipulate(*model, y_B, y_A, random_blob(32, 48, 3)), ShapeError);
}

TEST_CASE("manipulate at a non-training resolution keeps the exemplar size") {
  const auto model = tiny_model();
  const RGBImage y_B = random_image(3, 40, 72, 1);
  const ManipulationResult r = manipulate(*model, y_B, random_blob(40, 72, 2), random_blob(40, 72, 3));
  CHECK(r.image.height == 40);
  CHECK(r.image.width == 72);
  CHECK(r.mask.width == 72);
}

TEST_CASE("sessions: sequential edits, undo, replay") {
  SessionStore store(":memory:", 3600);
  SessionManager m(tiny_model(), store);
  const RGBImage y_B = quantize8(random_image(3, 32, 32, 1));
  const BinaryMask y_A = random_blob(32, 32, 2), x1 = random_blob(32, 32, 3), x2 = random_blob(32, 32, 4);
  const CreatedSession c = m.create(png(y_B), png(y_A));
  CHECK(c.mask_source == "upload");
  CHECK(c.mask == y_A);

  const EditOutcome e1 = m.manipulate(c.id, png(x1), {});
  const EditOutcome e2 = m.manipulate(c.id, png(x2), {});
  CHECK(e1.seq == 1);
  CHECK(e2.seq == 2);
  // Chaining two single edits by hand gives the same images.
  const RGBImage first = manipulate(m.model(), y_B, y_A, x1).image;
  CHECK(e1.result.image == first);
  CHECK(e2.result.image == manipulate(m.model(), decode_image(encode_png(first)), x1, x2).image);

  const SessionRecord rec = m.get(c.id);
  REQUIRE(rec.history.size() == 2);
  CHECK(rec.history[0].kind == "edit");
  CHECK(m.state(c.id).depth == 2);
  CHECK(m.replay(c.id) == m.state(c.id).exemplar);

  const SessionState back = m.undo(c.id);
  CHECK(back.depth == 1);
  CHECK(back.mask == x1);
  CHECK(back.exemplar == decode_image(encode_png(first)));
  m.undo(c.id);
  CHECK(m.state(c.id).exemplar == y_B);
  CHECK_THROWS_AS(m.undo(c.id), ConsistencyError);
  CHECK(m.get(c.id).history.size() == 4);
  CHECK(m.replay(c.id) == y_B);
  CHECK_THROWS_AS(m.get("feedbeef"), NotFoundError);
}

TEST_CASE("sessions: mask replacement and segmenter fallback") {
  SessionStore store(":memory:", 3600);
  SessionManager no_seg(tiny_model(), store);
  const RGBImage y_B = random_image(3, 32, 32, 1);
  const CreatedSession c = no_seg.create(png(y_B), std::nullopt);
  CHECK(c.mask_source == "none");
  CHECK_THROWS_AS(no_seg.set_mask(c.id, std::nullopt, {}), UnavailableError);
  const BinaryMask blob = random_blob(32, 32, 5);
  no_seg.set_mask(c.id, png(blob), {});
  CHECK(no_seg.state(c.id).mask == blob);

  MockSegmenter mock(random_blob(32, 32, 6));
  SessionManager with_seg(tiny_model(), store, SegmenterEndpoint{mock.url()});
  const CreatedSession s = with_seg.create(png(y_B), std::nullopt);
  CHECK(s.mask_source == "segmenter");
  CHECK(s.mask == mock.reply);
  CHECK(mock.last.at("points").size() == 1);
}

TEST_CASE("sessions expire after their TTL") {
  double now = 1000.0;
  SessionStore store(":memory:", 60, [&now] { return now; });
  SessionManager m(tiny_model(), store);
  const auto a = m.create(png(random_image(3, 32, 32, 1)), png(random_blob(32, 32, 2))).id;
  now += 30;
  m.get(a);  // touch
  now += 45;
  CHECK_NOTHROW(m.get(a));
  now += 61;
  CHECK_THROWS_AS(m.get(a), NotFoundError);
  const auto b = m.create(png(random_image(3, 32, 32, 1)), png(random_blob(32, 32, 2))).id;
  now += 100;
  CHECK(store.evict_expired() == std::vector<std::string>{b});
  CHECK(store.size() == 0);
}

TEST_CASE("HTTP API round trip") {
  const auto ui = scratch_dir("ui");
  std::ofstream(ui / "index.html") << "<html>mask studio</html>";
  ServerConfig cfg;
  cfg.port = 0;
  cfg.ui_dir = ui;
  Server server(tiny_model(), cfg);
  server.start();
  httplib::Client client("127.0.0.1", server.port());

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body).at("model").at("num_keypoints") == 2);
  auto index = client.Get("/index.html");
  REQUIRE(index);
  CHECK(index->body.find("mask studio") != std::string::npos);

  const RGBImage y_B = random_image(3, 32, 48, 1);
  const BinaryMask y_A = random_blob(32, 48, 2), x_A = random_blob(32, 48, 3);
  const auto exemplar_png = png(y_B), mask_png = png(y_A), edit_png = png(x_A);
  httplib::MultipartFormDataItems create{
      {"exemplar", std::string(exemplar_png.begin(), exemplar_png.end()), "y.png", "image/png"},
      {"mask", std::string(mask_png.begin(), mask_png.end()), "m.png", "image/png"}};
  auto created = client.Post("/sessions", create);
  REQUIRE(created);
  REQUIRE(created->status == 201);
  const std::string id = json::parse(created->body).at("id");

  httplib::MultipartFormDataItems edit{{"mask", std::string(edit_png.begin(), edit_png.end()), "x.png", "image/png"},
                                       {"options", R"({"diagnostics": true})", "", "application/json"}};
  auto edited = client.Post("/sessions/" + id + "/manipulate", edit);
  REQUIRE(edited);
  REQUIRE(edited->status == 200);
  const json body = json::parse(edited->body);
  const Image out = decode_image(base64_decode(body.at("image")));
  CHECK(out.height == 32);
  CHECK(out.width == 48);
  CHECK(body.at("diagnostics").at("attention").size() == 3);

  auto raw = client.Post("/sessions/" + id + "/manipulate?diagnostics=1",
                         std::string(edit_png.begin(), edit_png.end()), "image/png");
  REQUIRE(raw);
  CHECK(raw->status == 200);

  auto got = client.Get("/sessions/" + id);
  REQUIRE(got);
  CHECK(json::parse(got->body).at("history").size() == 2);
  auto undone = client.Post("/sessions/" + id + "/undo", "", "application/json");
  REQUIRE(undone);
  CHECK(json::parse(undone->body).at("depth") == 1);

  auto dm = client.Post("/sessions/" + id + "/manipulate",
                        httplib::MultipartFormDataItems{{"mask", std::string(edit_png.begin(), edit_png.end()), "x.png", "image/png"},
                                                        {"options", R"({"refine": "diffusion"})", "", ""}});
  REQUIRE(dm);
  CHECK(dm->status == 501);
  auto missing = client.Get("/sessions/0123456789abcdef");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto no_seg = client.Post("/sessions/" + id + "/mask", R"({"points": [[3, 4]]})", "application/json");
  REQUIRE(no_seg);
  CHECK(no_seg->status == 503);
  const auto wrong = png(random_blob(20, 20, 9));
  auto mismatch = client.Post("/sessions/" + id + "/manipulate", std::string(wrong.begin(), wrong.end()), "image/png");
  REQUIRE(mismatch);
  CHECK(mismatch->status == 422);
  server.stop();
}

TEST_CASE("server reports a busy port") {
  httplib::Server holder;
  const int port = holder.bind_to_any_port("127.0.0.1");
  ServerConfig cfg;
  cfg.port = port;
  Server server(tiny_model(), cfg);
  CHECK_THROWS_WITH_AS(server.bind(), doctest::Contains("busy"), Error);
}
