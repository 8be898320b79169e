#include "maskedit/server.hpp"

#include "httplib.h"
#include "json.hpp"
#include "maskedit/checkpoint.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/simd/kernels.hpp"

namespace maskedit {
namespace {

using nlohmann::json;

std::string png64(const Image& img) { return base64_encode(encode_png(img)); }

Bytes as_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  reply(res, status, {{"error", kind}, {"message", message}});
}

// Runs a handler and maps library errors to HTTP statuses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      fail(res, 404, "not_found", e.what());
    } catch (const NotSupportedError& e) {
      fail(res, 501, "not_supported", e.what());
    } catch (const UnavailableError& e) {
      fail(res, 503, "unavailable", e.what());
    } catch (const ShapeError& e) {
      fail(res, 422, "resolution_mismatch", e.what());
    } catch (const ConsistencyError& e) {
      fail(res, 409, "conflict", e.what());
    } catch (const FormatError& e) {
      fail(res, 400, "bad_request", e.what());
    } catch (const json::exception& e) {
      fail(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
      fail(res, 500, "internal", e.what());
    }
  };
}

std::optional<Bytes> file_part(const httplib::Request& req, const char* key) {
  if (!req.has_file(key)) return std::nullopt;
  return as_bytes(req.get_file_value(key).content);
}

MaskPrompt parse_prompt(const json& j) {
  MaskPrompt p;
  if (j.contains("points"))
    for (const auto& pt : j.at("points")) {
      if (pt.size() < 2) throw FormatError("prompt points are [x, y] or [x, y, label]");
      p.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>(), pt.size() > 2 ? pt.at(2).get<int>() : 1});
    }
  if (j.contains("box")) p.box = j.at("box").get<std::array<double, 4>>();
  return p;
}

ManipulationOptions parse_options(const json& j) {
  ManipulationOptions o;
  o.diagnostics = j.value("diagnostics", false);
  if (j.contains("resolution")) o.resolution = j.at("resolution").get<std::array<int, 2>>();
  o.refine = j.value("refine", std::string());
  return o;
}

json history_json(const SessionRecord& r) {
  json h = json::array();
  for (const auto& e : r.history) h.push_back({{"seq", e.seq}, {"kind", e.kind}, {"timestamp", e.timestamp}});
  return h;
}

json diagnostics_json(const Diagnostics& d) {
  auto pngs = [](const std::vector<BinaryMask>& maps) {
    json a = json::array();
    for (const auto& m : maps) a.push_back(png64(m));
    return a;
  };
  return {{"keypoints", {{"source", d.source_keypoints}, {"driver", d.driver_keypoints}}},
          {"attention", pngs(d.attention)},
          {"warped_masks", pngs(d.warped_masks)},
          {"guidance", pngs(d.guidance)}};
}

}  // namespace

Server::Server(std::shared_ptr<const ModelHandle> model, const ServerConfig& config)
    : config_(config),
      model_(std::move(model)),
      store_(std::make_unique<SessionStore>(config.store_path, config.session_ttl_seconds)),
      sessions_(std::make_unique<SessionManager>(model_, *store_, config.segmenter)),
      http_(std::make_unique<httplib::Server>()) {
  routes();
}

Server::~Server() { stop(); }

void Server::routes() {
  httplib::Server& s = *http_;
  SessionManager& m = *sessions_;

  s.Get("/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
          const ModelHandle& model = *model_;
          reply(res, 200,
                {{"status", "ok"},
                 {"model",
                  {{"checkpoint", model.source},
                   {"format_version", kCheckpointVersion},
                   {"step", model.step},
                   {"num_keypoints", model.num_keypoints()},
                   {"working_resolution", model.working_resolution()}}},
                 {"kernels", simd::kernels().name},
                 {"segmenter", config_.segmenter ? json(config_.segmenter->url) : json(nullptr)},
                 {"sessions", store_->size()}});
        }));

  s.Post("/sessions", guarded([&m](const httplib::Request& req, httplib::Response& res) {
           const auto exemplar = file_part(req, "exemplar");
           if (!exemplar) throw FormatError("multipart field \"exemplar\" is required");
           MaskPrompt prompt;
           if (req.has_file("prompt")) prompt = parse_prompt(json::parse(req.get_file_value("prompt").content));
           const CreatedSession c = m.create(*exemplar, file_part(req, "mask"), prompt);
           reply(res, 201,
                 {{"id", c.id},
                  {"width", c.mask.width},
                  {"height", c.mask.height},
                  {"mask", png64(c.mask)},
                  {"mask_source", c.mask_source},
                  {"warnings", c.warnings}});
         }));

  s.Get(R"(/sessions/([0-9a-f]+))", guarded([&m](const httplib::Request& req, httplib::Response& res) {
          const SessionRecord r = m.get(req.matches[1]);
          const SessionState st = fold_history(r);
          reply(res, 200,
                {{"id", r.id},
                 {"width", st.exemplar.width},
                 {"height", st.exemplar.height},
                 {"created", r.created},
                 {"touched", r.touched},
                 {"depth", st.depth},
                 {"exemplar", png64(st.exemplar)},
                 {"mask", png64(st.mask)},
                 {"history", history_json(r)}});
        }));

  s.Post(R"(/sessions/([0-9a-f]+)/mask)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
           std::optional<Bytes> upload;
           MaskPrompt prompt;
           if (req.is_multipart_form_data()) {
             upload = file_part(req, "mask");
             if (req.has_file("prompt")) prompt = parse_prompt(json::parse(req.get_file_value("prompt").content));
           } else if (req.get_header_value("Content-Type").starts_with("image/")) {
             upload = as_bytes(req.body);
           } else if (!req.body.empty()) {
             prompt = parse_prompt(json::parse(req.body));
           }
           const ExtractedMask e = m.set_mask(req.matches[1], upload, prompt);
           reply(res, 200, {{"mask", png64(e.mask)}, {"warnings", e.warnings}});
         }));

  s.Post(R"(/sessions/([0-9a-f]+)/manipulate)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
           Bytes mask;
           ManipulationOptions options;
           if (req.is_multipart_form_data()) {
             const auto part = file_part(req, "mask");
             if (!part) throw FormatError("multipart field \"mask\" is required");
             mask = *part;
             if (req.has_file("options")) options = parse_options(json::parse(req.get_file_value("options").content));
           } else {
             mask = as_bytes(req.body);
             options.diagnostics = req.get_param_value("diagnostics") == "1";
             options.refine = req.get_param_value("refine");
           }
           if (mask.empty()) throw FormatError("edited mask is missing");
           const EditOutcome out = m.manipulate(req.matches[1], mask, options);
           json body{{"seq", out.seq},
                     {"width", out.result.image.width},
                     {"height", out.result.image.height},
                     {"image", png64(out.result.image)},
                     {"mask", png64(out.result.mask)},
                     {"warnings", out.result.warnings}};
           if (out.result.diagnostics) body["diagnostics"] = diagnostics_json(*out.result.diagnostics);
           reply(res, 200, body);
         }));

  s.Post(R"(/sessions/([0-9a-f]+)/undo)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
           const SessionState st = m.undo(req.matches[1]);
           reply(res, 200, {{"depth", st.depth}, {"exemplar", png64(st.exemplar)}, {"mask", png64(st.mask)}});
         }));

  if (!config_.ui_dir.empty() && std::filesystem::is_directory(config_.ui_dir))
    s.set_mount_point("/", config_.ui_dir.string());
}

int Server::bind() {
  if (port_ >= 0) return port_;
  // httplib's default adds SO_REUSEPORT, which would let two servers share a port.
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (config_.port == 0) {
    port_ = http_->bind_to_any_port(config_.host);
    if (port_ < 0) throw Error("cannot bind " + config_.host);
  } else {
    if (!http_->bind_to_port(config_.host, config_.port))
      throw Error("port " + std::to_string(config_.port) + " on " + config_.host + " is busy or unavailable");
    port_ = config_.port;
  }
  return port_;
}

void Server::run() {
  bind();
  http_->listen_after_bind();
}

void Server::start() {
  bind();
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
}

void Server::stop() {
  // httplib's worker pool finishes queued requests before listen returns.
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace maskedit
