#pragma once

// HTTP/JSON front end over SessionManager.
//
//   POST /sessions                 multipart: exemplar (file), mask (file, optional),
//                                  prompt (JSON text, optional) -> 201 {id, mask, ...}
//   GET  /sessions/{id}            exemplar, mask, history
//   POST /sessions/{id}/mask       multipart mask file, or JSON {points, box} for the segmenter
//   POST /sessions/{id}/manipulate multipart mask file + options (JSON text), or a raw
//                                  image/png body with ?diagnostics=1
//                                  -> {seq, image, mask, warnings, diagnostics?}
//   POST /sessions/{id}/undo
//   GET  /healthz
//
// Images travel as base64 PNG.  Errors are {"error": kind, "message": text}.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "maskedit/session.hpp"

namespace httplib {
class Server;
}

namespace maskedit {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path ui_dir;  // served at "/" when it exists
  std::optional<SegmenterEndpoint> segmenter;
  std::string store_path = ":memory:";
  double session_ttl_seconds = 3600.0;
};

class Server {
 public:
  Server(std::shared_ptr<const ModelHandle> model, const ServerConfig& config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds the socket; Error when the port is taken.  Returns the bound port.
  int bind();
  // Blocks until stop().  Binds first if needed.
  void run();
  // run() on a background thread.
  void start();
  // Stops accepting, lets in-flight requests finish, joins the thread.
  void stop();

  int port() const { return port_; }
  SessionManager& sessions() { return *sessions_; }

 private:
  void routes();

  ServerConfig config_;
  std::shared_ptr<const ModelHandle> model_;
  std::unique_ptr<SessionStore> store_;
  std::unique_ptr<SessionManager> sessions_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace maskedit
