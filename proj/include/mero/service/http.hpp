#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "mero/service/store.hpp"

namespace mero::service {

// SHA-256 of each resolved checkpoint file, keyed by stage.
std::map<std::string, std::string> checkpoint_hashes(const std::filesystem::path& model_dir);

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::map<std::string, std::string> checkpoint_hashes;
};

// Routes:
//   GET  /health
//   GET  /schema
//   POST /sessions                       CreateRequest
//   GET  /sessions/{id}
//   POST /sessions/{id}/edits            EditCommand, 409 on a stale revision
//   GET  /sessions/{id}/label_map.png | label_map.json | image.png
class HttpServer {
 public:
  HttpServer(SessionService& service, HttpOptions options);
  ~HttpServer();

  // Binds the port; throws Error when it is taken.
  void bind();
  int port() const { return port_; }
  // Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  HttpOptions options_;
  int port_ = 0;
};

}  // namespace mero::service
