#include "mero/service/http.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "mero/core/png_io.hpp"
#include "mero/error.hpp"

namespace mero::service {

std::map<std::string, std::string> checkpoint_hashes(const std::filesystem::path& model_dir) {
  std::map<std::string, std::string> out;
  for (const char* stage : {"box", "labelmap", "label2obj"})
    out[stage] = sha256_hex(core::read_file(chain::resolve_checkpoint(model_dir, stage)));
  if (std::filesystem::exists(model_dir / "schema.json"))
    out["schema"] = sha256_hex(core::read_file(model_dir / "schema.json"));
  return out;
}

struct HttpServer::Impl {
  httplib::Server server;
  std::mutex mutex;
  bool stopping = false;
  bool started = false;
  std::atomic<bool> finished{false};
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

// Runs a handler and maps library errors to HTTP statuses.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ConflictError& e) {
    send_error(res, 409, e.what());
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 422, e.what());
  } catch (const FormatError& e) {
    send_error(res, 400, e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, std::string("bad request body: ") + e.what());
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    send_error(res, 500, e.what());
  }
}

}  // namespace

HttpServer::HttpServer(SessionService& service, HttpOptions options)
    : impl_(std::make_unique<Impl>()), options_(std::move(options)) {
  auto& svr = impl_->server;
  const Pipeline& pipeline = service.pipeline();
  // httplib's default adds SO_REUSEPORT, which lets a second server share a
  // busy port instead of failing.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Get("/health", [this, &service](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200,
              {{"status", "ok"}, {"checkpoints", options_.checkpoint_hashes}, {"sessions", service.ids().size()}});
  });
  svr.Get("/schema", [&pipeline](const httplib::Request&, httplib::Response& res) {
    nlohmann::json j = core::schema_to_json(pipeline.schema());
    j["p"] = pipeline.schema().p;
    send_json(res, 200, j);
  });
  svr.Post("/sessions", [&service, &pipeline](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto session = service.create(CreateRequest::from_json(nlohmann::json::parse(req.body)));
      res.set_header("Location", "/sessions/" + session.id);
      send_json(res, 201, snapshot(session, pipeline.schema()));
    });
  });
  svr.Get(R"(/sessions/([^/]+))", [&service, &pipeline](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, snapshot(service.get(req.matches[1]), pipeline.schema())); });
  });
  svr.Post(R"(/sessions/([^/]+)/edits)", [&service, &pipeline](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      const auto command = EditCommand::from_json(nlohmann::json::parse(req.body));
      try {
        send_json(res, 200, snapshot(service.edit(id, command), pipeline.schema()));
      } catch (const ConflictError& e) {
        send_json(res, 409, {{"error", e.what()}, {"revision", service.get(id).revision}});
      }
    });
  });
  svr.Get(R"(/sessions/([^/]+)/label_map\.png)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(label_map_png(service.get(req.matches[1])), "image/png"); });
  });
  svr.Get(R"(/sessions/([^/]+)/label_map\.json)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.set_content(mask::label_map_sidecar(service.get(req.matches[1]).label_map), "application/json");
    });
  });
  svr.Get(R"(/sessions/([^/]+)/image\.png)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto png = image_png(service.get(req.matches[1]));
      if (!png) throw NotFoundError("session has no rendered image");
      res.set_content(*png, "image/png");
    });
  });
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::bind() {
  auto& svr = impl_->server;
  if (options_.port == 0) {
    port_ = svr.bind_to_any_port(options_.host);
    if (port_ < 0) throw Error("cannot bind " + options_.host + " to any port");
  } else {
    if (!svr.bind_to_port(options_.host, options_.port))
      throw Error("cannot bind " + options_.host + ":" + std::to_string(options_.port) + " (port busy?)");
    port_ = options_.port;
  }
}

void HttpServer::run() {
  {
    std::lock_guard lock(impl_->mutex);
    if (impl_->stopping) return;
    impl_->started = true;
  }
  spdlog::info("serving on http://{}:{}", options_.host, port_);
  impl_->server.listen_after_bind();
  impl_->finished = true;
}

void HttpServer::stop() {
  if (!impl_) return;
  bool started = false;
  {
    std::lock_guard lock(impl_->mutex);
    impl_->stopping = true;
    started = impl_->started;
  }
  // httplib ignores stop() until its accept loop is up, so keep asking.
  while (started && !impl_->finished) {
    impl_->server.stop();
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

}  // namespace mero::service
