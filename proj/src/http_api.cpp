#include <atomic>
#include <thread>

#include <httplib.h>

#include "cimdse/orchestrator.hpp"

namespace cimdse {

int http_status_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::state:
    case ErrorKind::not_ready: return 409;
    case ErrorKind::backend: return 502;
    case ErrorKind::io: return 500;
    default: return 400;
  }
}

struct HttpApi::Impl {
  Orchestrator& orch;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Orchestrator& o) : orch(o) { routes(); }

  static void send(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, ErrorKind kind, const std::string& message) {
    send(res, json{{"error", {{"kind", to_string(kind)}, {"message", message}}}}, http_status_for(kind));
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::validation, std::string("request body is not JSON: ") + e.what());
    }
  }

  template <class Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        fail(res, e.kind(), e.what());
      } catch (const json::exception& e) {
        fail(res, ErrorKind::validation, e.what());
      } catch (const std::exception& e) {
        send(res, json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}, 500);
      }
    };
  }

  void routes() {
    server.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      send(res, json{{"status", "ok"},
                     {"backend", orch.backend().name()},
                     {"sessions", orch.session_ids().size()},
                     {"jobs", orch.job_count()}});
    }));

    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      send(res, json{{"sessions", orch.session_ids()}});
    }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      const auto s = orch.create_session();
      if (body.contains("text")) orch.submit(s.id, body.at("text").get<std::string>());
      send(res, to_json(orch.session(s.id)), 201);
    }));

    server.Get(R"(/sessions/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, to_json(orch.session(req.matches[1])));
    }));

    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/messages)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string id = req.matches[1];
                  const auto body = body_of(req);
                  const auto turn = orch.submit(id, body.value("text", std::string()));
                  send(res, json{{"turn", to_json(turn)}, {"session", to_json(orch.session(id))}});
                }));

    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/adjustments)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string id = req.matches[1];
                  const auto body = body_of(req);
                  Turn turn;
                  if (body.contains("ops")) {
                    turn = orch.adjust(id, adjustment_from_json(body));
                  } else if (body.contains("text")) {
                    const auto s = orch.session(id);
                    if (!s.parsed) throw Error(ErrorKind::state, "nothing to adjust yet");
                    auto adj = parse_adjustment_text(body.at("text").get<std::string>(), *s.parsed, orch.schema());
                    if (!adj) throw Error(ErrorKind::adjustment, "the text is not a recognized adjustment");
                    turn = orch.adjust(id, *adj);
                  } else {
                    throw Error(ErrorKind::validation, "expected \"ops\" or \"text\"");
                  }
                  send(res, json{{"turn", to_json(turn)}, {"session", to_json(orch.session(id))}});
                }));

    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/confirm)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string id = req.matches[1];
                  const auto job = orch.confirm(id);
                  send(res, json{{"job", job_status_json(job)}, {"session", to_json(orch.session(id))}}, 202);
                }));

    server.Get(R"(/jobs/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, job_status_json(orch.job(req.matches[1])));
    }));

    server.Get(R"(/jobs/([A-Za-z0-9_-]+)/results)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, job_results_json(orch.job(req.matches[1])));
    }));

    server.Get(R"(/jobs/([A-Za-z0-9_-]+)/convergence\.csv)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 res.set_content(orch.convergence_csv(req.matches[1]), "text/csv");
               }));
  }
};

HttpApi::HttpApi(Orchestrator& orch) : impl_(std::make_unique<Impl>(orch)) {}

HttpApi::~HttpApi() { stop(); }

bool HttpApi::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpApi::start(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  if (port < 0) throw Error(ErrorKind::io, "cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpApi::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cimdse
