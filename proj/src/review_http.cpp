#include "review_http.hpp"

#include <httplib.h>

#include "error.hpp"

namespace cac::review {

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Parse: return 400;
    case ErrorCode::NotAssigned: return 403;
    case ErrorCode::UnknownItem:
    case ErrorCode::SliceOutOfRange: return 404;
    case ErrorCode::QueueEmpty:
    case ErrorCode::AlreadyVerdicted: return 409;
    case ErrorCode::SampleTooLarge: return 422;
    default: return 500;
    }
}

namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    send_json(res, Json{{"error", std::string(error_code_name(code))}, {"message", message}}, http_status(code));
}

template <class F>
httplib::Server::Handler guarded(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const Json::exception& e) {
            send_error(res, ErrorCode::Parse, e.what());
        } catch (const std::exception& e) {
            send_error(res, ErrorCode::Internal, e.what());
        }
    };
}

double query_double(const httplib::Request& req, const char* key, double fallback) {
    if (!req.has_param(key)) return fallback;
    try {
        return std::stod(req.get_param_value(key));
    } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, std::string("bad numeric parameter ") + key);
    }
}

}  // namespace

HttpServer::HttpServer(ReviewService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    server_->new_task_queue = [] { return new httplib::ThreadPool(8); };
    routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::routes() {
    auto& s = *server_;

    s.Post("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const Json body = Json::parse(req.body);
               const auto filter = ReviewFilter::from_json(body);
               const auto n = body.at("n").get<std::size_t>();
               const auto seed = body.at("seed").get<std::uint64_t>();
               const auto id = service_.create_queue(filter, n, seed);
               send_json(res, Json{{"queue_id", id}, {"n", n}}, 201);
           }));

    s.Get(R"(/api/queue/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
              if (!req.has_param("reviewer")) fail(ErrorCode::InvalidArgument, "reviewer parameter required");
              send_json(res, to_json(service_.next_item(req.matches[1], req.get_param_value("reviewer"))));
          }));

    s.Get(R"(/api/queue/([^/]+)/items)", guarded([this](const httplib::Request& req, httplib::Response& res) {
              Json out = Json::array();
              for (const auto& it : service_.items(req.matches[1])) out.push_back(to_json(it));
              send_json(res, out);
          }));

    s.Get(R"(/api/slice/([^/]+)/(-?\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
              Window w;
              w.center = query_double(req, "wc", w.center);
              w.width = query_double(req, "ww", w.width);
              bool overlay = true;
              if (req.has_param("overlay")) {
                  const auto v = req.get_param_value("overlay");
                  overlay = !(v == "0" || v == "false" || v == "no");
              }
              const auto img = service_.render(req.matches[1], std::stoll(req.matches[2]), w, overlay);
              res.set_content(png::encode(img), "image/png");
          }));

    s.Post("/api/verdict", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const Json body = Json::parse(req.body);
               const auto item = body.at("item_id").get<std::string>();
               const auto reviewer = body.at("reviewer_id").get<std::string>();
               const auto verdict = parse_verdict(body.at("verdict").get<std::string>());
               if (body.value("correction", false)) service_.post_correction(item, reviewer, verdict);
               else service_.post_verdict(item, reviewer, verdict);
               send_json(res, Json{{"ok", true}, {"item_id", item}, {"verdict", std::string(verdict_name(verdict))}});
           }));

    s.Get(R"(/api/summary/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
              send_json(res, to_json(service_.summary(req.matches[1])));
          }));
}

int HttpServer::start(const std::string& host, int port) {
    port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void HttpServer::listen(const std::string& host, int port) {
    port_ = port;
    if (!server_->listen(host, port)) fail(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace cac::review
