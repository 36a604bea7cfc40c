#pragma once

#include <memory>
#include <string>
#include <thread>

#include "review.hpp"

namespace httplib {
class Server;
}

namespace cac::review {

/// HTTP front end for a ReviewService. JSON bodies everywhere except the
/// slice endpoint, which returns image/png. Errors come back as
/// {"error": <code name>, "message": ...}.
class HttpServer {
public:
    explicit HttpServer(ReviewService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and starts serving on a background thread. Port 0 picks a free
    /// port; the bound port is returned.
    int start(const std::string& host, int port);
    /// Blocks serving on the calling thread.
    void listen(const std::string& host, int port);
    void stop();
    int port() const { return port_; }

private:
    void routes();

    ReviewService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

int http_status(ErrorCode code);

}  // namespace cac::review
