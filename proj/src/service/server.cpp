#include "magnet/errors.hpp"
#include "magnet/service.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <list>

namespace magnet {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

ServerConfig server_config_from_env(ServerConfig base) {
    if (const char* a = std::getenv("MAGNET_ADDRESS"); a && *a) base.address = a;
    if (const char* p = std::getenv("MAGNET_PORT"); p && *p) {
        char* end = nullptr;
        const long v = std::strtol(p, &end, 10);
        if (*end != '\0' || v < 0 || v > 65535) throw ConfigError(std::string("MAGNET_PORT: not a port number: ") + p);
        base.port = static_cast<unsigned short>(v);
    }
    return base;
}

struct Server::Impl {
    InferenceService& service;
    ServerConfig cfg;
    asio::io_context io;
    tcp::acceptor acceptor{io};
    std::atomic<bool> stopping{false};
    std::thread accept_thread;
    std::mutex conn_mu;
    struct Conn {
        std::shared_ptr<tcp::socket> sock;
        std::shared_ptr<std::atomic<bool>> done;
        std::thread thread;
    };
    std::list<Conn> conns;
    std::atomic<std::uint64_t> next_session{1};

    Impl(InferenceService& s, ServerConfig c) : service(s), cfg(std::move(c)) {
        const tcp::endpoint ep(asio::ip::make_address(cfg.address), cfg.port);
        acceptor.open(ep.protocol());
        acceptor.set_option(asio::socket_base::reuse_address(true));
        acceptor.bind(ep);
        acceptor.listen();
    }

    http::response<http::string_body> respond(const http::request<http::string_body>& req) {
        http::response<http::string_body> res{http::status::ok, req.version()};
        res.set(http::field::content_type, "application/json");
        res.set(http::field::access_control_allow_origin, "*");
        res.keep_alive(req.keep_alive());
        auto fail = [&](http::status st, const std::string& code, const std::string& msg) {
            res.result(st);
            res.body() = error_message(code, msg).dump();
        };
        const auto target = std::string(req.target());
        try {
            if (target == "/health" && req.method() == http::verb::get) {
                res.body() = service.health().dump();
            } else if (target == "/experts" && req.method() == http::verb::get) {
                res.body() = service.experts().dump();
            } else if (target == "/predict" && req.method() == http::verb::post) {
                res.body() = service.predict_payload(req.body());
            } else if (target == "/health" || target == "/experts" || target == "/predict") {
                fail(http::status::method_not_allowed, "bad_method", "method not allowed on " + target);
            } else {
                fail(http::status::not_found, "not_found", "no route " + target);
            }
        } catch (const ParseError& e) {
            fail(http::status::bad_request, "bad_request", e.what());
        } catch (const ValidationError& e) {
            fail(http::status::bad_request, "bad_request", e.what());
        } catch (const std::invalid_argument& e) {
            fail(http::status::bad_request, "bad_request", e.what());
        } catch (const std::exception& e) {
            fail(http::status::internal_server_error, "internal", e.what());
        }
        res.prepare_payload();
        return res;
    }

    void run_session(tcp::socket& sock, http::request<http::string_body>& req) {
        websocket::stream<tcp::socket&> ws(sock);
        ws.accept(req);
        ws.text(true);
        Session session(service, "s" + std::to_string(next_session++));
        spdlog::info("session {} opened", session.state().session_id);
        beast::flat_buffer buf;
        for (;;) {
            beast::error_code ec;
            ws.read(buf, ec);
            if (ec == websocket::error::closed || ec == asio::error::eof || ec == asio::error::connection_reset ||
                ec == asio::error::operation_aborted) {
                break;
            }
            if (ec) throw beast::system_error(ec);
            const std::string text = beast::buffers_to_string(buf.data());
            buf.consume(buf.size());
            for (const auto& reply : session.handle(text)) ws.write(asio::buffer(reply.dump()));
        }
        spdlog::info("session {} closed", session.state().session_id);
    }

    void serve(std::shared_ptr<tcp::socket> sock) {
        try {
            beast::flat_buffer buf;
            for (;;) {
                http::request<http::string_body> req;
                beast::error_code ec;
                http::read(*sock, buf, req, ec);
                if (ec == http::error::end_of_stream || ec == asio::error::eof || ec == asio::error::connection_reset ||
                    ec == asio::error::operation_aborted || ec == asio::error::bad_descriptor) {
                    break;
                }
                if (ec) throw beast::system_error(ec);
                if (websocket::is_upgrade(req)) {
                    if (req.target() != "/session") {
                        http::write(*sock, respond(req));
                        break;
                    }
                    run_session(*sock, req);
                    break;
                }
                auto res = respond(req);
                http::write(*sock, res);
                if (!res.keep_alive()) break;
            }
            beast::error_code ignored;
            sock->shutdown(tcp::socket::shutdown_send, ignored);
        } catch (const std::exception& e) {
            if (!stopping) spdlog::warn("connection error: {}", e.what());
        }
    }

    void accept_loop() {
        while (!stopping) {
            auto sock = std::make_shared<tcp::socket>(io);
            beast::error_code ec;
            acceptor.accept(*sock, ec);
            if (ec) {
                if (stopping) break;
                spdlog::warn("accept failed: {}", ec.message());
                continue;
            }
            std::lock_guard lock(conn_mu);
            for (auto it = conns.begin(); it != conns.end();) {
                if (*it->done) {
                    it->thread.join();
                    it = conns.erase(it);
                } else {
                    ++it;
                }
            }
            auto done = std::make_shared<std::atomic<bool>>(false);
            conns.push_back({sock, done, std::thread([this, sock, done] {
                                 serve(sock);
                                 *done = true;
                             })});
        }
    }

    void shutdown() {
        if (stopping.exchange(true)) return;
        beast::error_code ec;
        // A blocking accept() does not return when the acceptor is closed from
        // another thread; a throwaway connection wakes it.
        auto ep = acceptor.local_endpoint(ec);
        if (!ec) {
            if (ep.address().is_unspecified()) ep.address(asio::ip::make_address(ep.address().is_v6() ? "::1" : "127.0.0.1"));
            asio::io_context wake_io;
            tcp::socket wake(wake_io);
            wake.connect(ep, ec);
            wake.close(ec);
        }
        acceptor.cancel(ec);
        acceptor.close(ec);
        {
            std::lock_guard lock(conn_mu);
            for (auto& c : conns) {
                c.sock->shutdown(tcp::socket::shutdown_both, ec);
                c.sock->close(ec);
            }
        }
    }
};

Server::Server(InferenceService& service, ServerConfig cfg) : impl_(std::make_unique<Impl>(service, std::move(cfg))) {}

Server::~Server() { stop(); }

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::start() {
    impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
}

void Server::run() { impl_->accept_loop(); }

void Server::stop() {
    if (!impl_) return;
    impl_->shutdown();
    if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
    std::list<Impl::Conn> conns;
    {
        std::lock_guard lock(impl_->conn_mu);
        conns.swap(impl_->conns);
    }
    for (auto& c : conns) {
        if (c.thread.joinable()) c.thread.join();
    }
}

}  // namespace magnet
