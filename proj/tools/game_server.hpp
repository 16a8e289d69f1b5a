#pragma once

// WebSocket + HTTP front end for interactive tracking sessions. All
// sessions run on the io_context's thread; each session ticks on its own
// timer and drops frames while a previous write is still in flight.

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <deque>
#include <iostream>
#include <memory>
#include <string>

#include "mpgp/game_session.hpp"

namespace mpgp::server {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct ServerOptions {
  std::string address = "0.0.0.0";
  unsigned short port = 8090;
  std::uint64_t seed = 0;
  SessionOptions session;
  std::size_t max_queued = 32;  // pending outgoing messages per client
};

class WebSocketSession : public std::enable_shared_from_this<WebSocketSession> {
 public:
  WebSocketSession(tcp::socket&& socket, const ScenarioModel& model, const ServerOptions& options)
      : ws_(std::move(socket)),
        timer_(ws_.get_executor()),
        game_(model, options.seed, options.session),
        options_(options),
        period_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(game_.period()))) {}

  void run(http::request<http::string_body> request) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->on_accept();
    });
  }

 private:
  void on_accept() {
    next_tick_ = std::chrono::steady_clock::now() + period_;
    schedule();
    read();
  }

  void schedule() {
    timer_.expires_at(next_tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec && !self->closed_) self->on_tick();
    });
  }

  void on_tick() {
    const StateFrame frame = game_.tick();
    if (!writing_ && queue_.empty()) send(frame_json(frame).dump());
    next_tick_ += period_;
    const auto now = std::chrono::steady_clock::now();
    if (next_tick_ < now) next_tick_ = now;
    schedule();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) return close();
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    send(handle_client_message(game_, text));
    read();
  }

  void send(std::string message) {
    if (queue_.size() >= options_.max_queued) return;
    queue_.push_back(std::move(message));
    if (!writing_) write();
  }

  void write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->on_write(ec);
                    });
  }

  void on_write(beast::error_code ec) {
    if (ec) return close();
    queue_.pop_front();
    if (queue_.empty()) {
      writing_ = false;
    } else {
      write();
    }
  }

  void close() {
    closed_ = true;
    timer_.cancel();
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  GameSession game_;
  const ServerOptions& options_;
  std::chrono::steady_clock::duration period_;
  std::chrono::steady_clock::time_point next_tick_;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool closed_ = false;
};

/// Plain HTTP: GET /health answers 200, WebSocket upgrades start a game
/// session, everything else is 404.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, const ScenarioModel& model, const ServerOptions& options)
      : stream_(std::move(socket)), model_(model), options_(options) {}

  void run() { read(); }

 private:
  void read() {
    request_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       self->on_read(ec);
                     });
  }

  void on_read(beast::error_code ec) {
    if (ec) return;
    if (websocket::is_upgrade(request_)) {
      stream_.expires_never();
      std::make_shared<WebSocketSession>(stream_.release_socket(), model_, options_)
          ->run(std::move(request_));
      return;
    }
    auto response = std::make_shared<http::response<http::string_body>>();
    response->version(request_.version());
    response->keep_alive(request_.keep_alive());
    response->set(http::field::content_type, "application/json");
    if (request_.method() == http::verb::get && request_.target() == "/health") {
      response->result(http::status::ok);
      response->body() = R"({"status":"ok"})";
    } else {
      response->result(http::status::not_found);
      response->body() = R"({"error":"not found"})";
    }
    response->prepare_payload();
    http::async_write(stream_, *response,
                      [self = shared_from_this(), response](beast::error_code ec, std::size_t) {
                        if (ec) return;
                        if (response->keep_alive()) {
                          self->read();
                        } else {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                        }
                      });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  const ScenarioModel& model_;
  const ServerOptions& options_;
};

class GameServer {
 public:
  GameServer(net::io_context& io, const ScenarioModel& model, ServerOptions options)
      : io_(io), acceptor_(io), model_(model), options_(std::move(options)) {
    const tcp::endpoint endpoint(net::ip::make_address(options_.address), options_.port);
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen(net::socket_base::max_listen_connections);
    accept();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

 private:
  void accept() {
    acceptor_.async_accept(net::make_strand(io_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec == net::error::operation_aborted) return;
      if (!ec) std::make_shared<HttpSession>(std::move(socket), model_, options_)->run();
      accept();
    });
  }

  net::io_context& io_;
  tcp::acceptor acceptor_;
  const ScenarioModel& model_;
  ServerOptions options_;
};

}  // namespace mpgp::server
