#include <gtest/gtest.h>

#include <thread>

#include "game_server.hpp"
#include "mpgp/config.hpp"

using namespace mpgp;
using namespace mpgp::server;

namespace {

class ServerFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    ServerOptions options;
    options.address = "127.0.0.1";
    options.port = 0;
    server_ = std::make_unique<GameServer>(io_, model_, options);
    thread_ = std::thread([this] { io_.run(); });
  }

  void TearDown() override {
    io_.stop();
    thread_.join();
  }

  http::response<http::string_body> get(const std::string& target) {
    net::io_context io;
    beast::tcp_stream stream(io);
    stream.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), server_->port()));
    http::request<http::string_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "localhost");
    http::write(stream, req);
    beast::flat_buffer buffer;
    http::response<http::string_body> res;
    http::read(stream, buffer, res);
    return res;
  }

  websocket::stream<tcp::socket> connect(net::io_context& io) {
    websocket::stream<tcp::socket> ws(io);
    ws.next_layer().connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), server_->port()));
    ws.handshake("localhost", "/");
    return ws;
  }

  static nlohmann::json read_until(websocket::stream<tcp::socket>& ws, const std::string& type) {
    for (int k = 0; k < 200; ++k) {
      beast::flat_buffer buffer;
      ws.read(buffer);
      auto j = nlohmann::json::parse(beast::buffers_to_string(buffer.data()));
      if (j["type"] == type) return j;
    }
    ADD_FAILURE() << "no message of type " << type;
    return {};
  }

  ScenarioModel model_{load_scenario(MPGP_CONFIG_DIR "/tracking.json")};
  net::io_context io_;
  std::unique_ptr<GameServer> server_;
  std::thread thread_;
};

}  // namespace

TEST_F(ServerFixture, HealthEndpoint) {
  const auto res = get("/health");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(nlohmann::json::parse(res.body())["status"], "ok");
  EXPECT_EQ(get("/missing").result(), http::status::not_found);
}

TEST_F(ServerFixture, StreamsFramesAndAcknowledgesInput) {
  net::io_context io;
  auto ws = connect(io);
  const auto first = read_until(ws, "frame");
  for (const char* key : {"tick", "human", "robot", "plan", "goal_estimate", "nll", "status", "compute_ms"}) {
    EXPECT_TRUE(first.contains(key)) << key;
  }
  EXPECT_EQ(first["human"].size(), 4u);
  EXPECT_EQ(first["robot"].size(), 4u);
  EXPECT_EQ(first["plan"].size(), 10u);
  EXPECT_EQ(first["goal_estimate"].size(), 2u);

  const auto second = read_until(ws, "frame");
  EXPECT_GT(second["tick"].get<int>(), first["tick"].get<int>());

  ws.text(true);
  ws.write(net::buffer(std::string(R"({"type":"input","vx":5,"vy":0})")));
  const auto ack = read_until(ws, "ack");
  EXPECT_EQ(ack["for"], "input");
  EXPECT_EQ(ack["clamped"], true);
  EXPECT_DOUBLE_EQ(ack["vx"].get<double>(), 2.0);

  ws.write(net::buffer(std::string("{")));
  EXPECT_EQ(read_until(ws, "error")["message"], "malformed JSON");

  ws.write(net::buffer(std::string(R"({"type":"reset","seed":4})")));
  EXPECT_EQ(read_until(ws, "ack")["seed"], 4);
  EXPECT_EQ(read_until(ws, "frame")["tick"], 0);
  ws.close(websocket::close_code::normal);
}

TEST_F(ServerFixture, SessionsAreIndependent) {
  net::io_context io;
  auto a = connect(io);
  auto b = connect(io);
  a.text(true);
  a.write(net::buffer(std::string(R"({"type":"reset","seed":9})")));
  EXPECT_EQ(read_until(a, "ack")["seed"], 9);
  const auto fb = read_until(b, "frame");
  EXPECT_TRUE(fb.contains("human"));
  a.close(websocket::close_code::normal);
  b.close(websocket::close_code::normal);
}
