#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "game_server.hpp"
#include "mpgp/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Interactive tracking game server (WebSocket + /health)"};
  mpgp::server::ServerOptions options;
  std::string scenario = MPGP_CONFIG_DIR "/tracking.json";
  app.add_option("--port", options.port, "listening port (0 picks a free port)");
  app.add_option("--address", options.address, "listening address");
  app.add_option("--scenario", scenario, "tracking scenario JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", options.seed, "seed of new sessions");
  CLI11_PARSE(app, argc, argv);

  try {
    const mpgp::ScenarioModel model(mpgp::load_scenario(scenario));
    boost::asio::io_context io;
    mpgp::server::GameServer server(io, model, options);
    boost::asio::signal_set signals(io, SIGINT, SIGTERM);
    signals.async_wait([&io](const boost::system::error_code&, int) { io.stop(); });
    std::cout << "listening on " << options.address << ':' << server.port() << std::endl;
    io.run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
