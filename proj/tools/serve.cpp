#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "asyncsteer/scenario.hpp"
#include "asyncsteer/server.hpp"
#include "asyncsteer/session.hpp"

using namespace asyncsteer;

namespace {

std::atomic<bool> interrupted{false};

void on_signal(int) { interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serve a live steering session for a scenario."};
  std::string scenario;
  std::string listen = "127.0.0.1:8765";
  if (const char* env = std::getenv("ASYNCSTEER_LISTEN"); env && *env) listen = env;
  app.add_option("scenario", scenario, "Scenario file")->required();
  app.add_option("--listen", listen, "host:port to listen on (env ASYNCSTEER_LISTEN; port 0 picks one)");
  CLI11_PARSE(app, argc, argv);

  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "--listen wants host:port, got " << listen << "\n";
    return 2;
  }
  const auto host = listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) {
    std::cerr << "bad port in " << listen << "\n";
    return 2;
  }

  try {
    Session session(load_scenario(scenario));
    Server server(session, host, static_cast<std::uint16_t>(port));
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    session.start();
    server.start();
    std::cout << "listening on " << host << ":" << server.port() << std::endl;
    while (!interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    session.stop();
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
