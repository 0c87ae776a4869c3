// Scriptable stand-in for an external model speaking the predictor protocol.
//
//   fake_predictor [--mode M] [--p-animal P] [--detect]
//
// Modes: normal, shuffle (replies to each burst of requests in reverse
// order), malformed, missing, error, badsum, wrongid, silent, badversion,
// nohello.

#include <poll.h>
#include <unistd.h>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace {

bool input_ready(int ms) {
  if (std::cin.rdbuf()->in_avail() > 0) return true;
  pollfd p{STDIN_FILENO, POLLIN, 0};
  return ::poll(&p, 1, ms) > 0;
}

void emit(const std::string& line) {
  std::cout << line << '\n';
  std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  std::string mode = "normal";
  double p = 0.93;
  bool detect = false;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--mode" && i + 1 < argc)
      mode = argv[++i];
    else if (a == "--p-animal" && i + 1 < argc)
      p = std::stod(argv[++i]);
    else if (a == "--detect")
      detect = true;
  }
  if (mode == "nohello") return 0;

  std::vector<nlohmann::json> held;
  auto reply_for = [&](const nlohmann::json& req) -> std::string {
    const std::string id = req.value("id", "");
    if (mode == "malformed") return "{this is not json";
    if (mode == "missing") return nlohmann::json{{"id", id}, {"p_animal", p}}.dump();
    if (mode == "error") return nlohmann::json{{"id", id}, {"error", "cannot read image"}}.dump();
    if (mode == "badsum") return nlohmann::json{{"id", id}, {"p_animal", 0.7}, {"p_no_animal", 0.7}}.dump();
    if (mode == "wrongid") return nlohmann::json{{"id", id + "-other"}, {"p_animal", p}, {"p_no_animal", 1 - p}}.dump();
    if (req.value("op", "") == "detect")
      return nlohmann::json{{"id", id}, {"boxes", {{{"x", 10}, {"y", 20}, {"w", 30}, {"h", 40}, {"score", 0.9}}}}}.dump();
    // an image named "p=0.25" asks for that probability, so callers can check id matching
    double q = p;
    const std::string image = req.value("image", "");
    if (image.rfind("p=", 0) == 0) q = std::stod(image.substr(2));
    return nlohmann::json{{"id", id}, {"p_animal", q}, {"p_no_animal", 1.0 - q}}.dump();
  };
  auto flush = [&] {
    for (auto it = held.rbegin(); it != held.rend(); ++it) emit(reply_for(*it));
    held.clear();
  };

  std::string line;
  for (;;) {
    if (mode == "shuffle" && !held.empty() && !input_ready(30)) flush();
    if (!std::getline(std::cin, line)) break;
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (...) {
      emit(nlohmann::json{{"id", nullptr}, {"error", "malformed request"}}.dump());
      continue;
    }
    const std::string op = req.value("op", "");
    if (op == "hello") {
      nlohmann::json caps = {"classify"};
      if (detect) caps.push_back("detect");
      emit(nlohmann::json{{"op", "hello"}, {"version", mode == "badversion" ? 2 : 1}, {"capabilities", caps}}.dump());
    } else if (op == "bye") {
      flush();
      return 0;
    } else if (op == "classify" || op == "detect") {
      if (mode == "silent") continue;
      if (mode == "shuffle")
        held.push_back(req);
      else
        emit(reply_for(req));
    } else {
      emit(nlohmann::json{{"id", req.value("id", "")}, {"error", "unknown op"}}.dump());
    }
  }
  flush();
  return 0;
}
