#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "dtwt/service.hpp"

namespace dtwt {

/// Port from DTWT_PORT, else `fallback`.
inline int port_from_env(int fallback = 8080) {
  if (const char* v = std::getenv("DTWT_PORT")) {
    char* end = nullptr;
    const long p = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && p > 0 && p < 65536) return static_cast<int>(p);
    throw Error(ErrorCode::InvalidConfig, "DTWT_PORT must be a port number", "DTWT_PORT");
  }
  return fallback;
}

/// Routes every request of `server` through `service`.
inline void mount(httplib::Server& server, Service& service) {
  auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
    Service::Query q;
    for (const auto& [k, v] : req.params) q[k] = v;
    const Response r = service.handle(req.method, req.path, q, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(".*", handler);
  server.Put(".*", handler);
  server.Post(".*", handler);
  server.Delete(".*", handler);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace dtwt
