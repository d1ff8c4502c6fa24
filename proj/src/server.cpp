// SPDX-License-Identifier: Apache-2.0
#include <httplib.h>

#include "archx/error.hpp"
#include "archx/service.hpp"

namespace archx {

void run_server(ExplorerApi& api, const std::string& host, int port) {
  httplib::Server server;
  auto forward = [&api](const httplib::Request& req, httplib::Response& res) {
    QueryParams query(req.params.begin(), req.params.end());
    const auto out = api.handle(req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  server.Get(R"(/api/.*)", forward);
  server.Post(R"(/api/.*)", forward);
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    nlohmann::ordered_json j;
    j["error"] = {{"status", res.status}, {"code", "not_found"}, {"message", "no endpoint " + req.path}};
    res.set_content(j.dump(), "application/json");
  });
  if (!server.bind_to_port(host, port)) {
    throw Error(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
  }
  server.listen_after_bind();
}

}  // namespace archx
