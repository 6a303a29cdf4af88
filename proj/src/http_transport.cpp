// SPDX-License-Identifier: Apache-2.0
#include <httplib.h>

#include "capengine/backends.hpp"
#include "capengine/error.hpp"

namespace capengine {

namespace {

void apply_timeout(httplib::Client& client, std::chrono::milliseconds timeout) {
  const auto sec = static_cast<time_t>(timeout.count() / 1000);
  const auto usec = static_cast<time_t>((timeout.count() % 1000) * 1000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
}

}  // namespace

HttpTransport::HttpTransport(std::string endpoint, std::string bearer_token)
    : bearer_token_(std::move(bearer_token)) {
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::kConfig, "endpoint needs a scheme: " + endpoint);
  const auto slash = endpoint.find('/', scheme + 3);
  origin_ = endpoint.substr(0, slash);
  if (slash != std::string::npos) {
    base_path_ = endpoint.substr(slash);
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  }
}

HttpResponse HttpTransport::post(const std::string& path, const std::string& body,
                                 std::chrono::milliseconds timeout) {
  httplib::Client client(origin_);
  apply_timeout(client, timeout);
  if (!bearer_token_.empty()) client.set_bearer_token_auth(bearer_token_);
  auto res = client.Post(base_path_ + path, body, "application/json");
  if (!res) throw TransportError(origin_ + base_path_ + path + ": " + httplib::to_string(res.error()));
  return HttpResponse{res->status, res->body};
}

bool HttpTransport::probe(std::chrono::milliseconds timeout) {
  httplib::Client client(origin_);
  apply_timeout(client, timeout);
  // Any HTTP answer, including 404, proves the service is reachable.
  return static_cast<bool>(client.Get(base_path_ + "/"));
}

}  // namespace capengine
