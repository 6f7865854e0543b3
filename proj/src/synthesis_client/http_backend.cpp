// Copyright 2026 The selfdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "httplib.h"
#include "selfdistill/synthesis_client.hpp"

#include <cstdlib>

namespace selfdistill::synth {

std::string HttpChatBackend::complete(const EndpointConfig& endpoint, const ChatRequest& request) {
  const auto scheme = endpoint.base_url.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorCode::kEndpointUnavailable, endpoint.name + ": base_url needs a scheme");
  }
  const auto slash = endpoint.base_url.find('/', scheme + 3);
  const std::string origin = endpoint.base_url.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : endpoint.base_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client cli(origin);
  const auto secs = endpoint.timeout_ms / 1000;
  const auto usecs = (endpoint.timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!endpoint.api_key_env.empty()) {
    const char* key = std::getenv(endpoint.api_key_env.c_str());
    if (!key) {
      throw Error(ErrorCode::kEndpointUnavailable, endpoint.name + ": environment variable " + endpoint.api_key_env +
                                                       " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = cli.Post(prefix + "/chat/completions", headers, request.to_wire().dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::kEndpointUnavailable, endpoint.name + ": " + httplib::to_string(res.error()));
  }
  if (res->status / 100 != 2) {
    throw Error(ErrorCode::kEndpointUnavailable, endpoint.name + ": HTTP " + std::to_string(res->status));
  }
  try {
    const auto body = json::parse(res->body);
    return body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kEndpointUnavailable, endpoint.name + ": unexpected response: " + e.what());
  }
}

}  // namespace selfdistill::synth
