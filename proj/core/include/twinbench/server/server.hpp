// Copyright 2026 The Twinbench Authors.
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

#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "twinbench/online/stream.hpp"

namespace twinbench::server {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::chrono::milliseconds control_timeout{5000};
};

// HTTP front of a live stream loop. Reads are served from the loop's published
// snapshots; every mutation is forwarded through the loop's control channel.
class ControlServer {
 public:
  ControlServer(online::StreamLoop& loop, ServerConfig config = {});
  ~ControlServer();
  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  // Binds and starts serving on a background thread; throws std::runtime_error on bind failure.
  void start();
  void stop();
  int port() const { return port_; }
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  online::StreamLoop& loop_;
  ServerConfig config_;
  int port_ = 0;
};

// HTTP status for a rejected control reply ("code" field).
int status_for(const nlohmann::json& reply);

// Endpoint schema served at GET /schema and mirrored in docs/api.md.
nlohmann::json endpoint_schema();

}  // namespace twinbench::server
