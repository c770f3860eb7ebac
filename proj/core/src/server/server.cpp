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

#include "twinbench/server/server.hpp"

#include <future>
#include <stdexcept>
#include <thread>

#include <httplib.h>

namespace twinbench::server {

int status_for(const nlohmann::json& reply) {
  if (reply.value("ok", true)) return 200;
  const std::string code = reply.value("code", std::string());
  if (code == "unknown") return 404;
  if (code == "duplicate" || code == "retrain_required") return 409;
  if (code == "expired") return 410;
  if (code == "unavailable") return 503;
  return 400;
}

nlohmann::json endpoint_schema() {
  return {
      {"GET /metrics", {{"response", "online metrics record: steps, query_rate, mean_response_s, throughput_hz, "
                                     "safety_rate, updates, initial_buffer, final_buffer, labels_added, "
                                     "batch_query_total, forced_queries, wall_s"}}},
      {"GET /state", {{"response", "loop snapshot: step, paused, halted, mode, hot_params, buffer and pool sizes, "
                                   "pending_queries, blocks, gradient_steps, focused_pending, focused_done, metrics, "
                                   "last step record"}}},
      {"GET /events", {{"response", "text/event-stream; one 'step' event per stream step carrying the step record, "
                                    "'end' when the stream finishes; event ids are strictly increasing"}}},
      {"GET /queries", {{"response", "array of pending queries: id, origin_step, state, proposed_action, u, "
                                     "seconds_remaining"}}},
      {"POST /queries/{id}/answer", {{"request", "{\"action\": 0-4 or treatment name}"},
                                     {"response", "{ok, id, provenance: \"human\", action}"},
                                     {"errors", "400 malformed, 404 unknown id, 409 duplicate, 410 expired"}}},
      {"POST /params", {{"request", "{\"<name>\": value, ...}; applied in key order"},
                        {"response", "{results: [{ok, tier, param, message, effective_at, focused_steps, retarget}]}"},
                        {"errors", "400 unknown or invalid, 409 tier-3 (full retrain required)"}}},
      {"POST /pause", {{"response", "{ok, paused: true}"}}},
      {"POST /resume", {{"response", "{ok, paused: false}"}}},
      {"GET /report/{patient_id}", {{"response", "{ok, patient_id, html}; ?format=html returns the document itself"},
                                    {"errors", "404 patient not seen in this stream"}}},
      {"GET /schema", {{"response", "this document"}}}};
}

struct ControlServer::Impl {
  httplib::Server http;
  std::thread thread;
};

namespace {

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(req.body);
}

}  // namespace

ControlServer::ControlServer(online::StreamLoop& loop, ServerConfig config)
    : impl_(std::make_unique<Impl>()), loop_(loop), config_(std::move(config)) {}

ControlServer::~ControlServer() { stop(); }

bool ControlServer::running() const { return impl_->http.is_running(); }

void ControlServer::start() {
  auto& http = impl_->http;
  online::StreamLoop& loop = loop_;
  const auto timeout = config_.control_timeout;

  // Forwards one control message and waits for the loop to apply it.
  auto forward = [&loop, timeout](const std::string& kind, nlohmann::json payload) -> nlohmann::json {
    std::future<nlohmann::json> f = loop.channel().submit(kind, std::move(payload));
    if (f.wait_for(timeout) != std::future_status::ready)
      return {{"ok", false}, {"code", "unavailable"}, {"error", "stream loop did not respond"}};
    return f.get();
  };

  http.Get("/metrics", [&loop](const httplib::Request&, httplib::Response& res) {
    send_json(res, loop.snapshot().value("metrics", nlohmann::json::object()));
  });
  http.Get("/state", [&loop](const httplib::Request&, httplib::Response& res) { send_json(res, loop.snapshot()); });
  http.Get("/queries", [&loop](const httplib::Request&, httplib::Response& res) {
    send_json(res, loop.pending_queries());
  });
  http.Get("/schema", [](const httplib::Request&, httplib::Response& res) { send_json(res, endpoint_schema()); });

  http.Get("/events", [&loop](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t last = 0;
    if (req.has_header("Last-Event-ID")) last = std::stoull(req.get_header_value("Last-Event-ID"));
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [&loop, last](std::size_t, httplib::DataSink& sink) mutable {
      const auto batch = loop.events().since(last, std::chrono::milliseconds(1000));
      if (batch.empty()) {
        if (loop.events().closed()) {
          sink.done();
          return true;
        }
        const std::string ping = ": keep-alive\n\n";
        return sink.write(ping.data(), ping.size());
      }
      for (const auto& [id, ev] : batch) {
        const std::string kind = ev.contains("event") ? ev["event"].get<std::string>() : "step";
        const std::string msg = "id: " + std::to_string(id) + "\nevent: " + kind + "\ndata: " + ev.dump() + "\n\n";
        if (!sink.write(msg.data(), msg.size())) return false;
        last = id;
      }
      return true;
    });
  });

  http.Post(R"(/queries/(-?\d+)/answer)", [forward](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = parse_body(req);
    } catch (const std::exception&) {
      send_json(res, {{"ok", false}, {"code", "malformed"}, {"error", "body is not JSON"}}, 400);
      return;
    }
    if (!body.is_object() || !body.contains("action")) {
      send_json(res, {{"ok", false}, {"code", "malformed"}, {"error", "answer needs an action"}}, 400);
      return;
    }
    nlohmann::json payload = {{"id", std::stoll(req.matches[1].str())}, {"action", body["action"]}};
    const nlohmann::json reply = forward("answer_query", std::move(payload));
    send_json(res, reply, status_for(reply));
  });

  http.Post("/params", [forward](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = parse_body(req);
    } catch (const std::exception&) {
      send_json(res, {{"ok", false}, {"code", "malformed"}, {"error", "body is not JSON"}}, 400);
      return;
    }
    if (!body.is_object() || body.empty()) {
      send_json(res, {{"ok", false}, {"code", "malformed"}, {"error", "expected an object of parameter changes"}}, 400);
      return;
    }
    nlohmann::json results = nlohmann::json::array();
    int status = 200;
    for (const auto& [name, value] : body.items()) {
      const nlohmann::json reply = forward("set_param", {{"name", name}, {"value", value}});
      // An unknown parameter name is a bad request here, not a missing resource.
      const bool unknown_name = reply.value("code", std::string()) == "unknown";
      status = std::max(status, unknown_name ? 400 : status_for(reply));
      results.push_back(reply);
    }
    send_json(res, {{"ok", status == 200}, {"results", results}}, status);
  });

  http.Post("/pause", [forward](const httplib::Request&, httplib::Response& res) {
    const nlohmann::json reply = forward("pause", nlohmann::json::object());
    send_json(res, reply, status_for(reply));
  });
  http.Post("/resume", [forward](const httplib::Request&, httplib::Response& res) {
    const nlohmann::json reply = forward("resume", nlohmann::json::object());
    send_json(res, reply, status_for(reply));
  });

  http.Get(R"(/report/(-?\d+))", [forward](const httplib::Request& req, httplib::Response& res) {
    const nlohmann::json reply = forward("report", {{"patient_id", std::stoi(req.matches[1].str())}});
    if (reply.value("ok", false) && req.get_param_value("format") == "html") {
      res.set_content(reply["html"].get<std::string>(), "text/html");
      return;
    }
    send_json(res, reply, status_for(reply));
  });

  if (config_.port == 0) {
    port_ = http.bind_to_any_port(config_.host);
    if (port_ <= 0) throw std::runtime_error("ControlServer: cannot bind " + config_.host);
  } else {
    if (!http.bind_to_port(config_.host, config_.port))
      throw std::runtime_error("ControlServer: cannot bind " + config_.host + ":" + std::to_string(config_.port));
    port_ = config_.port;
  }
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

void ControlServer::stop() {
  if (!impl_) return;
  loop_.events().close();
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace twinbench::server
