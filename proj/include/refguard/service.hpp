/* Copyright 2026 The refguard Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// HTTP guardrail in front of a backend:
//
//   POST /v1/detect  {"text"} -> {"decision", "f", "grad_norm", "queries_used"}
//   POST /v1/chat    {"text"} -> {"response"} or {"response": refusal, "rejected": true}
//   GET  /v1/health           -> {"status": "ok", "calibration_id"}
//   GET  /v1/config           -> effective configuration, secrets redacted
//
// Every request is appended to the audit log as one JSON line.

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "httplib.h"
#include "refguard/detector.hpp"
#include "refguard/io.hpp"
#include "refguard/remote.hpp"

namespace refguard {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  Json backend;  // backend descriptor, see io.hpp
  DetectorConfig detector;
  std::optional<std::string> calibration_path;
  int max_parallel = 8;
  std::optional<std::string> audit_log;
  std::filesystem::path base_dir;  // relative paths resolve against this
};

inline void to_json(Json& j, const ServiceConfig& c) {
  j = Json{{"listen", {{"host", c.host}, {"port", c.port}}},
           {"backend", c.backend},
           {"detector", c.detector},
           {"calibration", c.calibration_path ? Json(*c.calibration_path) : Json(nullptr)},
           {"max_parallel", c.max_parallel},
           {"audit_log", c.audit_log ? Json(*c.audit_log) : Json(nullptr)}};
}

inline void from_json(const Json& j, ServiceConfig& c) {
  ServiceConfig d;
  if (j.contains("listen")) {
    c.host = j.at("listen").value("host", d.host);
    c.port = j.at("listen").value("port", d.port);
  }
  c.backend = j.at("backend");
  c.detector = j.value("detector", Json::object()).get<DetectorConfig>();
  c.calibration_path.reset();
  if (j.contains("calibration") && !j.at("calibration").is_null()) c.calibration_path = j.at("calibration").get<std::string>();
  c.max_parallel = j.value("max_parallel", d.max_parallel);
  c.audit_log.reset();
  if (j.contains("audit_log") && !j.at("audit_log").is_null()) c.audit_log = j.at("audit_log").get<std::string>();
}

inline ServiceConfig load_service_config(const std::string& path) {
  ServiceConfig c;
  try {
    c = load_json_file(path).get<ServiceConfig>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kConfiguration, "bad service config '" + path + "': " + e.what());
  }
  c.base_dir = std::filesystem::path(path).parent_path();
  return c;
}

/// Copy of `j` with values under secret-looking keys replaced.
inline Json redact_secrets(const Json& j) {
  if (j.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : j.items()) {
      std::string lower;
      for (char ch : k) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      const bool secret = lower.find("key") != std::string::npos || lower.find("token") != std::string::npos ||
                          lower.find("secret") != std::string::npos || lower.find("password") != std::string::npos ||
                          lower.find("authorization") != std::string::npos;
      out[k] = secret ? Json("[redacted]") : redact_secrets(v);
    }
    return out;
  }
  if (j.is_array()) {
    Json out = Json::array();
    for (const auto& v : j) out.push_back(redact_secrets(v));
    return out;
  }
  return j;
}

inline std::string hex64(std::uint64_t x) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Query id for text the backend cannot resolve itself.
inline std::string text_query_id(const std::string& text) { return "text-" + hex64(fnv1a64(text)); }

class GuardService {
 public:
  /// `config.detector.threshold` must be set, directly or by `calibration`.
  GuardService(std::shared_ptr<const ModelBackend> backend, ServiceConfig config,
               std::optional<CalibrationResult> calibration = std::nullopt)
      : backend_(std::move(backend)), config_(std::move(config)), gate_(std::max(1, config_.max_parallel)) {
    require(backend_ != nullptr, ErrorCode::kConfiguration, "service needs a backend");
    require(config_.max_parallel >= 1, ErrorCode::kConfiguration, "max_parallel must be >= 1");
    if (calibration) {
      config_.detector = with_calibration(config_.detector, *calibration);
      calibration_id_ = "cal-" + hex64(fnv1a64(Json(*calibration).dump()));
    } else {
      calibration_id_ = "none";
    }
    config_.detector.validate();
    if (!config_.detector.threshold) {
      fail(ErrorCode::kConfiguration, "service needs a calibration file or an explicit threshold");
    }
    if (config_.audit_log) {
      audit_.open(resolve(*config_.audit_log), std::ios::app);
      if (!audit_) fail(ErrorCode::kIo, "cannot open audit log '" + *config_.audit_log + "'");
    }
    routes();
  }

  /// Builds the backend and loads the calibration named in `config`.
  static std::unique_ptr<GuardService> from_config(const ServiceConfig& config) {
    std::shared_ptr<const ModelBackend> backend = make_backend(config.backend, config.base_dir);
    std::optional<CalibrationResult> cal;
    if (config.calibration_path) {
      const auto path = (config.base_dir / *config.calibration_path).string();
      try {
        cal = load_json_file(path).get<CalibrationResult>();
      } catch (const Json::exception& e) {
        fail(ErrorCode::kConfiguration, "bad calibration file '" + path + "': " + e.what());
      }
    }
    return std::make_unique<GuardService>(std::move(backend), config, std::move(cal));
  }

  ~GuardService() { stop(); }
  GuardService(const GuardService&) = delete;
  GuardService& operator=(const GuardService&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  int start() {
    port_ = config_.port == 0 ? server_.bind_to_any_port(config_.host)
                              : (server_.bind_to_port(config_.host, config_.port) ? config_.port : -1);
    if (port_ <= 0) fail(ErrorCode::kTransport, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void listen() {
    port_ = config_.port;
    if (!server_.listen(config_.host, config_.port)) {
      fail(ErrorCode::kTransport, "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
    }
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://" + config_.host + ":" + std::to_string(port_); }
  const DetectorConfig& detector_config() const { return config_.detector; }
  const std::string& calibration_id() const { return calibration_id_; }
  long long request_count() const { return requests_; }

  Json config_snapshot() const {
    Json j = config_;
    j["detector"] = config_.detector;
    j["calibration_id"] = calibration_id_;
    return redact_secrets(j);
  }

 private:
  struct Outcome {
    int status = 200;
    Json body;
    std::optional<Verdict> verdict;
    std::optional<std::string> error;
    std::optional<std::string> error_id;
  };

  std::string resolve(const std::string& p) const { return (config_.base_dir / p).string(); }

  void routes() {
    const auto pool = static_cast<std::size_t>(config_.max_parallel) + 2;
    server_.new_task_queue = [pool] { return new httplib::ThreadPool(pool); };
    server_.Post("/v1/detect", [this](const httplib::Request& req, httplib::Response& res) {
      serve(req, res, [this](const std::string& body) { return detect_endpoint(body, false); });
    });
    server_.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
      serve(req, res, [this](const std::string& body) { return detect_endpoint(body, true); });
    });
    server_.Get("/v1/health", [this](const httplib::Request& req, httplib::Response& res) {
      serve(req, res, [this](const std::string&) {
        return Outcome{200, Json{{"status", "ok"}, {"calibration_id", calibration_id_}}, {}, {}, {}};
      });
    });
    server_.Get("/v1/config", [this](const httplib::Request& req, httplib::Response& res) {
      serve(req, res, [this](const std::string&) { return Outcome{200, config_snapshot(), {}, {}, {}}; });
    });
  }

  template <class Handler>
  void serve(const httplib::Request& req, httplib::Response& res, Handler&& handler) {
    const long long id = ++requests_;
    Outcome out;
    try {
      out = handler(req.body);
    } catch (const Error& e) {
      out = failure(e.code(), e.what());
    } catch (const std::exception& e) {
      out = failure(ErrorCode::kInternal, e.what());
    }
    if (out.status == 503) res.set_header("Retry-After", "1");
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
    audit(id, req, out);
  }

  Outcome failure(ErrorCode code, const std::string& message) {
    Outcome out;
    out.status = http_status_for(code);
    out.error = message;
    if (out.status == 500) {
      out.error_id = hex64(splitmix64(static_cast<std::uint64_t>(
          std::chrono::steady_clock::now().time_since_epoch().count()) ^ static_cast<std::uint64_t>(requests_)));
      out.body = Json{{"error", "internal error"}, {"error_id", *out.error_id}};
    } else {
      out.body = Json{{"error", message}};
    }
    return out;
  }

  Outcome detect_endpoint(const std::string& body, bool chat) {
    Json j;
    try {
      j = Json::parse(body);
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidInput, std::string("request body is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j.at("text").is_string()) {
      fail(ErrorCode::kInvalidInput, "request body needs a string 'text'");
    }
    Query q;
    q.text = j.at("text").get<std::string>();
    q.id = backend_->resolve_text(q.text).value_or(text_query_id(q.text));

    gate_.acquire();
    Verdict v;
    try {
      v = detect(*backend_, q, config_.detector);
    } catch (...) {
      gate_.release();
      throw;
    }
    gate_.release();

    Outcome out;
    out.verdict = v;
    if (chat) {
      out.body = v.rejected() ? Json{{"response", config_.detector.refusal_message}, {"rejected", true}}
                              : Json{{"response", *v.response}};
    } else {
      out.body = Json{{"decision", decision_name(v.decision)},
                      {"f", v.f_value.value()},
                      {"grad_norm", v.grad_norm ? Json(*v.grad_norm) : Json(nullptr)},
                      {"queries_used", v.queries_used}};
    }
    return out;
  }

  void audit(long long id, const httplib::Request& req, const Outcome& out) {
    Json line{{"ts", detail::utc_timestamp()},
              {"request_id", id},
              {"method", req.method},
              {"path", req.path},
              {"status", out.status},
              {"verdict", out.verdict ? Json(*out.verdict) : Json(nullptr)},
              {"error", out.error ? Json(*out.error) : Json(nullptr)},
              {"error_id", out.error_id ? Json(*out.error_id) : Json(nullptr)}};
    std::lock_guard<std::mutex> lock(audit_mu_);
    if (audit_.is_open()) {
      audit_ << line.dump() << '\n';
      audit_.flush();
    }
  }

  std::shared_ptr<const ModelBackend> backend_;
  ServiceConfig config_;
  std::string calibration_id_;
  InFlightLimit gate_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<long long> requests_{0};
  std::mutex audit_mu_;
  std::ofstream audit_;
};

}  // namespace refguard
