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

// JSON-over-HTTP model boundary: a client backend (RemoteHttp) and a small
// reference server (ModelServer) that exposes any backend able to map text
// back to a query.
//
//   GET  /meta             -> {"embed_dim": d, "model_id": s}
//   POST /sample_refusals  -> {"bits": [...], "responses": [...] | null}
//
// The nonce "<key hex>:<stream hex>" carries the substream, so a server over a
// SyntheticField draws exactly the bits the in-process field would.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "refguard/backend.hpp"
#include "refguard/keywords.hpp"
#include "refguard/random.hpp"

namespace refguard {

inline std::string make_nonce(std::uint64_t key, std::uint64_t stream) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%016llx:%016llx", static_cast<unsigned long long>(key),
                static_cast<unsigned long long>(stream));
  return buf;
}

inline std::pair<std::uint64_t, std::uint64_t> parse_nonce(const std::string& nonce) {
  unsigned long long key = 0, stream = 0;
  char tail = 0;
  if (nonce.size() != 33 || std::sscanf(nonce.c_str(), "%16llx:%16llx%c", &key, &stream, &tail) != 2) {
    fail(ErrorCode::kInvalidInput, "malformed nonce '" + nonce + "'");
  }
  return {key, stream};
}

/// Counting gate for in-flight requests.
class InFlightLimit {
 public:
  explicit InFlightLimit(int limit) : free_(limit) {
    require(limit >= 1, ErrorCode::kConfiguration, "in-flight limit must be >= 1");
  }
  void acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int free_;
};

struct RemoteOptions {
  std::string base_url;  // "http://host:port"
  double timeout_s = 30.0;
  int max_retries = 3;
  int backoff_ms = 50;  // doubled after every failed attempt
  int max_in_flight = 8;
  bool strict_keyword_check = true;  // response/bit disagreement is an error
};

inline void to_json(Json& j, const RemoteOptions& o) {
  j = Json{{"base_url", o.base_url},
           {"timeout_s", o.timeout_s},
           {"max_retries", o.max_retries},
           {"backoff_ms", o.backoff_ms},
           {"max_in_flight", o.max_in_flight},
           {"strict_keyword_check", o.strict_keyword_check}};
}
inline void from_json(const Json& j, RemoteOptions& o) {
  RemoteOptions d;
  o.base_url = j.at("base_url").get<std::string>();
  o.timeout_s = j.value("timeout_s", d.timeout_s);
  o.max_retries = j.value("max_retries", d.max_retries);
  o.backoff_ms = j.value("backoff_ms", d.backoff_ms);
  o.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  o.strict_keyword_check = j.value("strict_keyword_check", d.strict_keyword_check);
}

class RemoteHttp : public ModelBackend {
 public:
  /// Fetches /meta right away; the embedding dimension is cached.
  explicit RemoteHttp(RemoteOptions options)
      : options_(std::move(options)), gate_(std::make_unique<InFlightLimit>(options_.max_in_flight)) {
    require(options_.max_retries >= 0, ErrorCode::kConfiguration, "max_retries must be >= 0");
    require(options_.timeout_s > 0.0, ErrorCode::kConfiguration, "timeout must be > 0");
    const Json meta = call("GET", "/meta", nullptr, std::nullopt);
    try {
      dim_ = meta.at("embed_dim").get<std::size_t>();
      model_id_ = meta.value("model_id", std::string("remote"));
    } catch (const Json::exception& e) {
      fail(ErrorCode::kProtocol, std::string("malformed /meta payload: ") + e.what());
    }
    require(dim_ >= 1, ErrorCode::kProtocol, "/meta reported embed_dim < 1");
  }

  std::size_t embed_dim() const override { return dim_; }
  BackendCapabilities capabilities() const override { return {false, true, false}; }
  std::string model_id() const override { return model_id_; }

  RefusalSample sample_refusals(const SampleRequest& r) const override {
    require(r.n >= 1, ErrorCode::kInvalidInput, "sample count must be >= 1");
    if (!r.perturbation.empty() && r.perturbation.size() != dim_) {
      fail(ErrorCode::kDimensionMismatch, "perturbation has " + std::to_string(r.perturbation.size()) +
                                              " components, remote embed_dim is " + std::to_string(dim_));
    }
    const std::string nonce = make_nonce(r.key, r.stream);
    Json body{{"text", r.query.text},
              {"perturbation", r.perturbation.empty() ? Json(nullptr) : Json(r.perturbation)},
              {"n", r.n},
              {"nonce", nonce},
              {"system_prompt", r.system_prompt ? Json(*r.system_prompt) : Json(nullptr)},
              {"return_responses", r.return_responses}};
    const Json reply = call("POST", "/sample_refusals", &body, nonce);
    return decode(reply, r.n);
  }

  std::vector<RefusalSample> sample_batch(std::span<const SampleRequest> requests) const override {
    std::vector<RefusalSample> out(requests.size());
    std::vector<std::optional<Error>> errors(requests.size());
    std::atomic<std::size_t> next{0};
    const std::size_t workers =
        std::min<std::size_t>(requests.size(), static_cast<std::size_t>(options_.max_in_flight));
    auto work = [&] {
      for (std::size_t i = next++; i < requests.size(); i = next++) {
        try {
          out[i] = sample_refusals(requests[i]);
        } catch (const Error& e) {
          errors[i] = e;
        } catch (const std::exception& e) {
          errors[i] = Error(ErrorCode::kTransport, e.what());
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) throw *e;
    }
    return out;
  }

  /// One response drawn as sample 0 of the given substream, unperturbed.
  std::string generate(const Query& q, std::uint64_t key, std::uint64_t stream,
                       const std::optional<std::string>& system_prompt) const override {
    SampleRequest r;
    r.query = q;
    r.n = 1;
    r.key = key;
    r.stream = stream;
    r.return_responses = true;
    r.system_prompt = system_prompt;
    auto s = sample_refusals(r);
    if (!s.responses) fail(ErrorCode::kProtocol, "server returned no response text for a generation request");
    return s.responses->front();
  }

  long long keyword_mismatches() const { return mismatches_; }
  long long attempts() const { return attempts_; }

 private:
  RefusalSample decode(const Json& reply, int n) const {
    RefusalSample s;
    if (!reply.is_object() || !reply.contains("bits") || !reply.at("bits").is_array()) {
      fail(ErrorCode::kProtocol, "reply has no 'bits' array");
    }
    const auto& bits = reply.at("bits");
    if (bits.size() != static_cast<std::size_t>(n)) {
      fail(ErrorCode::kProtocol, "expected " + std::to_string(n) + " bits, got " + std::to_string(bits.size()));
    }
    for (const auto& b : bits) {
      if (!b.is_number_integer() || (b.get<int>() != 0 && b.get<int>() != 1)) {
        fail(ErrorCode::kProtocol, "bits must be 0 or 1");
      }
      s.bits.push_back(static_cast<std::uint8_t>(b.get<int>()));
    }
    if (reply.contains("responses") && !reply.at("responses").is_null()) {
      const auto& rs = reply.at("responses");
      if (!rs.is_array() || rs.size() != s.bits.size()) {
        fail(ErrorCode::kProtocol, "responses must be an array of " + std::to_string(n) + " strings");
      }
      std::vector<std::string> texts;
      for (std::size_t i = 0; i < rs.size(); ++i) {
        if (!rs[i].is_string()) fail(ErrorCode::kProtocol, "responses must be strings");
        texts.push_back(rs[i].get<std::string>());
        if (jb_indicator(texts.back()) != s.bits[i]) {
          ++mismatches_;
          if (options_.strict_keyword_check) {
            fail(ErrorCode::kProtocol, "bit " + std::to_string(i) + " disagrees with the keyword check on its response");
          }
        }
      }
      s.responses = std::move(texts);
    }
    return s;
  }

  /// GETs are always retried; POSTs only when they carry an idempotency key.
  Json call(const std::string& method, const std::string& path, const Json* body,
            const std::optional<std::string>& idempotency_key) const {
    const bool retryable = method == "GET" || idempotency_key.has_value();
    const int attempts = retryable ? options_.max_retries + 1 : 1;
    std::optional<Error> last;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(options_.backoff_ms << (attempt - 1)));
      }
      ++attempts_;
      gate_->acquire();
      std::optional<Json> ok;
      bool transient = false;
      try {
        httplib::Client client(options_.base_url);
        const auto secs = static_cast<time_t>(options_.timeout_s);
        const auto usecs = static_cast<time_t>((options_.timeout_s - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (idempotency_key) headers.emplace("Idempotency-Key", *idempotency_key);
        auto res = method == "GET" ? client.Get(path, headers)
                                   : client.Post(path, headers, body->dump(), "application/json");
        if (!res) {
          const auto err = res.error();
          const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
          last = Error(timed_out ? ErrorCode::kTimeout : ErrorCode::kTransport,
                       method + " " + path + ": " + httplib::to_string(err));
          transient = true;
        } else if (res->status >= 500) {
          last = Error(ErrorCode::kBackend, method + " " + path + ": HTTP " + std::to_string(res->status));
          transient = true;
        } else if (res->status >= 400) {
          const auto code = res->status == 404 ? ErrorCode::kNotFound : ErrorCode::kInvalidInput;
          std::string detail = res->body;
          try {
            detail = Json::parse(res->body).at("error").get<std::string>();
          } catch (...) {
          }
          last = Error(code, method + " " + path + ": HTTP " + std::to_string(res->status) + ": " + detail);
        } else {
          try {
            ok = Json::parse(res->body);
          } catch (const Json::exception& e) {
            last = Error(ErrorCode::kProtocol, method + " " + path + ": malformed JSON reply: " + e.what());
          }
        }
      } catch (...) {
        gate_->release();
        throw;
      }
      gate_->release();
      if (ok) return *ok;
      if (!transient) break;
    }
    throw *last;
  }

  RemoteOptions options_;
  std::unique_ptr<InFlightLimit> gate_;
  std::size_t dim_ = 0;
  std::string model_id_;
  mutable std::atomic<long long> mismatches_{0};
  mutable std::atomic<long long> attempts_{0};
};

// ---------------------------------------------------------------- reference server

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kConfiguration:
      return 400;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kBackend:
    case ErrorCode::kTransport:
    case ErrorCode::kTimeout:
      return 503;
    default:
      return 500;
  }
}

/// Serves a backend over the remote protocol. The backend must resolve
/// request text to a known query id.
class ModelServer {
 public:
  explicit ModelServer(const ModelBackend& backend) : backend_(backend) {
    server_.Get("/meta", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, Json{{"embed_dim", backend_.embed_dim()}, {"model_id", backend_.model_id()}});
    });
    server_.Post("/sample_refusals", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      try {
        reply(res, 200, handle_sample(req.body));
      } catch (const Error& e) {
        reply(res, http_status_for(e.code()), Json{{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, Json{{"error", e.what()}});
      }
    });
  }

  ~ModelServer() { stop(); }
  ModelServer(const ModelServer&) = delete;
  ModelServer& operator=(const ModelServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) fail(ErrorCode::kTransport, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port) {
    if (!server_.listen(host, port)) fail(ErrorCode::kTransport, "cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  long long requests() const { return requests_; }

 private:
  Json handle_sample(const std::string& text) const {
    Json body;
    try {
      body = Json::parse(text);
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidInput, std::string("request is not JSON: ") + e.what());
    }
    SampleRequest r;
    try {
      r.query.text = body.at("text").get<std::string>();
      r.n = body.at("n").get<int>();
      const auto [key, stream] = parse_nonce(body.at("nonce").get<std::string>());
      r.key = key;
      r.stream = stream;
      if (body.contains("perturbation") && !body.at("perturbation").is_null()) {
        r.perturbation = body.at("perturbation").get<Vector>();
      }
      if (body.contains("system_prompt") && !body.at("system_prompt").is_null()) {
        r.system_prompt = body.at("system_prompt").get<std::string>();
      }
      r.return_responses = body.value("return_responses", false);
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidInput, std::string("bad request field: ") + e.what());
    }
    require(r.n >= 1, ErrorCode::kInvalidInput, "n must be >= 1");
    const auto id = backend_.resolve_text(r.query.text);
    if (!id) fail(ErrorCode::kNotFound, "unknown query text");
    r.query.id = *id;
    const RefusalSample s = backend_.sample_refusals(r);
    Json bits = Json::array();
    for (auto b : s.bits) bits.push_back(static_cast<int>(b));
    return Json{{"bits", bits}, {"responses", s.responses ? Json(*s.responses) : Json(nullptr)}};
  }

  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  const ModelBackend& backend_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<long long> requests_{0};
};

}  // namespace refguard
