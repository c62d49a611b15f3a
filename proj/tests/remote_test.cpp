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

#include "refguard/remote.hpp"

#include "gtest/gtest.h"
#include "refguard/detector.hpp"
#include "refguard/gradient.hpp"
#include "refguard/population.hpp"
#include "test_support.hpp"

namespace refguard {
namespace {

const Population& population() {
  static const Population pop = [] {
    auto spec = PopulationSpec::default_spec();
    spec.benign.count = 40;
    for (auto& a : spec.attacks) a.count = 8;
    return generate_population(spec, 42);
  }();
  return pop;
}

RemoteOptions options_for(const std::string& url) {
  RemoteOptions o;
  o.base_url = url;
  o.timeout_s = 5.0;
  o.backoff_ms = 1;
  return o;
}

/// Drops the last bit of every reply.
class ShortBackend : public ModelBackend {
 public:
  explicit ShortBackend(const ModelBackend& inner) : inner_(inner) {}
  std::size_t embed_dim() const override { return inner_.embed_dim(); }
  BackendCapabilities capabilities() const override { return inner_.capabilities(); }
  RefusalSample sample_refusals(const SampleRequest& r) const override {
    auto s = inner_.sample_refusals(r);
    s.bits.pop_back();
    return s;
  }
  std::string generate(const Query& q, std::uint64_t k, std::uint64_t s,
                       const std::optional<std::string>& sp) const override {
    return inner_.generate(q, k, s, sp);
  }
  std::optional<std::string> resolve_text(std::string_view t) const override { return inner_.resolve_text(t); }

 private:
  const ModelBackend& inner_;
};

/// Fails the first `failures` sampling calls with a backend error.
class FlakyBackend : public ModelBackend {
 public:
  FlakyBackend(const ModelBackend& inner, int failures) : inner_(inner), left_(failures) {}
  std::size_t embed_dim() const override { return inner_.embed_dim(); }
  BackendCapabilities capabilities() const override { return inner_.capabilities(); }
  RefusalSample sample_refusals(const SampleRequest& r) const override {
    if (left_.fetch_sub(1) > 0) fail(ErrorCode::kBackend, "model overloaded");
    return inner_.sample_refusals(r);
  }
  std::string generate(const Query& q, std::uint64_t k, std::uint64_t s,
                       const std::optional<std::string>& sp) const override {
    return inner_.generate(q, k, s, sp);
  }
  std::optional<std::string> resolve_text(std::string_view t) const override { return inner_.resolve_text(t); }

 private:
  const ModelBackend& inner_;
  mutable std::atomic<int> left_;
};

/// Bare HTTP server with canned replies, recording what it was sent.
class CannedServer {
 public:
  CannedServer(Json meta, Json sample_reply) {
    server_.Get("/meta", [meta](const httplib::Request&, httplib::Response& res) {
      res.set_content(meta.is_string() ? meta.get<std::string>() : meta.dump(), "application/json");
    });
    server_.Post("/sample_refusals", [this, sample_reply](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard<std::mutex> lock(mu_);
        keys_.push_back(req.get_header_value("Idempotency-Key"));
        bodies_.push_back(Json::parse(req.body));
      }
      res.set_content(sample_reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~CannedServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::vector<std::string> keys() const {
    std::lock_guard<std::mutex> lock(mu_);
    return keys_;
  }
  std::vector<Json> bodies() const {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::vector<std::string> keys_;
  std::vector<Json> bodies_;
};

TEST(NonceTest, RoundTrip) {
  const auto n = make_nonce(0x0123456789abcdefull, streams::kResponse);
  EXPECT_EQ(n, "0123456789abcdef:0100000000000000");
  EXPECT_EQ(parse_nonce(n), std::make_pair(std::uint64_t{0x0123456789abcdefull}, streams::kResponse));
  EXPECT_THROW(parse_nonce("abc"), Error);
  EXPECT_THROW(parse_nonce("0123456789abcdef-0100000000000000"), Error);
}

TEST(RemoteLoopbackTest, BitsMatchInProcessField) {
  const auto& pop = population();
  ModelServer server(pop.field);
  server.start();
  RemoteHttp remote(options_for(server.url()));
  EXPECT_EQ(remote.embed_dim(), pop.field.embed_dim());
  EXPECT_EQ(remote.model_id(), pop.field.model_id());

  DetectorConfig cfg;
  for (const auto& q : pop.all()) {
    const auto dirs = query_directions(q, cfg, pop.field.embed_dim());
    for (std::size_t i = 0; i < 3; ++i) {
      const Vector v = scaled(dirs.directions[i], cfg.mu);
      const auto req = make_sample_request(q, v, cfg, streams::direction(i));
      EXPECT_EQ(remote.sample_refusals(req).bits, pop.field.sample_refusals(req).bits) << q.id;
    }
    const auto base = make_sample_request(q, {}, cfg, streams::kBase);
    EXPECT_EQ(remote.sample_refusals(base).bits, pop.field.sample_refusals(base).bits);
  }
}

TEST(RemoteLoopbackTest, DetectionMatchesInProcessField) {
  const auto& pop = population();
  ModelServer server(pop.field);
  server.start();
  auto opts = options_for(server.url());
  opts.max_in_flight = 4;
  RemoteHttp remote(opts);
  DetectorConfig cfg;
  cfg.threshold = 40.0;
  const auto queries = pop.all();
  const auto local = detect_batch(pop.field, queries, cfg, 64);
  const auto over_wire = detect_batch(remote, queries, cfg, 64);
  ASSERT_EQ(local.size(), over_wire.size());
  int passed = 0;
  for (std::size_t i = 0; i < local.size(); ++i) {
    ASSERT_TRUE(over_wire[i].verdict) << over_wire[i].error->what();
    EXPECT_EQ(*local[i].verdict, *over_wire[i].verdict) << queries[i].id;
    passed += !local[i].verdict->rejected();
  }
  EXPECT_GT(passed, 0);
}

TEST(RemoteLoopbackTest, ResponsesReturnedAndChecked) {
  const auto& pop = population();
  ModelServer server(pop.field);
  server.start();
  RemoteHttp remote(options_for(server.url()));
  DetectorConfig cfg;
  auto req = make_sample_request(pop.malicious[0], {}, cfg, streams::kBase);
  req.return_responses = true;
  const auto s = remote.sample_refusals(req);
  ASSERT_TRUE(s.responses);
  EXPECT_EQ(s.responses->size(), 10u);
  EXPECT_EQ(remote.keyword_mismatches(), 0);
}

TEST(RemoteLoopbackTest, GenerateMatchesField) {
  const auto& pop = population();
  ModelServer server(pop.field);
  server.start();
  RemoteHttp remote(options_for(server.url()));
  for (const auto& q : pop.malicious) {
    const auto key = derive_key(42, q.id);
    EXPECT_EQ(remote.generate(q, key, streams::kResponse, std::nullopt),
              pop.field.generate(q, key, streams::kResponse, std::nullopt));
  }
}

TEST(RemoteClientTest, ZeroSamplesRejectedLocally) {
  const auto& pop = population();
  ModelServer server(pop.field);
  server.start();
  RemoteHttp remote(options_for(server.url()));
  SampleRequest r;
  r.query = pop.benign[0];
  r.n = 0;
  try {
    remote.sample_refusals(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
  r.n = 3;
  r.perturbation = Vector(3, 0.0);
  try {
    remote.sample_refusals(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  EXPECT_EQ(server.requests(), 0);
}

TEST(RemoteClientTest, ShortReplyIsProtocolError) {
  const auto& pop = population();
  ShortBackend shorted(pop.field);
  ModelServer server(shorted);
  server.start();
  RemoteHttp remote(options_for(server.url()));
  try {
    remote.sample_refusals(make_sample_request(pop.benign[0], {}, DetectorConfig{}, streams::kBase));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
    EXPECT_NE(std::string(e.what()).find("expected 10 bits, got 9"), std::string::npos) << e.what();
  }
}

TEST(RemoteClientTest, UnknownTextIsNotFound) {
  const auto& pop = population();
  ModelServer server(pop.field);
  server.start();
  RemoteHttp remote(options_for(server.url()));
  try {
    remote.sample_refusals(make_sample_request(testing::make_query("nope"), {}, DetectorConfig{}, streams::kBase));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
  }
  EXPECT_EQ(remote.attempts(), 2);  // meta + one POST, no retry on 4xx
}

TEST(RemoteClientTest, RetriesTransientServerErrors) {
  const auto& pop = population();
  const auto req = make_sample_request(pop.benign[1], {}, DetectorConfig{}, streams::kBase);
  {
    FlakyBackend flaky(pop.field, 2);
    ModelServer server(flaky);
    server.start();
    RemoteHttp remote(options_for(server.url()));
    EXPECT_EQ(remote.sample_refusals(req).bits, pop.field.sample_refusals(req).bits);
    EXPECT_EQ(remote.attempts(), 1 + 3);
  }
  {
    FlakyBackend flaky(pop.field, 10);
    ModelServer server(flaky);
    server.start();
    RemoteHttp remote(options_for(server.url()));
    try {
      remote.sample_refusals(req);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kBackend);
    }
    EXPECT_EQ(remote.attempts(), 1 + 4);
  }
}

TEST(RemoteClientTest, SendsNonceAsIdempotencyKey) {
  CannedServer canned(Json{{"embed_dim", 3}, {"model_id", "canned"}}, Json{{"bits", {1, 0}}, {"responses", nullptr}});
  RemoteHttp remote(options_for(canned.url()));
  SampleRequest r;
  r.query = testing::make_query("q");
  r.n = 2;
  r.key = 0xabcull;
  r.stream = 7;
  r.perturbation = {0.5, 0.25, -1.0};
  r.system_prompt = "be nice";
  const auto s = remote.sample_refusals(r);
  EXPECT_EQ(s.bits, (std::vector<std::uint8_t>{1, 0}));
  ASSERT_EQ(canned.keys().size(), 1u);
  EXPECT_EQ(canned.keys()[0], "0000000000000abc:0000000000000007");
  const auto body = canned.bodies()[0];
  EXPECT_EQ(body["nonce"], canned.keys()[0]);
  EXPECT_EQ(body["text"], "text of q");
  EXPECT_EQ(body["n"], 2);
  EXPECT_EQ(body["perturbation"], Json({0.5, 0.25, -1.0}));
  EXPECT_EQ(body["system_prompt"], "be nice");
  EXPECT_EQ(body["return_responses"], false);
}

TEST(RemoteClientTest, KeywordMismatchReported) {
  CannedServer canned(Json{{"embed_dim", 2}}, Json{{"bits", {1, 1}}, {"responses", {"I'm sorry, no.", "Sure thing."}}});
  SampleRequest r;
  r.query = testing::make_query("q");
  r.n = 2;
  r.return_responses = true;
  {
    RemoteHttp strict(options_for(canned.url()));
    EXPECT_THROW(strict.sample_refusals(r), Error);
  }
  auto opts = options_for(canned.url());
  opts.strict_keyword_check = false;
  RemoteHttp lenient(opts);
  const auto s = lenient.sample_refusals(r);
  EXPECT_EQ(s.bits.size(), 2u);
  EXPECT_EQ(lenient.keyword_mismatches(), 1);
}

TEST(RemoteClientTest, MalformedMetaIsProtocolError) {
  CannedServer canned(Json("not json at all"), Json::object());
  try {
    RemoteHttp remote(options_for(canned.url()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
}

TEST(RemoteClientTest, BadBitsAreProtocolErrors) {
  CannedServer canned(Json{{"embed_dim", 2}}, Json{{"bits", {1, 2}}});
  RemoteHttp remote(options_for(canned.url()));
  SampleRequest r;
  r.query = testing::make_query("q");
  r.n = 2;
  try {
    remote.sample_refusals(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
}

TEST(RemoteClientTest, UnreachableServerIsTransportError) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }  // closed again
  auto opts = options_for("http://127.0.0.1:" + std::to_string(port));
  opts.max_retries = 1;
  opts.timeout_s = 0.5;
  try {
    RemoteHttp remote(opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::kTransport || e.code() == ErrorCode::kTimeout) << e.what();
  }
}

TEST(RemoteClientTest, OptionsJsonRoundTrip) {
  RemoteOptions o;
  o.base_url = "http://h:1";
  o.max_in_flight = 3;
  o.strict_keyword_check = false;
  const RemoteOptions back = Json(o).get<RemoteOptions>();
  EXPECT_EQ(back.base_url, o.base_url);
  EXPECT_EQ(back.max_in_flight, 3);
  EXPECT_FALSE(back.strict_keyword_check);
  EXPECT_EQ(back.max_retries, 3);
}

}  // namespace
}  // namespace refguard
