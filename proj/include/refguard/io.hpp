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

// File formats: JSON documents, JSONL query sets and verdict logs, and the
// backend descriptor that names which ModelBackend to build.
//
//   {"kind": "synthetic_field", ...}          inline field (see field_to_json)
//   {"kind": "scripted", ...}                 inline script (see scripted_from_json)
//   {"kind": "remote", "base_url": ..., ...}  RemoteOptions
//   {"kind": "file", "path": "other.json"}    indirection, relative to this file

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "refguard/remote.hpp"
#include "refguard/scripted.hpp"
#include "refguard/synthetic_field.hpp"

namespace refguard {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidInput, what + " is not valid JSON: " + e.what());
  }
}

inline Json load_json_file(const std::string& path) { return parse_json_text(read_text_file(path), "'" + path + "'"); }

inline void save_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

/// One Query per non-empty line.
inline std::vector<Query> parse_queries_jsonl(const std::string& text, const std::string& what = "query file") {
  std::vector<Query> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line).get<Query>());
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidInput, what + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Query> load_queries_jsonl(const std::string& path) {
  return parse_queries_jsonl(read_text_file(path), "'" + path + "'");
}

template <class T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& x : items) out += Json(x).dump() + "\n";
  return out;
}

inline std::unique_ptr<ModelBackend> make_backend(const Json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object() || !j.contains("kind")) {
    fail(ErrorCode::kInvalidInput, "backend descriptor needs a 'kind'");
  }
  const auto kind = j.at("kind").get<std::string>();
  try {
    if (kind == "synthetic_field") return std::make_unique<SyntheticField>(field_from_json(j));
    if (kind == "scripted") return std::make_unique<ScriptedText>(scripted_from_json(j));
    if (kind == "remote") return std::make_unique<RemoteHttp>(j.get<RemoteOptions>());
    if (kind == "file") {
      const std::filesystem::path p = base_dir / j.at("path").get<std::string>();
      return make_backend(load_json_file(p.string()), p.parent_path());
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidInput, "bad '" + kind + "' backend descriptor: " + e.what());
  }
  fail(ErrorCode::kInvalidInput, "unknown backend kind '" + kind + "'");
}

inline std::unique_ptr<ModelBackend> load_backend(const std::string& path) {
  return make_backend(load_json_file(path), std::filesystem::path(path).parent_path());
}

}  // namespace refguard
