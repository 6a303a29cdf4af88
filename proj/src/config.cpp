// SPDX-License-Identifier: Apache-2.0
#include "capengine/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "capengine/error.hpp"
#include "capengine/text.hpp"

extern char** environ;

namespace capengine {

namespace {

constexpr std::string_view kEnvPrefix = "CAPENGINE_";

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::kConfig, "invalid value '" + std::string(value) + "' for " + std::string(key));
}

long long to_integer(std::string_view key, std::string_view value, long long min) {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(std::string(value), &used);
    if (used != value.size() || v < min) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

double to_real(std::string_view key, std::string_view value) {
  try {
    std::size_t used = 0;
    const auto v = std::stod(std::string(value), &used);
    if (used != value.size() || v < 0.0) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

bool to_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value);
}

std::string env_name(std::string_view key) {
  std::string out(kEnvPrefix);
  for (const char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void apply_backend_key(ServiceConfig& cfg, BackendKind kind, std::string_view field, std::string_view key,
                       std::string_view value) {
  auto& b = cfg.backends[kind];
  b.kind = kind;
  if (field == "mode") {
    if (value == "mock") b.mode = BackendMode::kMock;
    else if (value == "remote") b.mode = BackendMode::kRemote;
    else bad_value(key, value);
  } else if (field == "endpoint") {
    b.endpoint = std::string(value);
  } else if (field == "timeout_ms") {
    b.timeout = std::chrono::milliseconds(to_integer(key, value, 1));
  } else if (field == "max_attempts") {
    b.max_attempts = static_cast<int>(to_integer(key, value, 1));
  } else if (field == "token") {
    b.bearer_token = std::string(value);
  } else if (field == "fixture") {
    b.fixture = std::filesystem::path(std::string(value));
  } else if (field == "refusal_markers") {
    b.refusal_markers.clear();
    std::string_view rest = value;
    while (!rest.empty()) {
      const auto bar = rest.find('|');
      const auto part = trim(rest.substr(0, bar));
      if (!part.empty()) b.refusal_markers.emplace_back(part);
      if (bar == std::string_view::npos) break;
      rest.remove_prefix(bar + 1);
    }
  } else {
    throw Error(ErrorCode::kConfig, "unknown key " + std::string(key));
  }
}

void apply(ServiceConfig& cfg, std::string_view key, std::string_view value) {
  if (const auto dot = key.find('.'); dot != std::string_view::npos) {
    const auto kind = parse_backend_kind(key.substr(0, dot));
    if (!kind) throw Error(ErrorCode::kConfig, "unknown key " + std::string(key));
    apply_backend_key(cfg, *kind, key.substr(dot + 1), key, value);
    return;
  }
  if (key == "listen") {
    const auto colon = value.rfind(':');
    if (colon == std::string_view::npos || colon == 0) bad_value(key, value);
    cfg.host = std::string(value.substr(0, colon));
    cfg.port = static_cast<int>(to_integer(key, value.substr(colon + 1), 0));
    if (cfg.port > 65535) bad_value(key, value);
  } else if (key == "store_root") {
    cfg.store_root = std::string(value);
  } else if (key == "cache_size") {
    cfg.cache_size = static_cast<std::size_t>(to_integer(key, value, 1));
  } else if (key == "max_upload_bytes") {
    cfg.max_upload_bytes = static_cast<std::size_t>(to_integer(key, value, 1));
  } else if (key == "margin_ratio") {
    cfg.margin_ratio = to_real(key, value);
  } else if (key == "max_tool_calls") {
    cfg.max_tool_calls = static_cast<int>(to_integer(key, value, 0));
  } else if (key == "max_regions") {
    cfg.max_regions = static_cast<std::size_t>(to_integer(key, value, 1));
  } else if (key == "parallelism") {
    cfg.parallelism = static_cast<int>(to_integer(key, value, 1));
  } else if (key == "non_cot_strategy") {
    if (value == "crop") cfg.non_cot_strategy = NonCotStrategy::kCrop;
    else if (value == "whiten") cfg.non_cot_strategy = NonCotStrategy::kWhiten;
    else bad_value(key, value);
  } else if (key == "trajectory_samples") {
    cfg.trajectory_samples = static_cast<int>(to_integer(key, value, 1));
  } else if (key == "forward_hull_box") {
    cfg.forward_hull_box = to_bool(key, value);
  } else if (key == "static_root") {
    cfg.static_root = std::filesystem::path(std::string(value));
  } else {
    throw Error(ErrorCode::kConfig, "unknown key " + std::string(key));
  }
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{"listen", "store_root", "cache_size", "max_upload_bytes", "margin_ratio",
                               "max_tool_calls", "max_regions", "parallelism", "non_cot_strategy",
                               "trajectory_samples", "forward_hull_box", "static_root"};
    for (const auto kind : kAllBackendKinds) {
      for (const auto* field : {"mode", "endpoint", "timeout_ms", "max_attempts", "token", "fixture",
                                "refusal_markers"}) {
        k.push_back(std::string(to_string(kind)) + "." + field);
      }
    }
    return k;
  }();
  return keys;
}

}  // namespace

EnvMap capengine_environment() {
  EnvMap env;
  for (char** e = environ; e && *e; ++e) {
    const std::string_view entry(*e);
    if (entry.substr(0, kEnvPrefix.size()) != kEnvPrefix) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(entry.substr(0, eq)), std::string(entry.substr(eq + 1)));
  }
  return env;
}

ServiceConfig parse_service_config(std::string_view text, const EnvMap& env) {
  ServiceConfig cfg;
  int lineno = 0;
  for (const auto& raw : split_lines(text)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& key : known_keys()) {
    if (const auto it = env.find(env_name(key)); it != env.end()) apply(cfg, key, trim(it->second));
  }
  for (const auto& [kind, b] : cfg.backends) validate(b);
  return cfg;
}

ServiceConfig load_service_config(const std::filesystem::path& path, const EnvMap& env) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_service_config(ss.str(), env);
}

PipelineConfig pipeline_config(const ServiceConfig& config) {
  PipelineConfig p;
  p.margin_ratio = config.margin_ratio;
  p.non_cot_strategy = config.non_cot_strategy;
  p.normalize.trajectory_samples = config.trajectory_samples;
  p.normalize.forward_hull_box = config.forward_hull_box;
  return p;
}

}  // namespace capengine
