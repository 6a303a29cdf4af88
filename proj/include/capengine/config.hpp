// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` configuration with CAPENGINE_* environment overrides.
// Backend keys are prefixed by kind, e.g. `segmenter.mode = remote`,
// `segmenter.endpoint = http://127.0.0.1:9000`; the matching environment
// variable is CAPENGINE_SEGMENTER_ENDPOINT.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "capengine/backends.hpp"
#include "capengine/pipeline.hpp"

namespace capengine {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::map<BackendKind, BackendConfig> backends;
  std::filesystem::path store_root = "capengine-data";
  std::size_t cache_size = 64;
  std::size_t max_upload_bytes = 20u * 1024u * 1024u;
  double margin_ratio = kDefaultMarginRatio;
  int max_tool_calls = 3;
  std::size_t max_regions = 20;
  int parallelism = 4;
  NonCotStrategy non_cot_strategy = NonCotStrategy::kCrop;
  int trajectory_samples = 8;
  bool forward_hull_box = true;
  std::optional<std::filesystem::path> static_root;
};

using EnvMap = std::map<std::string, std::string, std::less<>>;

/// Snapshot of the CAPENGINE_* variables in the process environment.
EnvMap capengine_environment();

/// Parses the file text and applies environment overrides. Unknown keys and
/// malformed values raise Config.
ServiceConfig parse_service_config(std::string_view text, const EnvMap& env = {});
ServiceConfig load_service_config(const std::filesystem::path& path, const EnvMap& env);

PipelineConfig pipeline_config(const ServiceConfig& config);

}  // namespace capengine
