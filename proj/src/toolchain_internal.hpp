#pragma once

// Shared between the toolchain translation units only; not installed.

#include <filesystem>
#include <string>

#include "json.hpp"

namespace mvi::toolchain::detail {

using ojson = nlohmann::ordered_json;

/// Parse a JSON file; ConfigError on I/O or syntax problems (message carries
/// the path).
ojson load_json(const std::filesystem::path& path);

void save_json(const std::filesystem::path& path, const ojson& j);

/// Read-modify-write one top-level section of summary.json. Creates the file
/// on first use; other sections are left untouched.
void merge_summary(const std::filesystem::path& summary_path,
                   const std::string& key, const ojson& value);

/// CPU seconds (user + system) and peak RSS of this process so far.
struct ResourceSample {
  double cpu_s = 0.0;
  long max_rss_kb = 0;
};
ResourceSample resource_sample();

}  // namespace mvi::toolchain::detail
