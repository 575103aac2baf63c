#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "crw/jsonio.hpp"

namespace crw::testing {

inline json event(std::string time, std::string source, json data = json::object()) {
  return json{{"time", std::move(time)},
              {"source", source},
              {"table", "hosp." + source},
              {"data", std::move(data)},
              {"descriptions", json::object()}};
}

inline json admission(std::int64_t subject, std::int64_t hadm, json timeline, json misc = json::object(),
                      json demographics = json{{"gender", "F"}, {"anchor_age", 74}}) {
  return json{{"subject_id", subject},
              {"hadm_id", hadm},
              {"demographics", std::move(demographics)},
              {"timeline", std::move(timeline)},
              {"misc", std::move(misc)}};
}

/// n hourly events starting at 2150-01-01T00:00:00.
inline json hourly_timeline(int n, const std::vector<int>& icd_positions = {}) {
  json tl = json::array();
  for (int i = 0; i < n; ++i) {
    const bool icd = std::find(icd_positions.begin(), icd_positions.end(), i) != icd_positions.end();
    const int day = 1 + i / 24;
    const int hour = i % 24;
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "2150-01-%02dT%02d:00:00", day, hour);
    tl.push_back(event(stamp, icd ? "ED_ICD" : "labevents", json{{"seq", i}}));
  }
  return tl;
}

inline std::filesystem::path source_dir() { return CRW_SOURCE_DIR; }

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("crw-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace crw::testing
