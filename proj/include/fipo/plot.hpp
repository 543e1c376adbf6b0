#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fipo {

struct Series {
    std::string key;
    std::vector<double> x;
    std::vector<double> y;
};

// Extracts (step, value) pairs for `key` from metrics records. Keys may use '.'
// in place of '/' ("response_length.mean").
Series extract_series(std::span<const nlohmann::json> records, const std::string& key);

// Canonical '/'-separated form of a metric key.
std::string canonical_metric_key(const std::string& key);

// Standalone SVG line chart: one polyline, labeled axes with min/max ticks.
std::string render_svg(const Series& series, int width = 640, int height = 360);

}  // namespace fipo
