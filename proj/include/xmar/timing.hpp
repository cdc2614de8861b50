#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "xmar/victim.hpp"

namespace xmar {

struct TimingOptions {
  std::vector<std::int64_t> lengths{128, 256, 512};
  int repeats = 15;  // timed samples per length; the median is reported
  int inner = 10;    // transforms per sample
  int batch = 4;
  int patch = 16;
  int channels = 3;
  int vocab = 10;
  std::uint64_t seed = 0;
  bool backward = true;  // include the gradient pass w.r.t. theta

  void validate() const;
  nlohmann::json to_json() const;
};

// Smallest image holding exactly `tokens` patches: up to 32 patches per row.
ImageSpec timing_image(std::int64_t tokens, int patch, int channels);

struct TimingPoint {
  std::int64_t tokens = 0;
  ImageSpec image;
  double median_s = 0;  // per transform (one batch)
  double min_s = 0;
};

struct TimingRatio {
  std::int64_t n = 0;
  double ratio = 0;  // time(2n) / time(n), medians
};

struct TimingReport {
  std::vector<TimingPoint> points;
  std::vector<TimingRatio> ratios;  // every n whose double is also measured

  nlohmann::json to_json() const;
};

TimingReport measure_embed_timing(const TimingOptions& options);

}  // namespace xmar
