#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "updown/init.hpp"
#include "updown/regions.hpp"

namespace updown::testing {

/// Boxes clustered around a few centres so that overlaps are common.
inline std::vector<BBox> random_boxes(std::size_t n, Rng& rng, double canvas = 100.0) {
  std::vector<BBox> out;
  const auto clusters = static_cast<std::size_t>(uniform_int(rng, 1, 5));
  std::vector<std::pair<double, double>> centres;
  for (std::size_t c = 0; c < clusters; ++c) centres.emplace_back(uniform(rng, 10, canvas - 10), uniform(rng, 10, canvas - 10));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [cx, cy] = centres[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(clusters) - 1))];
    const double w = uniform(rng, 4, 30), h = uniform(rng, 4, 30);
    const double x = cx + uniform(rng, -8, 8), y = cy + uniform(rng, -8, 8);
    out.push_back({x - w / 2, y - h / 2, x + w / 2, y + h / 2});
  }
  return out;
}

/// Scores drawn from a small set so that ties occur.
inline std::vector<double> random_scores(std::size_t n, Rng& rng) {
  std::vector<double> s(n);
  for (auto& v : s) v = static_cast<double>(uniform_int(rng, 0, 20)) / 20.0;
  return s;
}

inline DetectionSet random_detections(std::size_t n, std::size_t classes, std::size_t dim, Rng& rng) {
  DetectionSet d;
  d.boxes = random_boxes(n, rng);
  d.class_probs = Tensor::matrix(n, classes);
  for (auto& p : d.class_probs.values()) p = uniform(rng) < 0.5 ? uniform(rng, 0.0, 0.25) : uniform(rng);
  d.features = uniform_tensor({n, dim}, -1, 1, rng);
  return d;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("updown_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace updown::testing
