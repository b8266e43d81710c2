#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "updown/tensor.hpp"

namespace updown {

/// Axis-aligned box in continuous image coordinates, area (x2-x1)(y2-y1).
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const { return x2 > x1 && y2 > y1; }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

double iou(const BBox& a, const BBox& b);

/// Greedy non-maximum suppression. Visits boxes by descending score (ties by
/// lower index) and keeps a box unless it overlaps an already kept box with
/// IoU above `iou_threshold`. Returns kept indices in visiting order.
std::vector<std::size_t> greedy_nms(std::span<const BBox> boxes, std::span<const double> scores,
                                    double iou_threshold);

/// Raw detector output for one image.
struct DetectionSet {
  std::vector<BBox> boxes;
  Tensor class_probs;  // n x C
  Tensor features;     // n x D

  std::size_t size() const { return boxes.size(); }
  /// Throws std::invalid_argument on inconsistent shapes, invalid boxes or
  /// probabilities outside [0, 1].
  void validate() const;
};

/// The selected feature set of an image: k feature rows, optional boxes.
struct RegionSet {
  Tensor features;          // k x D
  std::vector<BBox> boxes;  // empty or k entries
  bool padded = false;
  /// No detection survived selection; the caller should substitute a
  /// whole-image region (see with_fallback).
  bool fallback = false;

  std::size_t k() const { return features.empty() ? 0 : features.num_rows(); }
  std::size_t dim() const { return features.empty() ? 0 : features.num_cols(); }
  bool has_boxes() const { return !boxes.empty(); }
};

struct SelectionConfig {
  double conf_threshold = 0.2;
  double class_nms_iou = 0.3;
  std::size_t max_k = 100;
};

/// Per detection, the highest class probability among the classes for which
/// the detection survives per-class greedy NMS (0 if it survives none).
std::vector<double> surviving_confidence(const DetectionSet& d, double class_nms_iou);

/// Confidence-threshold selection: per-class NMS, keep detections whose
/// surviving confidence exceeds the threshold, cap at max_k by descending
/// confidence. Rows are ordered by descending confidence (ties by index).
/// With no survivors the result is empty and flagged `fallback`.
RegionSet select_regions(const DetectionSet& d, const SelectionConfig& config = {});

/// Fixed-size selection: the k detections with highest surviving confidence
/// after per-class NMS. With fewer than k detections the last row is repeated
/// and the result flagged `padded`.
RegionSet top_k_select(const DetectionSet& d, std::size_t k = 36, double class_nms_iou = 0.3);

/// Replaces an empty selection with one whole-image region: the mean of all
/// detection features, boxed by the union of all detection boxes.
RegionSet with_fallback(RegionSet selected, const DetectionSet& d);

/// Region file ("UDRF", version 1). Values are stored as float32, so a
/// roundtrip is exact for float-representable values.
void write_region_file(const std::filesystem::path& path, const RegionSet& r);
/// Throws FormatError with code bad_magic, unsupported_version, truncated or
/// malformed.
RegionSet read_region_file(const std::filesystem::path& path);

std::string encode_region_set(const RegionSet& r);
RegionSet decode_region_set(std::string bytes);

}  // namespace updown
