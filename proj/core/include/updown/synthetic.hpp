#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "updown/records.hpp"
#include "updown/regions.hpp"

namespace updown {

// Shape world: flat coloured shapes on a square canvas.

enum class ShapeKind { circle, square, triangle };
enum class SizeKind { small, large };

inline constexpr std::size_t kNumShapes = 3;
inline constexpr std::size_t kNumColors = 8;
inline constexpr std::array<const char*, kNumShapes> kShapeNames = {"circle", "square", "triangle"};
inline constexpr std::array<const char*, kNumColors> kColorNames = {"red",    "green",  "blue",  "yellow",
                                                                    "purple", "orange", "white", "black"};

const char* to_string(ShapeKind s);
const char* to_string(SizeKind s);

struct SceneObject {
  ShapeKind shape = ShapeKind::circle;
  std::size_t color = 0;  // index into kColorNames
  SizeKind size = SizeKind::small;
  BBox box;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  double canvas = 100.0;
  /// Sorted left to right by box centre.
  std::vector<SceneObject> objects;

  friend bool operator==(const SyntheticScene&, const SyntheticScene&) = default;
};

struct SceneConfig {
  double canvas = 100.0;
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;
};

SyntheticScene gen_scene(std::uint64_t seed, const SceneConfig& config = {});

// Feature layout. Coordinates past kFeatureBlockEnd carry noise only.
inline constexpr std::size_t kShapeBlock = 0;       // 3 dims, one-hot shape
inline constexpr std::size_t kColorBlock = 3;       // 8 dims, one-hot colour
inline constexpr std::size_t kSizeBlock = 11;       // 2 dims, one-hot size
inline constexpr std::size_t kGeometryBlock = 13;   // cx, cy, w, h over canvas
inline constexpr std::size_t kObjectnessDim = 17;
inline constexpr std::size_t kBackgroundDim = 18;
inline constexpr std::size_t kFeatureBlockEnd = 19;
inline constexpr std::size_t kMinFeatureDim = 24;

struct FeatureConfig {
  std::size_t dim = 64;
  /// Standard deviation of the Gaussian noise added to every coordinate.
  double noise = 0.1;
};

/// Noiseless attribute vector of one object.
std::vector<double> object_feature(const SceneObject& o, double canvas, std::size_t dim);
/// Noiseless background vector with `box` geometry.
std::vector<double> background_feature(const BBox& box, double canvas, std::size_t dim);

/// Simulated detector output: one jittered box per object scored on its shape
/// class, suppressible near-duplicates, and low-scoring distractors.
DetectionSet scene_to_detections(const SyntheticScene& scene, const FeatureConfig& config = {});

/// Detections through select_regions (with the whole-image fallback).
RegionSet scene_to_regions(const SyntheticScene& scene, const FeatureConfig& config = {});

struct GridConfig {
  std::size_t grid = 10;
  /// Resolution the features are computed at before bilinear resizing to
  /// grid x grid. 0 means compute directly at `grid`.
  std::size_t native = 0;
};

/// Uniform grid features: each cell mixes the vectors of all objects
/// overlapping it by covered area, the rest is background. Rows are in
/// row-major cell order and carry cell boxes.
RegionSet scene_to_grid_features(const SyntheticScene& scene, const GridConfig& grid = {},
                                 const FeatureConfig& config = {});

/// Bilinear resize of an (h*w) x D row-major feature grid to (oh*ow) x D,
/// aligning cell centres.
Tensor bilinear_resize(const Tensor& grid, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow);

/// Five templated captions.
std::vector<std::string> scene_to_captions(const SyntheticScene& scene);

/// Count, yes/no, colour and shape questions with 10 simulated annotators.
/// image_id is set to `image_id`, feature_path is left empty.
std::vector<QARecord> scene_to_qa(const SyntheticScene& scene, const std::string& image_id);

struct SynthOptions {
  std::size_t num_scenes = 100;
  std::uint64_t seed = 1;
  SceneConfig scene;
  FeatureConfig features;
  GridConfig grid;
  std::string id_prefix = "img";
};

struct SynthCorpus {
  std::vector<SyntheticScene> scenes;
  std::vector<CaptionRecord> captions;       // feature_path -> regions/<id>.udrf
  std::vector<CaptionRecord> grid_captions;  // feature_path -> grid/<id>.udrf
  std::vector<QARecord> qa;
};

std::string scene_image_id(const SynthOptions& options, std::size_t index);

/// Writes captions.jsonl, captions_grid.jsonl, qa.jsonl, regions/, grid/ and
/// detections/ under `dir`.
SynthCorpus write_synthetic_corpus(const std::filesystem::path& dir, const SynthOptions& options);

/// Detection JSON: {"boxes": [[x1,y1,x2,y2]...], "class_probs": [[...]], "features": [[...]]}.
std::string detections_to_json(const DetectionSet& d);
DetectionSet detections_from_json(const std::string& text);

}  // namespace updown
