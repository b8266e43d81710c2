#include "updown/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "updown/errors.hpp"
#include "updown/init.hpp"

namespace updown {

namespace {

constexpr const char* kNumberWords[] = {"zero", "one", "two", "three", "four", "five", "six",
                                        "seven", "eight", "nine"};

// Stream ids for the per-scene generators derived from the scene seed.
constexpr std::uint64_t kDetectionStream = 0xD37EC7;
constexpr std::uint64_t kGridStream = 0x641D;
constexpr std::uint64_t kQaStream = 0x0A;

std::size_t pick(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
}

bool intersects(const BBox& a, const BBox& b) {
  return std::min(a.x2, b.x2) > std::max(a.x1, b.x1) && std::min(a.y2, b.y2) > std::max(a.y1, b.y1);
}

double overlap_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return w > 0 && h > 0 ? w * h : 0.0;
}

void set_geometry(std::vector<double>& v, const BBox& box, double canvas) {
  v[kGeometryBlock + 0] = (box.x1 + box.x2) / (2 * canvas);
  v[kGeometryBlock + 1] = (box.y1 + box.y2) / (2 * canvas);
  v[kGeometryBlock + 2] = box.width() / canvas;
  v[kGeometryBlock + 3] = box.height() / canvas;
}

void check_dim(std::size_t dim) {
  if (dim < kMinFeatureDim) {
    throw std::invalid_argument("synthetic feature dim must be at least " + std::to_string(kMinFeatureDim) +
                                ", got " + std::to_string(dim));
  }
}

BBox clip(BBox b, double canvas) {
  b.x1 = std::clamp(b.x1, 0.0, canvas);
  b.y1 = std::clamp(b.y1, 0.0, canvas);
  b.x2 = std::clamp(b.x2, 0.0, canvas);
  b.y2 = std::clamp(b.y2, 0.0, canvas);
  return b;
}

BBox jitter(const BBox& b, double sigma, double limit, double canvas, Rng& rng) {
  auto j = [&] { return std::clamp(normal(rng, 0.0, sigma), -limit, limit); };
  BBox out{b.x1 + j(), b.y1 + j(), b.x2 + j(), b.y2 + j()};
  out = clip(out, canvas);
  return out.valid() ? out : b;
}

void add_row(Tensor& t, std::size_t r, const std::vector<double>& v, double noise, Rng& rng) {
  for (std::size_t c = 0; c < v.size(); ++c) t.at(r, c) = v[c] + (noise > 0 ? normal(rng, 0.0, noise) : 0.0);
}

Tensor to_matrix(const std::vector<std::vector<double>>& rows, const char* what) {
  Tensor t = Tensor::matrix(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != t.num_cols()) throw DataError(std::string("detections: ragged ") + what);
    std::copy(rows[r].begin(), rows[r].end(), t.row_span(r).begin());
  }
  return t;
}

}  // namespace

const char* to_string(ShapeKind s) { return kShapeNames[static_cast<std::size_t>(s)]; }
const char* to_string(SizeKind s) { return s == SizeKind::small ? "small" : "large"; }

SyntheticScene gen_scene(std::uint64_t seed, const SceneConfig& config) {
  if (config.min_objects < 1 || config.max_objects < config.min_objects) {
    throw std::invalid_argument("scene config: need 1 <= min_objects <= max_objects");
  }
  Rng rng(seed);
  SyntheticScene scene;
  scene.seed = seed;
  scene.canvas = config.canvas;
  const auto n = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(config.min_objects),
                                                      static_cast<std::int64_t>(config.max_objects)));
  const double scale = config.canvas / 100.0;
  for (std::size_t i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = static_cast<ShapeKind>(pick(rng, kNumShapes));
    o.color = pick(rng, kNumColors);
    o.size = uniform(rng) < 0.5 ? SizeKind::small : SizeKind::large;
    const double side = scale * (o.size == SizeKind::small ? uniform(rng, 10, 15) : uniform(rng, 20, 28));
    // rejection sampling for a free spot; objects never overlap
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      const double x = uniform(rng, 0, config.canvas - side), y = uniform(rng, 0, config.canvas - side);
      o.box = {x, y, x + side, y + side};
      placed = std::none_of(scene.objects.begin(), scene.objects.end(),
                            [&](const SceneObject& p) { return intersects(p.box, o.box); });
    }
    if (placed) scene.objects.push_back(o);
  }
  std::stable_sort(scene.objects.begin(), scene.objects.end(), [](const SceneObject& a, const SceneObject& b) {
    return a.box.x1 + a.box.x2 < b.box.x1 + b.box.x2;
  });
  return scene;
}

std::vector<double> object_feature(const SceneObject& o, double canvas, std::size_t dim) {
  check_dim(dim);
  std::vector<double> v(dim, 0.0);
  v[kShapeBlock + static_cast<std::size_t>(o.shape)] = 1.0;
  v[kColorBlock + o.color] = 1.0;
  v[kSizeBlock + (o.size == SizeKind::small ? 0 : 1)] = 1.0;
  set_geometry(v, o.box, canvas);
  v[kObjectnessDim] = 1.0;
  return v;
}

std::vector<double> background_feature(const BBox& box, double canvas, std::size_t dim) {
  check_dim(dim);
  std::vector<double> v(dim, 0.0);
  set_geometry(v, box, canvas);
  v[kBackgroundDim] = 1.0;
  return v;
}

DetectionSet scene_to_detections(const SyntheticScene& scene, const FeatureConfig& config) {
  check_dim(config.dim);
  Rng rng(mix_seed(scene.seed, kDetectionStream));
  struct Raw {
    BBox box;
    std::array<double, kNumShapes> probs;
    std::vector<double> feature;
  };
  std::vector<Raw> raw;
  for (const auto& o : scene.objects) {
    const auto cls = static_cast<std::size_t>(o.shape);
    Raw det{jitter(o.box, 0.8, 1.5, scene.canvas, rng), {}, object_feature(o, scene.canvas, config.dim)};
    for (auto& p : det.probs) p = uniform(rng, 0.0, 0.1);
    det.probs[cls] = uniform(rng, 0.6, 0.95);
    set_geometry(det.feature, det.box, scene.canvas);
    if (uniform(rng) < 0.5) {
      // near-duplicate proposal, always weaker on the true class
      Raw dup{jitter(o.box, 0.8, 1.5, scene.canvas, rng), {}, object_feature(o, scene.canvas, config.dim)};
      for (auto& p : dup.probs) p = uniform(rng, 0.0, 0.1);
      dup.probs[cls] = det.probs[cls] * uniform(rng, 0.5, 0.9);
      set_geometry(dup.feature, dup.box, scene.canvas);
      raw.push_back(std::move(dup));
    }
    raw.push_back(std::move(det));
  }
  const auto distractors = static_cast<std::size_t>(uniform_int(rng, 0, 3));
  for (std::size_t i = 0; i < distractors; ++i) {
    const double side = uniform(rng, 5, 20);
    const double x = uniform(rng, 0, scene.canvas - side), y = uniform(rng, 0, scene.canvas - side);
    Raw det{{x, y, x + side, y + side}, {}, {}};
    for (auto& p : det.probs) p = uniform(rng, 0.0, 0.15);
    det.feature = background_feature(det.box, scene.canvas, config.dim);
    raw.push_back(std::move(det));
  }
  // shuffle so detection order carries no information
  for (std::size_t i = raw.size(); i > 1; --i) std::swap(raw[i - 1], raw[pick(rng, i)]);

  DetectionSet d;
  d.class_probs = Tensor::matrix(raw.size(), kNumShapes);
  d.features = Tensor::matrix(raw.size(), config.dim);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    d.boxes.push_back(raw[i].box);
    for (std::size_t c = 0; c < kNumShapes; ++c) d.class_probs.at(i, c) = raw[i].probs[c];
    add_row(d.features, i, raw[i].feature, config.noise, rng);
  }
  return d;
}

RegionSet scene_to_regions(const SyntheticScene& scene, const FeatureConfig& config) {
  const DetectionSet d = scene_to_detections(scene, config);
  return with_fallback(select_regions(d), d);
}

Tensor bilinear_resize(const Tensor& grid, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  if (h == 0 || w == 0 || oh == 0 || ow == 0 || grid.num_rows() != h * w) {
    throw ShapeError("bilinear_resize: grid " + shape_string(grid.shape()) + " does not hold " +
                     std::to_string(h) + "x" + std::to_string(w) + " cells");
  }
  const std::size_t dim = grid.num_cols();
  Tensor out = Tensor::matrix(oh * ow, dim);
  auto coord = [](std::size_t i, std::size_t n, std::size_t on) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n) / static_cast<double>(on) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n - 1));
  };
  for (std::size_t i = 0; i < oh; ++i) {
    const double sy = coord(i, h, oh);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < ow; ++j) {
      const double sx = coord(j, w, ow);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < dim; ++c) {
        const double top = (1 - fx) * grid.at(y0 * w + x0, c) + fx * grid.at(y0 * w + x1, c);
        const double bot = (1 - fx) * grid.at(y1 * w + x0, c) + fx * grid.at(y1 * w + x1, c);
        out.at(i * ow + j, c) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

RegionSet scene_to_grid_features(const SyntheticScene& scene, const GridConfig& grid, const FeatureConfig& config) {
  check_dim(config.dim);
  if (grid.grid == 0) throw std::invalid_argument("grid size must be positive");
  const std::size_t n = grid.native ? grid.native : grid.grid;
  const double cell = scene.canvas / static_cast<double>(n);
  Tensor native = Tensor::matrix(n * n, config.dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const BBox box{j * cell, i * cell, (j + 1) * cell, (i + 1) * cell};
      std::vector<double> v = background_feature(box, scene.canvas, config.dim);
      double covered = 0.0;
      for (const auto& o : scene.objects) {
        const double frac = overlap_area(o.box, box) / box.area();
        if (frac <= 0) continue;
        covered += frac;
        const auto f = object_feature(o, scene.canvas, config.dim);
        for (std::size_t c = 0; c < v.size(); ++c) v[c] += frac * f[c];
      }
      const double rest = std::max(0.0, 1.0 - covered);
      v[kBackgroundDim] = rest;
      set_geometry(v, box, scene.canvas);
      for (std::size_t c = 0; c < v.size(); ++c) native.at(i * n + j, c) = v[c];
    }
  }
  RegionSet out;
  out.features = n == grid.grid ? std::move(native) : bilinear_resize(native, n, n, grid.grid, grid.grid);
  const double out_cell = scene.canvas / static_cast<double>(grid.grid);
  for (std::size_t i = 0; i < grid.grid; ++i)
    for (std::size_t j = 0; j < grid.grid; ++j)
      out.boxes.push_back({j * out_cell, i * out_cell, (j + 1) * out_cell, (i + 1) * out_cell});
  if (config.noise > 0) {
    Rng rng(mix_seed(scene.seed, kGridStream));
    for (auto& v : out.features.values()) v += normal(rng, 0.0, config.noise);
  }
  return out;
}

std::vector<std::string> scene_to_captions(const SyntheticScene& scene) {
  if (scene.objects.empty()) throw std::invalid_argument("scene has no objects");
  const auto& a = scene.objects[0];
  const std::size_t n = scene.objects.size();
  auto sz = [](const SceneObject& o) { return std::string(to_string(o.size)); };
  auto col = [](const SceneObject& o) { return std::string(kColorNames[o.color]); };
  auto shp = [](const SceneObject& o) { return std::string(to_string(o.shape)); };
  const std::string count = kNumberWords[n];
  std::vector<std::string> out;
  if (n == 1) {
    out.push_back("a " + sz(a) + " " + col(a) + " " + shp(a) + " on a plain background");
    out.push_back("there is one shape in the picture");
    out.push_back("a single " + col(a) + " " + shp(a));
    out.push_back("the " + shp(a) + " is " + col(a));
    out.push_back("an image of a " + sz(a) + " " + shp(a));
  } else {
    const auto& b = scene.objects[1];
    out.push_back("a " + sz(a) + " " + col(a) + " " + shp(a) + " left of a " + sz(b) + " " + col(b) + " " + shp(b));
    out.push_back("there are " + count + " shapes in the picture");
    out.push_back("a " + col(a) + " " + shp(a) + " and a " + col(b) + " " + shp(b));
    out.push_back("the " + shp(a) + " on the left is " + col(a));
    out.push_back("an image of " + count + " shapes with a " + sz(a) + " " + shp(a) + " on the left");
  }
  return out;
}

std::vector<QARecord> scene_to_qa(const SyntheticScene& scene, const std::string& image_id) {
  Rng rng(mix_seed(scene.seed, kQaStream));
  std::vector<QARecord> out;
  auto emit = [&](std::string question, std::string answer, QuestionType type, std::vector<std::string> wrong) {
    QARecord r;
    r.question_id = image_id + "_" + std::to_string(out.size());
    r.image_id = image_id;
    r.question = std::move(question);
    r.type = type;
    r.answers.assign(QARecord::kNumAnswers, answer);
    wrong.erase(std::remove(wrong.begin(), wrong.end(), answer), wrong.end());
    if (!wrong.empty() && uniform(rng) < 0.3) r.answers[pick(rng, r.answers.size())] = wrong[pick(rng, wrong.size())];
    out.push_back(std::move(r));
  };
  std::vector<std::string> digits, colors(kColorNames.begin(), kColorNames.end()),
      shapes(kShapeNames.begin(), kShapeNames.end());
  for (int i = 1; i <= 6; ++i) digits.push_back(std::to_string(i));

  emit("how many shapes are there", std::to_string(scene.objects.size()), QuestionType::number, digits);

  std::set<std::pair<std::size_t, std::size_t>> present;
  for (const auto& o : scene.objects) present.insert({o.color, static_cast<std::size_t>(o.shape)});
  std::pair<std::size_t, std::size_t> asked;
  const bool yes = uniform(rng) < 0.5;
  if (yes) {
    const auto& o = scene.objects[pick(rng, scene.objects.size())];
    asked = {o.color, static_cast<std::size_t>(o.shape)};
  } else {
    do {
      asked = {pick(rng, kNumColors), pick(rng, kNumShapes)};
    } while (present.count(asked));
  }
  emit(std::string("is there a ") + kColorNames[asked.first] + " " + kShapeNames[asked.second],
       yes ? "yes" : "no", QuestionType::yes_no, {"yes", "no"});

  std::array<int, kNumShapes> shape_count{};
  std::array<int, kNumColors> color_count{};
  for (const auto& o : scene.objects) {
    ++shape_count[static_cast<std::size_t>(o.shape)];
    ++color_count[o.color];
  }
  for (const auto& o : scene.objects) {
    if (shape_count[static_cast<std::size_t>(o.shape)] == 1) {
      emit(std::string("what color is the ") + to_string(o.shape), kColorNames[o.color], QuestionType::other, colors);
      break;
    }
  }
  for (const auto& o : scene.objects) {
    if (color_count[o.color] == 1) {
      emit(std::string("what shape is the ") + kColorNames[o.color] + " object", to_string(o.shape),
           QuestionType::other, shapes);
      break;
    }
  }
  return out;
}

std::string scene_image_id(const SynthOptions& options, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return options.id_prefix + buf;
}

SynthCorpus write_synthetic_corpus(const std::filesystem::path& dir, const SynthOptions& options) {
  namespace fs = std::filesystem;
  for (const char* sub : {"regions", "grid", "detections"}) fs::create_directories(dir / sub);
  SynthCorpus corpus;
  for (std::size_t i = 0; i < options.num_scenes; ++i) {
    const std::string id = scene_image_id(options, i);
    SyntheticScene scene = gen_scene(mix_seed(options.seed, i), options.scene);
    const DetectionSet d = scene_to_detections(scene, options.features);
    write_region_file(dir / "regions" / (id + ".udrf"), with_fallback(select_regions(d), d));
    write_region_file(dir / "grid" / (id + ".udrf"), scene_to_grid_features(scene, options.grid, options.features));
    {
      std::ofstream out(dir / "detections" / (id + ".json"));
      if (!out) throw DataError("cannot write detections for " + id);
      out << detections_to_json(d) << '\n';
    }
    const auto captions = scene_to_captions(scene);
    corpus.captions.push_back({id, captions, "regions/" + id + ".udrf"});
    corpus.grid_captions.push_back({id, captions, "grid/" + id + ".udrf"});
    for (auto& q : scene_to_qa(scene, id)) {
      q.feature_path = "regions/" + id + ".udrf";
      corpus.qa.push_back(std::move(q));
    }
    corpus.scenes.push_back(std::move(scene));
  }
  write_captions_jsonl(dir / "captions.jsonl", corpus.captions);
  write_captions_jsonl(dir / "captions_grid.jsonl", corpus.grid_captions);
  write_qa_jsonl(dir / "qa.jsonl", corpus.qa);
  return corpus;
}

std::string detections_to_json(const DetectionSet& d) {
  nlohmann::json j;
  j["boxes"] = nlohmann::json::array();
  j["class_probs"] = nlohmann::json::array();
  j["features"] = nlohmann::json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& b = d.boxes[i];
    j["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
    auto p = d.class_probs.row_span(i);
    j["class_probs"].push_back(std::vector<double>(p.begin(), p.end()));
    auto f = d.features.row_span(i);
    j["features"].push_back(std::vector<double>(f.begin(), f.end()));
  }
  return j.dump();
}

DetectionSet detections_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto boxes = j.at("boxes").get<std::vector<std::array<double, 4>>>();
    const auto probs = j.at("class_probs").get<std::vector<std::vector<double>>>();
    const auto feats = j.at("features").get<std::vector<std::vector<double>>>();
    if (probs.size() != boxes.size() || feats.size() != boxes.size()) {
      throw DataError("detections: boxes, class_probs and features differ in length");
    }
    DetectionSet d;
    for (const auto& b : boxes) d.boxes.push_back({b[0], b[1], b[2], b[3]});
    if (!boxes.empty()) {
      d.class_probs = to_matrix(probs, "class_probs");
      d.features = to_matrix(feats, "features");
    }
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("detections: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("detections: ") + e.what());
  }
}

}  // namespace updown
