#include "updown/regions.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "updown/binary_io.hpp"
#include "updown/errors.hpp"

namespace updown {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

RegionSet gather(const DetectionSet& d, std::span<const std::size_t> rows) {
  RegionSet out;
  const std::size_t dim = d.features.num_cols();
  out.features = Tensor::matrix(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = d.features.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row_span(i).begin());
    out.boxes.push_back(d.boxes[rows[i]]);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> greedy_nms(std::span<const BBox> boxes, std::span<const double> scores,
                                    double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("greedy_nms: " + std::to_string(boxes.size()) + " boxes vs " +
                                std::to_string(scores.size()) + " scores");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i : order_by_score(scores)) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t j) {
      return iou(boxes[i], boxes[j]) > iou_threshold;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

void DetectionSet::validate() const {
  const std::size_t n = boxes.size();
  if (class_probs.num_rows() != n && !(n == 0 && class_probs.empty())) {
    throw std::invalid_argument("detections: class_probs rows != box count");
  }
  if (features.num_rows() != n && !(n == 0 && features.empty())) {
    throw std::invalid_argument("detections: feature rows != box count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!boxes[i].valid()) throw std::invalid_argument("detections: invalid box " + std::to_string(i));
  }
  for (double p : class_probs.values()) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("detections: class probability outside [0,1]");
  }
}

std::vector<double> surviving_confidence(const DetectionSet& d, double class_nms_iou) {
  const std::size_t n = d.size();
  const std::size_t classes = n ? d.class_probs.num_cols() : 0;
  std::vector<double> conf(n, 0.0);
  std::vector<double> scores(n);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) scores[i] = d.class_probs.at(i, c);
    for (std::size_t i : greedy_nms(d.boxes, scores, class_nms_iou)) {
      conf[i] = std::max(conf[i], scores[i]);
    }
  }
  return conf;
}

RegionSet select_regions(const DetectionSet& d, const SelectionConfig& config) {
  d.validate();
  const auto conf = surviving_confidence(d, config.class_nms_iou);
  std::vector<std::size_t> rows;
  for (std::size_t i : order_by_score(conf)) {
    if (conf[i] > config.conf_threshold) rows.push_back(i);
  }
  if (rows.size() > config.max_k) rows.resize(config.max_k);
  RegionSet out = gather(d, rows);
  out.fallback = rows.empty();
  return out;
}

RegionSet top_k_select(const DetectionSet& d, std::size_t k, double class_nms_iou) {
  d.validate();
  if (d.size() == 0) throw std::invalid_argument("top_k_select: no detections");
  if (k == 0) throw std::invalid_argument("top_k_select: k must be positive");
  const auto conf = surviving_confidence(d, class_nms_iou);
  std::vector<std::size_t> rows = order_by_score(conf);
  if (rows.size() > k) rows.resize(k);
  const bool padded = rows.size() < k;
  while (rows.size() < k) rows.push_back(rows.back());
  RegionSet out = gather(d, rows);
  out.padded = padded;
  return out;
}

RegionSet with_fallback(RegionSet selected, const DetectionSet& d) {
  if (selected.k() > 0) return selected;
  if (d.size() == 0) throw std::invalid_argument("with_fallback: no detections to average");
  const std::size_t dim = d.features.num_cols();
  RegionSet out;
  out.features = Tensor::matrix(1, dim);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) out.features[j] += d.features.at(i, j);
  for (auto& v : out.features.values()) v /= static_cast<double>(d.size());
  BBox whole = d.boxes.front();
  for (const auto& b : d.boxes) {
    whole.x1 = std::min(whole.x1, b.x1);
    whole.y1 = std::min(whole.y1, b.y1);
    whole.x2 = std::max(whole.x2, b.x2);
    whole.y2 = std::max(whole.y2, b.y2);
  }
  out.boxes = {whole};
  out.fallback = true;
  return out;
}

namespace {

constexpr char kRegionMagic[] = "UDRF";
constexpr std::uint8_t kRegionVersion = 1;
constexpr std::uint8_t kFlagBoxes = 0x1;
constexpr std::uint8_t kFlagPadded = 0x2;

}  // namespace

std::string encode_region_set(const RegionSet& r) {
  if (r.has_boxes() && r.boxes.size() != r.k()) {
    throw std::invalid_argument("region set: box count != feature rows");
  }
  ByteWriter w;
  w.bytes(std::string_view(kRegionMagic, 4));
  w.u8(kRegionVersion);
  w.u8(static_cast<std::uint8_t>((r.has_boxes() ? kFlagBoxes : 0) | (r.padded ? kFlagPadded : 0)));
  w.u32(static_cast<std::uint32_t>(r.k()));
  w.u32(static_cast<std::uint32_t>(r.dim()));
  for (const auto& b : r.boxes) {
    w.f32(static_cast<float>(b.x1));
    w.f32(static_cast<float>(b.y1));
    w.f32(static_cast<float>(b.x2));
    w.f32(static_cast<float>(b.y2));
  }
  for (double v : r.features.values()) w.f32(static_cast<float>(v));
  return w.str();
}

RegionSet decode_region_set(std::string bytes) {
  ByteReader r(std::move(bytes));
  if (r.remaining() < 4 || r.bytes(4) != std::string_view(kRegionMagic, 4)) {
    throw FormatError(FormatErrorCode::bad_magic, "bad magic");
  }
  const auto version = r.u8();
  if (version != kRegionVersion) {
    throw FormatError(FormatErrorCode::unsupported_version,
                      "unsupported version " + std::to_string(version));
  }
  const auto flags = r.u8();
  if (flags & ~(kFlagBoxes | kFlagPadded)) {
    throw FormatError(FormatErrorCode::malformed, "unknown flag bits");
  }
  const std::size_t k = r.u32();
  const std::size_t dim = r.u32();
  const std::size_t need = ((flags & kFlagBoxes) ? k * 4 : 0) * 4 + k * dim * 4;
  if (r.remaining() < need) throw FormatError(FormatErrorCode::truncated, "truncated");
  if (r.remaining() > need) throw FormatError(FormatErrorCode::malformed, "trailing bytes");
  RegionSet out;
  out.padded = flags & kFlagPadded;
  if (flags & kFlagBoxes) {
    out.boxes.resize(k);
    for (auto& b : out.boxes) {
      b.x1 = r.f32();
      b.y1 = r.f32();
      b.x2 = r.f32();
      b.y2 = r.f32();
    }
  }
  if (k > 0) {
    out.features = Tensor::matrix(k, dim);
    for (auto& v : out.features.values()) v = r.f32();
  }
  return out;
}

void write_region_file(const std::filesystem::path& path, const RegionSet& r) {
  write_file_bytes(path, encode_region_set(r));
}

RegionSet read_region_file(const std::filesystem::path& path) {
  return decode_region_set(read_file_bytes(path));
}

}  // namespace updown
