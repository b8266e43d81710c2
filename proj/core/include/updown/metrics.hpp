#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace updown {

using Tokens = std::vector<std::string>;

/// n-gram (n = 1..4, tokens joined by a single space) -> count.
using NGramTable = std::unordered_map<std::string, double>;

NGramTable ngram_counts(const Tokens& tokens, std::size_t max_n = 4);

struct BleuResult {
  std::array<double, 4> bleu{};        // BLEU-1 .. BLEU-4
  std::array<double, 4> precision{};   // clipped corpus precisions
  double brevity_penalty = 0.0;
  double candidate_length = 0.0;
  double reference_length = 0.0;       // sum of closest reference lengths
};

/// Corpus-level BLEU with clipped counts, closest reference length (ties to
/// the shorter reference) and no smoothing. Throws std::invalid_argument on an
/// empty corpus or mismatched sizes.
BleuResult bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references);
double bleu4(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references);

/// LCS F-measure; precision and recall are each maximised over references.
double rouge_l(const Tokens& candidate, std::span<const Tokens> references, double beta = 1.2);

/// CIDEr-D scorer over a fixed corpus of reference sets. Document frequency
/// counts reference sets (images) containing an n-gram; idf uses natural log.
class CiderD {
 public:
  /// Throws std::invalid_argument("degenerate IDF") for fewer than 2 images.
  explicit CiderD(std::span<const std::vector<Tokens>> references, double sigma = 6.0);

  std::size_t num_images() const { return refs_.size(); }
  /// Score of `candidate` against the references of image `image`, x10.
  double score(const Tokens& candidate, std::size_t image) const;

 private:
  struct Vec {
    std::array<std::unordered_map<std::string, double>, 4> w;
    std::array<double, 4> norm{};
    double length = 0;
  };
  Vec vectorize(const Tokens& tokens) const;
  double similarity(const Vec& c, const Vec& r) const;

  std::unordered_map<std::string, double> df_;
  double log_docs_ = 0;
  double sigma_;
  std::vector<std::vector<Vec>> refs_;
};

struct CiderResult {
  std::vector<double> per_image;
  double mean = 0.0;
};

CiderResult cider_d(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references);

/// min(#matching annotators / 3, 1) after lowercasing and trimming. Throws
/// std::invalid_argument unless exactly 10 answers are given.
double vqa_accuracy(const std::string& predicted, std::span<const std::string> answers);

std::string normalize_answer(const std::string& s);

struct CaptionEvaluation {
  std::vector<std::string> image_ids;
  std::vector<double> cider;
  std::vector<double> rouge;
  double bleu4 = 0.0;
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider_d = 0.0;
};

CaptionEvaluation evaluate_captions(std::span<const std::string> image_ids, std::span<const Tokens> candidates,
                                    std::span<const std::vector<Tokens>> references);

/// {"corpus": {...}, "images": [{"image_id", "caption"?, "cider_d", "rouge_l"}]}
std::string caption_report_json(const CaptionEvaluation& e, std::span<const Tokens> candidates);

}  // namespace updown
