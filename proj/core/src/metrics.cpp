#include "updown/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace updown {

namespace {

std::string join(const Tokens& t, std::size_t begin, std::size_t n) {
  std::string s = t[begin];
  for (std::size_t i = 1; i < n; ++i) {
    s += ' ';
    s += t[begin + i];
  }
  return s;
}

std::unordered_map<std::string, double> grams(const Tokens& t, std::size_t n) {
  std::unordered_map<std::string, double> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out[join(t, i, n)] += 1;
  return out;
}

void check_corpus(std::size_t cands, std::size_t refs) {
  if (cands == 0) throw std::invalid_argument("empty corpus");
  if (cands != refs) throw std::invalid_argument("candidate and reference counts differ");
}

}  // namespace

NGramTable ngram_counts(const Tokens& tokens, std::size_t max_n) {
  NGramTable out;
  for (std::size_t n = 1; n <= max_n; ++n)
    for (auto& [g, c] : grams(tokens, n)) out[g] += c;
  return out;
}

BleuResult bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references) {
  check_corpus(candidates.size(), references.size());
  BleuResult r;
  std::array<double, 4> match{}, total{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& c = candidates[i];
    if (references[i].empty()) throw std::invalid_argument("candidate " + std::to_string(i) + " has no references");
    for (std::size_t n = 1; n <= 4; ++n) {
      std::unordered_map<std::string, double> max_ref;
      for (const auto& ref : references[i])
        for (auto& [g, k] : grams(ref, n)) max_ref[g] = std::max(max_ref[g], k);
      for (auto& [g, k] : grams(c, n)) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) match[n - 1] += std::min(k, it->second);
      }
      total[n - 1] += c.size() >= n ? static_cast<double>(c.size() - n + 1) : 0.0;
    }
    const double len = static_cast<double>(c.size());
    double closest = static_cast<double>(references[i][0].size());
    for (const auto& ref : references[i]) {
      const double l = static_cast<double>(ref.size());
      const double d = std::abs(l - len), best = std::abs(closest - len);
      if (d < best || (d == best && l < closest)) closest = l;
    }
    r.candidate_length += len;
    r.reference_length += closest;
  }
  for (std::size_t n = 0; n < 4; ++n) r.precision[n] = total[n] > 0 ? match[n] / total[n] : 0.0;
  if (r.candidate_length == 0) {
    r.brevity_penalty = 0.0;
  } else {
    r.brevity_penalty = r.candidate_length >= r.reference_length
                            ? 1.0
                            : std::exp(1.0 - r.reference_length / r.candidate_length);
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (r.precision[n] <= 0) zero = true;
    if (!zero) log_sum += std::log(r.precision[n]);
    r.bleu[n] = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return r;
}

double bleu4(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references) {
  return bleu(candidates, references).bleu[3];
}

namespace {

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const Tokens& candidate, std::span<const Tokens> references, double beta) {
  double prec = 0, rec = 0;
  for (const auto& ref : references) {
    const auto l = static_cast<double>(lcs_length(candidate, ref));
    if (!candidate.empty()) prec = std::max(prec, l / static_cast<double>(candidate.size()));
    if (!ref.empty()) rec = std::max(rec, l / static_cast<double>(ref.size()));
  }
  if (prec == 0 || rec == 0) return 0.0;
  return (1 + beta * beta) * prec * rec / (rec + beta * beta * prec);
}

CiderD::CiderD(std::span<const std::vector<Tokens>> references, double sigma) : sigma_(sigma) {
  if (references.size() < 2) throw std::invalid_argument("degenerate IDF");
  for (const auto& set : references) {
    std::unordered_map<std::string, bool> seen;
    for (const auto& ref : set)
      for (std::size_t n = 1; n <= 4; ++n)
        for (auto& [g, k] : grams(ref, n)) seen[g] = true;
    for (auto& [g, b] : seen) df_[g] += 1;
  }
  log_docs_ = std::log(static_cast<double>(references.size()));
  refs_.reserve(references.size());
  for (const auto& set : references) {
    std::vector<Vec> vs;
    for (const auto& ref : set) vs.push_back(vectorize(ref));
    refs_.push_back(std::move(vs));
  }
}

CiderD::Vec CiderD::vectorize(const Tokens& tokens) const {
  Vec v;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (auto& [g, tf] : grams(tokens, n)) {
      auto it = df_.find(g);
      const double df = it == df_.end() ? 1.0 : std::max(1.0, it->second);
      const double w = tf * (log_docs_ - std::log(df));
      v.w[n - 1].emplace(g, w);
      v.norm[n - 1] += w * w;
    }
    v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
  }
  v.length = static_cast<double>(tokens.size());
  return v;
}

double CiderD::similarity(const Vec& c, const Vec& r) const {
  const double delta = c.length - r.length;
  const double penalty = std::exp(-delta * delta / (2 * sigma_ * sigma_));
  double sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    double val = 0;
    for (const auto& [g, wc] : c.w[n]) {
      auto it = r.w[n].find(g);
      if (it != r.w[n].end()) val += std::min(wc, it->second) * it->second;
    }
    if (c.norm[n] != 0 && r.norm[n] != 0) val /= c.norm[n] * r.norm[n];
    sum += val * penalty;
  }
  return sum;
}

double CiderD::score(const Tokens& candidate, std::size_t image) const {
  if (image >= refs_.size()) throw std::out_of_range("cider: image index out of range");
  const auto& refs = refs_[image];
  if (refs.empty()) return 0.0;
  const Vec c = vectorize(candidate);
  double total = 0;
  for (const auto& r : refs) total += similarity(c, r);
  return 10.0 * total / (4.0 * static_cast<double>(refs.size()));
}

CiderResult cider_d(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references) {
  check_corpus(candidates.size(), references.size());
  const CiderD scorer(references);
  CiderResult out;
  for (std::size_t i = 0; i < candidates.size(); ++i) out.per_image.push_back(scorer.score(candidates[i], i));
  double s = 0;
  for (double v : out.per_image) s += v;
  out.mean = s / static_cast<double>(out.per_image.size());
  return out;
}

std::string normalize_answer(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out = s.substr(b, e - b);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

double vqa_accuracy(const std::string& predicted, std::span<const std::string> answers) {
  if (answers.size() != 10) {
    throw std::invalid_argument("vqa_accuracy: expected 10 annotator answers, got " + std::to_string(answers.size()));
  }
  const std::string p = normalize_answer(predicted);
  double n = 0;
  for (const auto& a : answers)
    if (normalize_answer(a) == p) n += 1;
  return std::min(n / 3.0, 1.0);
}

CaptionEvaluation evaluate_captions(std::span<const std::string> image_ids, std::span<const Tokens> candidates,
                                    std::span<const std::vector<Tokens>> references) {
  check_corpus(candidates.size(), references.size());
  if (image_ids.size() != candidates.size()) throw std::invalid_argument("image id count differs from candidates");
  CaptionEvaluation e;
  e.image_ids.assign(image_ids.begin(), image_ids.end());
  const BleuResult b = bleu(candidates, references);
  e.bleu = b.bleu;
  e.bleu4 = b.bleu[3];
  if (candidates.size() >= 2) {
    const CiderResult c = cider_d(candidates, references);
    e.cider = c.per_image;
    e.cider_d = c.mean;
  }
  double rsum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    e.rouge.push_back(rouge_l(candidates[i], references[i]));
    rsum += e.rouge.back();
  }
  e.rouge_l = rsum / static_cast<double>(candidates.size());
  return e;
}

std::string caption_report_json(const CaptionEvaluation& e, std::span<const Tokens> candidates) {
  nlohmann::json j;
  j["corpus"] = {{"bleu1", e.bleu[0]}, {"bleu2", e.bleu[1]}, {"bleu3", e.bleu[2]}, {"bleu4", e.bleu4},
                 {"rouge_l", e.rouge_l}, {"cider_d", e.cider.empty() ? nlohmann::json() : nlohmann::json(e.cider_d)},
                 {"num_images", e.image_ids.size()}};
  j["images"] = nlohmann::json::array();
  for (std::size_t i = 0; i < e.image_ids.size(); ++i) {
    nlohmann::json img{{"image_id", e.image_ids[i]}, {"rouge_l", e.rouge[i]}};
    if (!e.cider.empty()) img["cider_d"] = e.cider[i];
    if (i < candidates.size()) {
      std::string s;
      for (const auto& t : candidates[i]) s += (s.empty() ? "" : " ") + t;
      img["caption"] = s;
    }
    j["images"].push_back(std::move(img));
  }
  return j.dump(2);
}

}  // namespace updown
