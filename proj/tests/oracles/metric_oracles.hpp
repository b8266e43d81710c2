#pragma once

// Brute-force reference implementations of the caption metrics, kept
// deliberately naive: n-grams are token vectors, counts are found by linear
// scans, nothing is cached.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using Tokens = std::vector<std::string>;
using Gram = std::vector<std::string>;

inline std::vector<Gram> grams_of(const Tokens& s, std::size_t n) {
  std::vector<Gram> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + n));
  return out;
}

inline double count_in(const Gram& g, const Tokens& s) {
  double c = 0;
  for (const auto& h : grams_of(s, g.size()))
    if (h == g) c += 1;
  return c;
}

inline std::vector<Gram> distinct(std::vector<Gram> gs) {
  std::sort(gs.begin(), gs.end());
  gs.erase(std::unique(gs.begin(), gs.end()), gs.end());
  return gs;
}

inline double bleu4(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
  double c_len = 0, r_len = 0;
  double logp = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    double match = 0, total = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      for (const auto& g : distinct(grams_of(cands[i], n))) {
        double best = 0;
        for (const auto& r : refs[i]) best = std::max(best, count_in(g, r));
        match += std::min(count_in(g, cands[i]), best);
      }
      total += static_cast<double>(grams_of(cands[i], n).size());
    }
    if (match == 0 || total == 0) return 0.0;
    logp += std::log(match / total) / 4.0;
  }
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double c = static_cast<double>(cands[i].size());
    double best = -1;
    for (const auto& r : refs[i]) {
      const double l = static_cast<double>(r.size());
      if (best < 0 || std::abs(l - c) < std::abs(best - c) || (std::abs(l - c) == std::abs(best - c) && l < best)) best = l;
    }
    c_len += c;
    r_len += best;
  }
  const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(logp);
}

inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  // plain recursion with memo table
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  auto rec = [&](auto&& self, std::size_t i, std::size_t j) -> long {
    if (i == a.size() || j == b.size()) return 0;
    if (memo[i][j] >= 0) return memo[i][j];
    long v = a[i] == b[j] ? 1 + self(self, i + 1, j + 1) : std::max(self(self, i + 1, j), self(self, i, j + 1));
    return memo[i][j] = v;
  };
  return static_cast<std::size_t>(rec(rec, 0, 0));
}

inline double rouge_l(const Tokens& c, const std::vector<Tokens>& refs, double beta = 1.2) {
  double p = 0, r = 0;
  for (const auto& ref : refs) {
    const double l = static_cast<double>(lcs(c, ref));
    if (!c.empty()) p = std::max(p, l / static_cast<double>(c.size()));
    if (!ref.empty()) r = std::max(r, l / static_cast<double>(ref.size()));
  }
  if (p == 0 || r == 0) return 0.0;
  return (1 + beta * beta) * p * r / (r + beta * beta * p);
}

/// Per-image CIDEr-D scores.
inline std::vector<double> cider_d(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs,
                                   double sigma = 6.0) {
  const double num_docs = static_cast<double>(refs.size());
  auto doc_freq = [&](const Gram& g) {
    double df = 0;
    for (const auto& set : refs) {
      bool in = false;
      for (const auto& r : set) in = in || count_in(g, r) > 0;
      if (in) df += 1;
    }
    return df;
  };
  auto weight = [&](const Gram& g, const Tokens& s) {
    return count_in(g, s) * (std::log(num_docs) - std::log(std::max(1.0, doc_freq(g))));
  };
  std::vector<double> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Tokens& c = cands[i];
    double total = 0;
    for (const auto& r : refs[i]) {
      double sum_n = 0;
      for (std::size_t n = 1; n <= 4; ++n) {
        double dot = 0, nc = 0, nr = 0;
        for (const auto& g : distinct(grams_of(c, n))) {
          const double wc = weight(g, c), wr = weight(g, r);
          dot += std::min(wc, wr) * wr;
          nc += wc * wc;
        }
        for (const auto& g : distinct(grams_of(r, n))) nr += weight(g, r) * weight(g, r);
        double v = (nc > 0 && nr > 0) ? dot / (std::sqrt(nc) * std::sqrt(nr)) : dot;
        const double delta = static_cast<double>(c.size()) - static_cast<double>(r.size());
        v *= std::exp(-delta * delta / (2 * sigma * sigma));
        sum_n += v;
      }
      total += sum_n / 4.0;
    }
    out.push_back(10.0 * total / static_cast<double>(refs[i].size()));
  }
  return out;
}

}  // namespace oracle
