#include <gtest/gtest.h>

#include <cmath>

#include <json.hpp>

#include "oracles/metric_oracles.hpp"
#include "updown/init.hpp"
#include "updown/metrics.hpp"
#include "updown/vocabulary.hpp"

namespace updown {
namespace {

Tokens toks(const std::string& s) { return tokenize_caption(s); }

struct ToyCorpus {
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
};

Tokens random_sentence(Rng& rng, std::size_t vocab, std::size_t min_len, std::size_t max_len) {
  Tokens t;
  const auto n = uniform_int(rng, static_cast<std::int64_t>(min_len), static_cast<std::int64_t>(max_len));
  for (std::int64_t i = 0; i < n; ++i) t.push_back("w" + std::to_string(uniform_int(rng, 0, static_cast<std::int64_t>(vocab) - 1)));
  return t;
}

ToyCorpus random_corpus(Rng& rng) {
  ToyCorpus c;
  const auto images = static_cast<std::size_t>(uniform_int(rng, 2, 8));
  const auto vocab = static_cast<std::size_t>(uniform_int(rng, 2, 6));
  for (std::size_t i = 0; i < images; ++i) {
    c.cands.push_back(random_sentence(rng, vocab, 1, 10));
    std::vector<Tokens> refs;
    const auto k = uniform_int(rng, 1, 5);
    for (std::int64_t j = 0; j < k; ++j) refs.push_back(random_sentence(rng, vocab, 1, 10));
    // sometimes plant the candidate among its references
    if (uniform(rng) < 0.3) refs[0] = c.cands.back();
    c.refs.push_back(std::move(refs));
  }
  return c;
}

TEST(Bleu, IdenticalCandidatesScoreOne) {
  const std::vector<Tokens> c = {toks("a red circle left of a square"), toks("two blue shapes here")};
  const std::vector<std::vector<Tokens>> r = {{c[0]}, {c[1]}};
  EXPECT_DOUBLE_EQ(bleu4(c, r), 1.0);
}

TEST(Bleu, NoFourGramOverlapIsZero) {
  const std::vector<Tokens> c = {toks("a b c d e")};
  const std::vector<std::vector<Tokens>> r = {{toks("a b c x d e")}};
  EXPECT_EQ(bleu4(c, r), 0.0);
}

TEST(Bleu, HandWorkedTwoSentenceCorpus) {
  const std::vector<Tokens> c = {toks("the cat sat on the mat"), toks("a dog runs")};
  const std::vector<std::vector<Tokens>> r = {{toks("the cat sat on the red mat")}, {toks("a dog runs fast")}};
  // clipped precisions 9/9, 6/7, 4/5, 2/3; c = 9, r = 11
  const double expected = std::exp(1.0 - 11.0 / 9.0) * std::pow(1.0 * 6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0, 0.25);
  const BleuResult b = bleu(c, r);
  EXPECT_NEAR(b.bleu[3], expected, 1e-12);
  EXPECT_NEAR(b.precision[1], 6.0 / 7.0, 1e-15);
  EXPECT_NEAR(b.brevity_penalty, std::exp(-2.0 / 9.0), 1e-15);
}

TEST(Bleu, ClosestReferenceLengthPrefersShorterOnTie) {
  // candidate length 4, references of length 3 and 5: r = 3, no penalty
  const std::vector<Tokens> c = {toks("a b c d")};
  const std::vector<std::vector<Tokens>> r = {{toks("a b c d e"), toks("a b c")}};
  EXPECT_DOUBLE_EQ(bleu(c, r).reference_length, 3.0);
  EXPECT_DOUBLE_EQ(bleu(c, r).brevity_penalty, 1.0);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu4({}, {}), std::invalid_argument);
  const std::vector<Tokens> c = {toks("a")};
  EXPECT_THROW(bleu4(c, {}), std::invalid_argument);
}

TEST(Bleu, SelfReferenceContributesOne) {
  Rng rng(30);
  for (int t = 0; t < 200; ++t) {
    const Tokens c = random_sentence(rng, 5, 4, 12);
    std::vector<Tokens> refs = {random_sentence(rng, 5, 1, 12), c, random_sentence(rng, 5, 1, 12)};
    const std::vector<Tokens> cands = {c};
    const std::vector<std::vector<Tokens>> rs = {refs};
    EXPECT_DOUBLE_EQ(bleu4(cands, rs), 1.0);
  }
}

TEST(Metrics, MatchOraclesOnRandomToyCorpora) {
  Rng rng(2718);
  int nonzero_bleu = 0;
  for (int t = 0; t < 20; ++t) {
    const ToyCorpus c = random_corpus(rng);
    const double b = bleu4(c.cands, c.refs);
    EXPECT_NEAR(b, oracle::bleu4(c.cands, c.refs), 1e-9) << "corpus " << t;
    nonzero_bleu += b > 0;
    const auto expected = oracle::cider_d(c.cands, c.refs);
    const CiderResult got = cider_d(c.cands, c.refs);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(got.per_image[i], expected[i], 1e-9) << t << "/" << i;
    for (std::size_t i = 0; i < c.cands.size(); ++i)
      EXPECT_NEAR(rouge_l(c.cands[i], c.refs[i]), oracle::rouge_l(c.cands[i], c.refs[i]), 1e-12);
  }
  EXPECT_GT(nonzero_bleu, 5);
}

TEST(Metrics, BoundedAndOrderInvariantProperty) {
  Rng rng(99);
  for (int t = 0; t < 200; ++t) {
    ToyCorpus c = random_corpus(rng);
    const double b = bleu4(c.cands, c.refs);
    const CiderResult cd = cider_d(c.cands, c.refs);
    std::vector<double> rl;
    for (std::size_t i = 0; i < c.cands.size(); ++i) rl.push_back(rouge_l(c.cands[i], c.refs[i]));
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    for (double v : cd.per_image) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 10.0 + 1e-9);
    }
    for (auto& refs : c.refs) std::reverse(refs.begin(), refs.end());
    EXPECT_DOUBLE_EQ(bleu4(c.cands, c.refs), b);
    const CiderResult cd2 = cider_d(c.cands, c.refs);
    for (std::size_t i = 0; i < rl.size(); ++i) {
      EXPECT_NEAR(cd2.per_image[i], cd.per_image[i], 1e-12);
      EXPECT_DOUBLE_EQ(rouge_l(c.cands[i], c.refs[i]), rl[i]);
      EXPECT_GE(rl[i], 0.0);
      EXPECT_LE(rl[i], 1.0);
    }
  }
}

TEST(RougeL, Examples) {
  const std::vector<Tokens> same = {toks("a b c")};
  EXPECT_DOUBLE_EQ(rouge_l(toks("a b c"), same), 1.0);
  const std::vector<Tokens> disjoint = {toks("d e f")};
  EXPECT_EQ(rouge_l(toks("a b c"), disjoint), 0.0);
  // LCS 3, P = R = 3/4
  const std::vector<Tokens> ref = {toks("a c d e")};
  const double p = 0.75, r = 0.75, b2 = 1.44;
  EXPECT_NEAR(rouge_l(toks("a b c d"), ref), (1 + b2) * p * r / (r + b2 * p), 1e-15);
}

TEST(CiderD, DisjointTwoImageSelfReferenceIsTen) {
  const std::vector<Tokens> c = {toks("a red circle on a plain background"), toks("two blue squares side by side")};
  const std::vector<std::vector<Tokens>> r = {{c[0]}, {c[1]}};
  const CiderResult s = cider_d(c, r);
  EXPECT_NEAR(s.per_image[0], 10.0, 1e-12);
  EXPECT_NEAR(s.per_image[1], 10.0, 1e-12);
  EXPECT_NEAR(s.mean, 10.0, 1e-12);
}

TEST(CiderD, ZeroOverlapIsZero) {
  const std::vector<Tokens> c = {toks("x y z"), toks("a b c")};
  const std::vector<std::vector<Tokens>> r = {{toks("a b c")}, {toks("d e f")}};
  EXPECT_EQ(cider_d(c, r).per_image[0], 0.0);
}

TEST(CiderD, SingleImageCorpusRejected) {
  const std::vector<std::vector<Tokens>> r = {{toks("a b")}};
  try {
    CiderD scorer(r);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "degenerate IDF");
  }
}

TEST(CiderD, InvariantUnderTokenRenaming) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    ToyCorpus c = random_corpus(rng);
    const CiderResult before = cider_d(c.cands, c.refs);
    auto rename = [](Tokens& s) {
      for (auto& w : s) w = "renamed_" + w + "_x";
    };
    for (auto& s : c.cands) rename(s);
    for (auto& set : c.refs)
      for (auto& s : set) rename(s);
    const CiderResult after = cider_d(c.cands, c.refs);
    for (std::size_t i = 0; i < before.per_image.size(); ++i) EXPECT_DOUBLE_EQ(after.per_image[i], before.per_image[i]);
  }
}

TEST(VqaAccuracy, AllMatchCounts) {
  for (int n = 0; n <= 10; ++n) {
    std::vector<std::string> answers(10, "no");
    for (int i = 0; i < n; ++i) answers[static_cast<std::size_t>(i)] = i % 2 ? " Yes" : "yes ";
    EXPECT_DOUBLE_EQ(vqa_accuracy("YES", answers), std::min(n / 3.0, 1.0)) << n;
  }
  std::vector<std::string> nine(9, "a");
  EXPECT_THROW(vqa_accuracy("a", nine), std::invalid_argument);
}

TEST(Report, JsonSchema) {
  const std::vector<std::string> ids = {"a", "b"};
  const std::vector<Tokens> c = {toks("x y z w"), toks("p q r s")};
  const std::vector<std::vector<Tokens>> r = {{c[0]}, {c[1]}};
  const auto e = evaluate_captions(ids, c, r);
  const auto j = nlohmann::json::parse(caption_report_json(e, c));
  EXPECT_DOUBLE_EQ(j["corpus"]["bleu4"].get<double>(), 1.0);
  EXPECT_NEAR(j["corpus"]["cider_d"].get<double>(), 10.0, 1e-12);
  ASSERT_EQ(j["images"].size(), 2u);
  EXPECT_EQ(j["images"][1]["image_id"], "b");
  EXPECT_EQ(j["images"][1]["caption"], "p q r s");
}

}  // namespace
}  // namespace updown
