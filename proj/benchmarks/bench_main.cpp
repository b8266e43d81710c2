#include <benchmark/benchmark.h>

#include "updown/captioner.hpp"
#include "updown/init.hpp"
#include "updown/metrics.hpp"
#include "updown/regions.hpp"
#include "updown/synthetic.hpp"
#include "updown/vocabulary.hpp"
#include "updown/vqa.hpp"

namespace {

using namespace updown;

DetectionSet random_detections(std::size_t n, std::size_t classes, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  DetectionSet d;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = uniform(rng, 0, 80), y = uniform(rng, 0, 80);
    d.boxes.push_back({x, y, x + uniform(rng, 5, 20), y + uniform(rng, 5, 20)});
  }
  d.class_probs = uniform_tensor({n, classes}, 0, 1, rng);
  d.features = uniform_tensor({n, dim}, -1, 1, rng);
  return d;
}

void BM_GreedyNms(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = random_detections(n, 1, 1, 1);
  std::vector<double> scores(d.class_probs.values().begin(), d.class_probs.values().end());
  for (auto _ : state) benchmark::DoNotOptimize(greedy_nms(d.boxes, scores, 0.3));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GreedyNms)->RangeMultiplier(4)->Range(16, 1024)->Complexity();

void BM_SelectRegions(benchmark::State& state) {
  const auto d = random_detections(static_cast<std::size_t>(state.range(0)), 20, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(select_regions(d));
}
BENCHMARK(BM_SelectRegions)->Arg(100)->Arg(300);

void BM_TopKSelect(benchmark::State& state) {
  const auto d = random_detections(static_cast<std::size_t>(state.range(0)), 20, 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(top_k_select(d, 36));
}
BENCHMARK(BM_TopKSelect)->Arg(100)->Arg(300);

struct CaptionFixture {
  Vocabulary vocab;
  std::vector<Tensor> images;
  std::vector<CaptionExample> examples;
  std::vector<std::vector<Tokens>> refs;
  std::vector<std::string> ids;

  explicit CaptionFixture(std::size_t n) {
    std::vector<std::vector<std::string>> caps;
    std::vector<std::string> all;
    for (std::size_t i = 0; i < n; ++i) {
      const auto scene = gen_scene(mix_seed(11, i));
      images.push_back(scene_to_regions(scene).features);
      caps.push_back(scene_to_captions(scene));
      all.insert(all.end(), caps.back().begin(), caps.back().end());
      ids.push_back("img" + std::to_string(i));
    }
    vocab = Vocabulary::build_from_captions(all, 1);
    for (std::size_t i = 0; i < n; ++i) {
      refs.emplace_back();
      for (const auto& c : caps[i]) {
        const auto enc = vocab.encode(c);
        examples.push_back({i, {enc.begin() + 1, enc.end()}});
        refs.back().push_back(tokenize_caption(c));
      }
    }
  }
};

void BM_XeStep(benchmark::State& state) {
  const CaptionFixture f(20);
  Captioner model(CaptionerConfig::desk(f.vocab.size()), 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::vector<CaptionExample> mb(f.examples.begin(), f.examples.begin() + static_cast<std::ptrdiff_t>(batch));
  for (auto _ : state) {
    model.params().zero_grad();
    Graph g;
    const Var loss = xe_loss(g, model, f.images, mb);
    g.backward(loss);
    benchmark::DoNotOptimize(g.value(loss)[0]);
  }
}
BENCHMARK(BM_XeStep)->Arg(1)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  const CaptionFixture f(1);
  const Captioner model(CaptionerConfig::desk(f.vocab.size()), 1);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(model, f.images[0]));
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  const CaptionFixture f(1);
  const Captioner model(CaptionerConfig::desk(f.vocab.size()), 1);
  const auto beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(model, f.images[0], beam));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_CiderD(benchmark::State& state) {
  const CaptionFixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<Tokens> cands;
  for (const auto& r : f.refs) cands.push_back(r.front());
  for (auto _ : state) benchmark::DoNotOptimize(cider_d(cands, f.refs));
}
BENCHMARK(BM_CiderD)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_Bleu4(benchmark::State& state) {
  const CaptionFixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<Tokens> cands;
  for (const auto& r : f.refs) cands.push_back(r.back());
  for (auto _ : state) benchmark::DoNotOptimize(bleu4(cands, f.refs));
}
BENCHMARK(BM_Bleu4)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_VqaPredict(benchmark::State& state) {
  const auto scene = gen_scene(5);
  const auto feats = scene_to_regions(scene).features;
  const AnswerVocab answers = AnswerVocab::build(std::vector<std::string>(9, "yes"), 9);
  const VqaModel model(VqaConfig::desk(50, answers.size()), 1);
  const std::vector<std::size_t> q = {4, 5, 6, 7, 8, 9};
  for (auto _ : state) benchmark::DoNotOptimize(vqa_predict(model, answers, feats, q));
}
BENCHMARK(BM_VqaPredict)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
