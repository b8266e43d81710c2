#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "run_config.hpp"
#include "test_support.hpp"
#include "updown/errors.hpp"
#include "updown/records.hpp"
#include "updown/regions.hpp"
#include "updown/synthetic.hpp"

namespace updown {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::temp_dir;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream f(p);
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

// ---- synth

TEST(CliSynth, WritesRecordsAndFeatureFiles) {
  const auto dir = temp_dir("cli_synth");
  const auto r = run({"synth", "--scenes", "12", "--out", (dir / "a").string(), "--seed", "4"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(load_captions_jsonl(dir / "a" / "captions.jsonl").size(), 12u);
  EXPECT_GE(load_qa_jsonl(dir / "a" / "qa.jsonl").size(), 12u);
  EXPECT_EQ(count_files(dir / "a" / "regions") + count_files(dir / "a" / "grid"), 24u);
}

TEST(CliSynth, SameSeedIsByteIdentical) {
  const auto dir = temp_dir("cli_synth_repeat");
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run({"synth", "--scenes", "6", "--out", (dir / out).string(), "--seed", "9"}).code, 0);
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 3u + 3u * 6u);
}

TEST(CliSynth, ZeroScenesIsAnError) {
  const auto r = run({"synth", "--scenes", "0", "--out", (temp_dir("cli_synth0") / "x").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("empty dataset"), std::string::npos);
}

// ---- select

std::string write_detections(const fs::path& path, const DetectionSet& d) {
  std::ofstream(path) << detections_to_json(d);
  return path.string();
}

TEST(CliSelect, Top36AlwaysYields36) {
  const auto dir = temp_dir("cli_select");
  Rng rng(3);
  for (std::size_t n : {5u, 36u, 80u}) {
    const auto det = write_detections(dir / "d.json", testing::random_detections(n, 4, 8, rng));
    const auto r = run({"select", "--detections", det, "--mode", "top36", "--out", (dir / "r.udrf").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "k=36\n");
    EXPECT_EQ(read_region_file(dir / "r.udrf").k(), 36u);
  }
}

TEST(CliSelect, ThresholdMatchesLibraryDefaults) {
  const auto dir = temp_dir("cli_select_thr");
  Rng rng(8);
  const auto d = testing::random_detections(50, 4, 8, rng);
  const auto det = write_detections(dir / "d.json", d);
  const auto r = run({"select", "--detections", det, "--out", (dir / "r.udrf").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto expected = select_regions(d, {0.2, 0.3, 100});
  EXPECT_EQ(r.out, "k=" + std::to_string(expected.k()) + "\n");
  // region files store float32
  const auto written = read_region_file(dir / "r.udrf");
  EXPECT_EQ(written.features.values()[0], static_cast<float>(expected.features.values()[0]));
}

TEST(CliSelect, EmptySurvivorsFallBackWithWarning) {
  const auto dir = temp_dir("cli_select_fb");
  Rng rng(1);
  auto d = testing::random_detections(4, 3, 8, rng);
  for (auto& p : d.class_probs.values()) p = 0.05;
  const auto r = run({"select", "--detections", write_detections(dir / "d.json", d), "--out",
                      (dir / "r.udrf").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "k=1\n");
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(CliSelect, MalformedDetectionsAreDataErrors) {
  const auto dir = temp_dir("cli_select_bad");
  std::ofstream(dir / "d.json") << "{\"boxes\": [[0,0,1,1]]}";
  EXPECT_EQ(run({"select", "--detections", (dir / "d.json").string(), "--out", (dir / "r.udrf").string()}).code,
            cli::kExitData);
}

// ---- config

TEST(CliConfig, ErrorsAreListedFieldByField) {
  const auto dir = temp_dir("cli_config");
  std::ofstream(dir / "run.cfg") << "# comment\nxe.lr = -1\nvqa.rho = 2\nnot a line\n";
  const auto r = run({"train-caption", "--data", "nowhere.jsonl", "--out", (dir / "o").string(), "--config",
                      (dir / "run.cfg").string(), "--set", "scst.sampling=greedy", "--set", "mystery=1"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  for (const char* field : {"xe.lr", "vqa.rho", "run.cfg:4", "scst.sampling", "mystery"}) {
    EXPECT_NE(r.err.find(field), std::string::npos) << field << "\n" << r.err;
  }
}

TEST(CliConfig, FileOverridesAndRoundTrip) {
  const auto dir = temp_dir("cli_config_rt");
  cli::RunConfig c = cli::RunConfig::for_profile("desk");
  c.xe_lr = 0.25;
  c.scst_unrestricted = true;
  c.vqa_word_vectors = "vectors.txt";
  std::ofstream(dir / "run.cfg") << c.to_string();
  const auto loaded = cli::load_run_config("", dir / "run.cfg", {"seed=17"});
  EXPECT_EQ(loaded.xe_lr, 0.25);
  EXPECT_TRUE(loaded.scst_unrestricted);
  EXPECT_EQ(loaded.vqa_word_vectors, "vectors.txt");
  EXPECT_EQ(loaded.seed, 17u);
  auto expected = c;
  expected.seed = 17;
  EXPECT_EQ(loaded.to_string(), expected.to_string());
}

TEST(CliConfig, EveryKeyHasADefaultThatValidates) {
  EXPECT_TRUE(cli::RunConfig::for_profile("desk").validate().empty());
  EXPECT_TRUE(cli::RunConfig::for_profile("paper").validate().empty());
  EXPECT_THROW(cli::RunConfig::for_profile("laptop"), ConfigError);
  EXPECT_GE(cli::RunConfig::keys().size(), 30u);
}

TEST(CliConfig, PaperProfileNeedsForce) {
  const auto r = run({"train-vqa", "--data", "x.jsonl", "--out", "o", "--profile", "paper"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  const auto c = cli::load_run_config("paper", {}, {});
  EXPECT_EQ(c.caption_M, 1000u);
  EXPECT_EQ(c.caption_H, 512u);
  EXPECT_EQ(c.vqa_E, 300u);
}

TEST(CliConfig, UnknownFlagIsAUsageError) {
  EXPECT_EQ(run({"synth", "--scenes", "3", "--out", "x", "--frobnicate"}).code, cli::kExitConfig);
  EXPECT_EQ(run({}).code, cli::kExitConfig);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

// ---- training and evaluation on a tiny corpus

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = temp_dir("cli_pipeline");
    ASSERT_EQ(run({"synth", "--scenes", "6", "--out", data().string(), "--seed", "2"}).code, 0);
    const auto xe = run({"train-caption", "--data", captions().string(), "--out", (dir_ / "xe").string(), "--set",
                         "xe.iterations=40", "--set", "xe.batch=6", "--set", "caption.min_count=1"});
    ASSERT_EQ(xe.code, 0) << xe.err;
    const auto vqa = run({"train-vqa", "--data", (data() / "qa.jsonl").string(), "--out", (dir_ / "vqa").string(),
                          "--set", "vqa.epochs=2", "--set", "vqa.answer_min_count=1"});
    ASSERT_EQ(vqa.code, 0) << vqa.err;
  }

  static fs::path data() { return dir_ / "data"; }
  static fs::path captions() { return data() / "captions.jsonl"; }
  static fs::path xe_model() { return dir_ / "xe" / "model.udpm"; }
  static fs::path vqa_model() { return dir_ / "vqa" / "model.udpm"; }

  static inline fs::path dir_;
};

TEST_F(CliPipeline, TrainCaptionWritesArtifacts) {
  for (const char* f : {"vocab.txt", "model.udpm", "loss.csv", "metrics.json", "config.txt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "xe" / f)) << f;
  }
  EXPECT_EQ(lines(dir_ / "xe" / "loss.csv").size(), 41u);
  const auto m = json::parse(slurp(dir_ / "xe" / "metrics.json"));
  EXPECT_EQ(m.at("iterations"), 40);
  for (const char* k : {"bleu4", "rouge_l", "cider_d"}) EXPECT_TRUE(m.at("train").contains(k));
}

TEST_F(CliPipeline, ResumeReproducesTheNextLosses) {
  const std::vector<std::string> base = {"train-caption", "--data", captions().string(), "--set", "xe.iterations=8",
                                         "--set", "xe.batch=4", "--set", "caption.min_count=1", "--seed", "5"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  };
  ASSERT_EQ(with({"--out", (dir_ / "full").string()}).code, 0);
  ASSERT_EQ(with({"--out", (dir_ / "half").string(), "--stop-after", "3"}).code, 0);
  const auto r = with({"--out", (dir_ / "rest").string(), "--resume", (dir_ / "half" / "model.udpm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto full = lines(dir_ / "full" / "loss.csv");
  const auto half = lines(dir_ / "half" / "loss.csv");
  const auto rest = lines(dir_ / "rest" / "loss.csv");
  ASSERT_EQ(full.size(), 9u);
  ASSERT_EQ(half.size(), 4u);
  ASSERT_EQ(rest.size(), 6u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(half[i], full[i]);
  for (std::size_t i = 1; i < 6; ++i) EXPECT_EQ(rest[i], full[i + 3]);
  EXPECT_EQ(slurp(dir_ / "rest" / "model.udpm"), slurp(dir_ / "full" / "model.udpm"));
}

TEST_F(CliPipeline, ScstRequiresInit) {
  const auto r = run({"train-scst", "--data", captions().string(), "--out", (dir_ / "scst0").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("--init"), std::string::npos);
}

TEST_F(CliPipeline, ScstEpochWritesRewardsAndMetrics) {
  const auto r = run({"train-scst", "--data", captions().string(), "--init", xe_model().string(), "--out",
                      (dir_ / "scst").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(dir_ / "scst" / "rewards.csv");
  EXPECT_EQ(rows.front(), "iteration,image_id,r_sample,r_greedy,advantage");
  EXPECT_EQ(rows.size(), 7u);
  const auto m = json::parse(slurp(dir_ / "scst" / "metrics.json"));
  EXPECT_TRUE(m.contains("before"));
  EXPECT_TRUE(m.contains("after"));
}

TEST_F(CliPipeline, DecodeThenEvalMatchesCheckpointEval) {
  const auto pred = dir_ / "pred.jsonl";
  ASSERT_EQ(run({"decode", "--data", captions().string(), "--checkpoint", xe_model().string(), "--out",
                 pred.string()})
                .code,
            0);
  const auto rows = lines(pred);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& l : rows) {
    const auto j = json::parse(l);
    EXPECT_TRUE(j.at("caption").is_string());
    EXPECT_LE(j.at("log_prob").get<double>(), 0.0);
  }
  const auto a = run({"eval-caption", "--data", captions().string(), "--predictions", pred.string()});
  const auto b = run({"eval-caption", "--data", captions().string(), "--checkpoint", xe_model().string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out, b.out);
}

TEST_F(CliPipeline, VocabularyMismatchIsExplicit) {
  const auto r = run({"decode", "--data", captions().string(), "--checkpoint", xe_model().string(), "--vocab",
                      (dir_ / "vqa" / "questions.txt").string(), "--out", (dir_ / "p.jsonl").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("vocabulary"), std::string::npos);
}

TEST_F(CliPipeline, TrainVqaWritesArtifacts) {
  for (const char* f : {"questions.txt", "answers.tsv", "model.udpm", "curve.csv", "metrics.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "vqa" / f)) << f;
  }
  EXPECT_EQ(lines(dir_ / "vqa" / "curve.csv").front(), "epoch,loss,train_accuracy,val_accuracy");
}

TEST_F(CliPipeline, VqaTypeBucketsPartitionTheDataset) {
  const auto r = run({"eval-vqa", "--data", (data() / "qa.jsonl").string(), "--checkpoint", vqa_model().string(),
                      "--predictions-out", (dir_ / "vqa_pred.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(r.out);
  const std::size_t total = load_qa_jsonl(data() / "qa.jsonl").size();
  std::size_t sum = 0;
  for (const char* t : {"yes/no", "number", "other"}) sum += report.at(t).at("count").get<std::size_t>();
  EXPECT_EQ(sum, total);
  EXPECT_EQ(report.at("overall").at("count").get<std::size_t>(), total);

  // Scoring the dumped predictions gives the same report.
  const auto again = run({"eval-vqa", "--data", (data() / "qa.jsonl").string(), "--predictions",
                          (dir_ / "vqa_pred.jsonl").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(again.out, r.out);
}

double row_sum(const json& row) {
  double s = 0;
  for (const auto& v : row) s += v.get<double>();
  return s;
}

TEST_F(CliPipeline, CaptionAttentionHasOneRowPerWord) {
  const auto feats = data() / "regions" / "img00001.udrf";
  const auto r = run({"attention", "--checkpoint", xe_model().string(), "--features", feats.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("task"), "caption");
  const auto k = read_region_file(feats).k();
  ASSERT_EQ(j.at("alpha").size(), j.at("tokens").size());
  for (const auto& row : j.at("alpha")) {
    EXPECT_EQ(row.size(), k);
    EXPECT_NEAR(row_sum(row), 1.0, 1e-9);
  }
  EXPECT_EQ(j.at("boxes").size(), k);

  const auto forced = run({"attention", "--checkpoint", xe_model().string(), "--features", feats.string(),
                           "--sentence", "a red circle"});
  ASSERT_EQ(forced.code, 0) << forced.err;
  EXPECT_EQ(json::parse(forced.out).at("alpha").size(), 3u);
}

TEST_F(CliPipeline, SingleRegionWithoutBoxesGetsAllWeight) {
  RegionSet one;
  one.features = read_region_file(data() / "regions" / "img00000.udrf").features;
  one.features = Tensor::row({one.features.row_span(0).begin(), one.features.row_span(0).end()});
  write_region_file(dir_ / "one.udrf", one);
  const auto r = run({"attention", "--checkpoint", xe_model().string(), "--features", (dir_ / "one.udrf").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  const auto j = json::parse(r.out);
  EXPECT_TRUE(j.at("boxes").is_null());
  for (const auto& row : j.at("alpha")) EXPECT_EQ(row.at(0).get<double>(), 1.0);

  const auto v = run({"attention", "--checkpoint", vqa_model().string(), "--features", (dir_ / "one.udrf").string(),
                      "--question", "is there a red circle?"});
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_EQ(json::parse(v.out).at("alpha"), json::parse("[[1.0]]"));
}

TEST_F(CliPipeline, VqaAttentionIsASingleRow) {
  const auto feats = data() / "regions" / "img00002.udrf";
  const auto r = run({"attention", "--checkpoint", vqa_model().string(), "--features", feats.string(), "--question",
                      "how many squares are there?"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("task"), "vqa");
  ASSERT_EQ(j.at("alpha").size(), 1u);
  EXPECT_NEAR(row_sum(j.at("alpha")[0]), 1.0, 1e-9);
  EXPECT_TRUE(j.at("answer").is_string());
  // the same document again parses to the same value
  EXPECT_EQ(json::parse(j.dump()), j);
}

TEST_F(CliPipeline, DivergentTrainingExitsWithNumericCode) {
  const auto r = run({"train-caption", "--data", captions().string(), "--out", (dir_ / "nan").string(), "--set",
                      "xe.iterations=20", "--set", "xe.lr=1e300", "--set", "caption.min_count=1"});
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.err;
}

// ---- evaluation against references

TEST(CliEval, SelfReferenceScoresOnTheDisjointCorpus) {
  const auto dir = temp_dir("cli_eval_self");
  const std::vector<CaptionRecord> refs = {{"a", {"the red circle sits left"}, "a.udrf"},
                                           {"b", {"two blue squares stand above"}, "b.udrf"}};
  write_captions_jsonl(dir / "refs.jsonl", refs);
  {
    std::ofstream p(dir / "pred.jsonl");
    for (const auto& r : refs) p << json{{"image_id", r.image_id}, {"caption", r.captions[0]}}.dump() << "\n";
  }
  const auto r = run({"eval-caption", "--data", (dir / "refs.jsonl").string(), "--predictions",
                      (dir / "pred.jsonl").string(), "--out", (dir / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir / "report.json"));
  EXPECT_NEAR(report.at("corpus").at("bleu4").get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(report.at("corpus").at("cider_d").get<double>(), 10.0, 1e-9);
  EXPECT_NEAR(report.at("corpus").at("rouge_l").get<double>(), 1.0, 1e-12);
  ASSERT_EQ(report.at("images").size(), 2u);
  for (const auto& img : report.at("images")) {
    for (const char* k : {"image_id", "caption", "cider_d", "rouge_l"}) EXPECT_TRUE(img.contains(k)) << k;
  }
}

TEST(CliEval, MissingPredictionIsADataError) {
  const auto dir = temp_dir("cli_eval_missing");
  write_captions_jsonl(dir / "refs.jsonl", {{"a", {"x y"}, "a.udrf"}, {"b", {"z w"}, "b.udrf"}});
  std::ofstream(dir / "pred.jsonl") << R"({"image_id": "a", "caption": "x y"})" << "\n";
  EXPECT_EQ(run({"eval-caption", "--data", (dir / "refs.jsonl").string(), "--predictions",
                 (dir / "pred.jsonl").string()})
                .code,
            cli::kExitData);
}

// ---- timing

TEST(CliDesk, EndToEndOnSynthOutputUnderTenMinutes) {
  const auto dir = temp_dir("cli_desk");
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = (dir / "data").string();
  ASSERT_EQ(run({"synth", "--scenes", "100", "--out", data}).code, 0);
  const auto caps = data + "/captions.jsonl";
  ASSERT_EQ(run({"train-caption", "--data", caps, "--out", (dir / "xe").string()}).code, 0);
  ASSERT_EQ(run({"train-scst", "--data", caps, "--init", (dir / "xe" / "model.udpm").string(), "--out",
                 (dir / "scst").string()})
                .code,
            0);
  ASSERT_EQ(run({"train-vqa", "--data", data + "/qa.jsonl", "--out", (dir / "vqa").string()}).code, 0);
  ASSERT_EQ(run({"eval-caption", "--data", caps, "--checkpoint", (dir / "scst" / "model.udpm").string(), "--vocab",
                 (dir / "xe" / "vocab.txt").string(), "--out", (dir / "caption_report.json").string()})
                .code,
            0);
  ASSERT_EQ(run({"eval-vqa", "--data", data + "/qa.jsonl", "--checkpoint", (dir / "vqa" / "model.udpm").string(),
                 "--out", (dir / "vqa_report.json").string()})
                .code,
            0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "desk pipeline: " << seconds << " s\n";
  EXPECT_LT(seconds, 600.0);
}

}  // namespace
}  // namespace updown
