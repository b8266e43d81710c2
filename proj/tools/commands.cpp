#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "run_config.hpp"
#include "updown/errors.hpp"
#include "updown/metrics.hpp"
#include "updown/records.hpp"
#include "updown/regions.hpp"
#include "updown/scst.hpp"
#include "updown/synthetic.hpp"
#include "updown/vocabulary.hpp"
#include "updown/vqa.hpp"

namespace updown::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string profile;
  std::string seed;
  bool force = false;

  RunConfig resolve() const {
    auto o = overrides;
    if (!seed.empty()) o.push_back("seed=" + seed);
    return load_run_config(profile, config_file, o);
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "Config file of key = value lines");
  sub->add_option("--set", c.overrides, "Override one config key (KEY=VALUE), repeatable");
  sub->add_option("--profile", c.profile, "desk (default) or paper");
  sub->add_option("--seed", c.seed, "Random seed (overrides the config)");
  sub->add_flag("--force", c.force, "Run the paper profile anyway");
}

void require_runnable(const RunConfig& cfg, bool force) {
  if (cfg.profile == "paper" && !force) {
    throw ConfigError(
        "profile 'paper' records the published hyperparameters and is not runnable at desk scale; "
        "pass --force to run it anyway");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

fs::path sibling(const fs::path& file, const std::string& name) {
  return file.parent_path().empty() ? fs::path(name) : file.parent_path() / name;
}

std::size_t feature_dim(std::span<const Tensor> images, const fs::path& source) {
  if (images.empty()) throw DataError(source.string() + ": empty dataset");
  const std::size_t d = images.front().num_cols();
  for (const auto& t : images) {
    if (t.num_cols() != d) throw DataError(source.string() + ": feature files disagree on the feature size");
  }
  return d;
}

// ---- caption data

struct CaptionData {
  std::vector<std::string> ids;
  std::vector<Tensor> images;
  std::vector<std::vector<std::string>> captions;
  std::vector<std::vector<Tokens>> references;
};

CaptionData load_caption_data(const fs::path& path, bool with_features) {
  CaptionData d;
  std::map<std::string, bool> seen;
  for (auto& r : load_captions_jsonl(path, {with_features})) {
    if (!seen.emplace(r.image_id, true).second) throw DataError(path.string() + ": duplicate image_id " + r.image_id);
    d.ids.push_back(r.image_id);
    if (with_features) d.images.push_back(read_region_file(resolve_feature_path(path, r.feature_path)).features);
    d.references.emplace_back();
    for (const auto& c : r.captions) d.references.back().push_back(tokenize_caption(c));
    d.captions.push_back(std::move(r.captions));
  }
  if (d.ids.empty()) throw DataError(path.string() + ": empty dataset");
  return d;
}

void check_captioner(const Captioner& model, const Vocabulary& vocab, std::size_t dim) {
  if (model.config().vocab != vocab.size()) {
    throw DataError("vocabulary has " + std::to_string(vocab.size()) + " entries but the checkpoint expects " +
                    std::to_string(model.config().vocab));
  }
  if (model.config().D != dim) {
    throw DataError("features have size " + std::to_string(dim) + " but the checkpoint expects " +
                    std::to_string(model.config().D));
  }
}

std::vector<Hypothesis> decode_all(const Captioner& model, std::span<const Tensor> images, std::size_t beam,
                                   const DecodeOptions& options) {
  std::vector<Hypothesis> out;
  for (const auto& f : images) {
    out.push_back(beam <= 1 ? greedy_decode(model, f, options) : beam_search(model, f, beam, options).front());
  }
  return out;
}

std::vector<Tokens> to_tokens(const std::vector<Hypothesis>& hyps, const Vocabulary& vocab) {
  std::vector<Tokens> out;
  for (const auto& h : hyps) out.push_back(vocab.decode_tokens(h.ids));
  return out;
}

json corpus_json(const CaptionEvaluation& e) {
  return {{"bleu4", e.bleu4}, {"rouge_l", e.rouge_l}, {"cider_d", e.cider_d}, {"images", e.image_ids.size()}};
}

CaptionEvaluation greedy_eval(const Captioner& model, const Vocabulary& vocab, const CaptionData& d,
                              const DecodeOptions& options) {
  const auto cands = to_tokens(decode_all(model, d.images, 1, options), vocab);
  return evaluate_captions(d.ids, cands, d.references);
}

// ---- VQA data

struct QaData {
  std::vector<QARecord> records;
  std::vector<Tensor> images;
  std::vector<std::vector<BBox>> boxes;
  std::vector<std::size_t> image_of;  // per record
};

QaData load_qa_data(const fs::path& path) {
  QaData d;
  d.records = load_qa_jsonl(path);
  if (d.records.empty()) throw DataError(path.string() + ": empty dataset");
  std::map<std::string, std::size_t> index;
  for (const auto& r : d.records) {
    const std::string file = resolve_feature_path(path, r.feature_path).string();
    auto [it, fresh] = index.emplace(file, d.images.size());
    if (fresh) {
      auto set = read_region_file(file);
      d.images.push_back(std::move(set.features));
      d.boxes.push_back(std::move(set.boxes));
    }
    d.image_of.push_back(it->second);
  }
  return d;
}

std::vector<VqaExample> to_examples(const QaData& d, const Vocabulary& questions) {
  std::vector<VqaExample> out;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    out.push_back({d.image_of[i], encode_question_text(questions, r.question), r.answers, r.question_id});
  }
  return out;
}

void check_vqa(const VqaModel& model, const Vocabulary& questions, const AnswerVocab& answers, std::size_t dim) {
  const auto& c = model.config();
  if (c.question_vocab != questions.size()) {
    throw DataError("question vocabulary has " + std::to_string(questions.size()) +
                    " entries but the checkpoint expects " + std::to_string(c.question_vocab));
  }
  if (c.num_answers != answers.size()) {
    throw DataError("answer vocabulary has " + std::to_string(answers.size()) + " entries but the checkpoint expects " +
                    std::to_string(c.num_answers));
  }
  if (c.D != dim) {
    throw DataError("features have size " + std::to_string(dim) + " but the checkpoint expects " +
                    std::to_string(c.D));
  }
}

json boxes_json(const std::vector<BBox>& boxes) {
  if (boxes.empty()) return nullptr;
  json a = json::array();
  for (const auto& b : boxes) a.push_back({b.x1, b.y1, b.x2, b.y2});
  return a;
}

// ---- subcommands

struct SynthArgs {
  std::size_t scenes = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const Common& c, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  if (a.scenes == 0) throw ConfigError("empty dataset: --scenes must be at least 1");
  const auto corpus = write_synthetic_corpus(a.out, cfg.synth_options(a.scenes));
  out << "wrote " << corpus.captions.size() << " caption records, " << corpus.qa.size() << " QA records, "
      << 2 * corpus.scenes.size() << " feature files to " << a.out << "\n";
  return kExitOk;
}

struct SelectArgs {
  std::string detections;
  std::string mode = "threshold";
  std::string out;
};

int cmd_select(const SelectArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = c.resolve();
  const DetectionSet d = detections_from_json(read_text(a.detections));
  RegionSet r;
  if (a.mode == "top36") {
    r = top_k_select(d, cfg.select_top_k, cfg.select_nms);
  } else {
    r = select_regions(d, cfg.selection());
  }
  if (r.fallback) {
    err << "warning: no detection survived selection; writing a whole-image fallback region\n";
    r = with_fallback(std::move(r), d);
  }
  write_region_file(a.out, r);
  out << "k=" << r.k() << "\n";
  return kExitOk;
}

struct TrainCaptionArgs {
  std::string data;
  std::string out;
  std::string resume;
  std::string vocab;
  std::size_t stop_after = 0;
};

int cmd_train_caption(const TrainCaptionArgs& a, const Common& c, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  require_runnable(cfg, c.force);
  const CaptionData data = load_caption_data(a.data, true);
  const std::size_t dim = feature_dim(data.images, a.data);

  std::optional<Vocabulary> vocab;
  std::optional<Captioner> model;
  std::size_t start = 0;
  if (!a.resume.empty()) {
    vocab = Vocabulary::load(a.vocab.empty() ? sibling(a.resume, "vocab.txt") : fs::path(a.vocab));
    model.emplace(Captioner::from_checkpoint(a.resume));
    model->load(a.resume);
    check_captioner(*model, *vocab, dim);
    const auto& meta = model->params().meta();
    if (auto it = meta.find("iteration"); it != meta.end()) start = static_cast<std::size_t>(it->second);
  } else {
    if (!a.vocab.empty()) {
      vocab = Vocabulary::load(a.vocab);
    } else {
      std::vector<std::string> all;
      for (const auto& caps : data.captions) all.insert(all.end(), caps.begin(), caps.end());
      vocab = Vocabulary::build_from_captions(all, cfg.caption_min_count);
    }
    model.emplace(cfg.captioner(vocab->size(), dim), cfg.seed);
  }

  std::vector<CaptionExample> examples;
  for (std::size_t i = 0; i < data.captions.size(); ++i) {
    for (const auto& cap : data.captions[i]) {
      const auto ids = vocab->encode(cap);
      examples.push_back({i, {ids.begin() + 1, ids.end()}});
    }
  }

  make_dir(a.out);
  const fs::path dir(a.out);
  XeSchedule schedule = cfg.xe_schedule();
  schedule.curve_csv = dir / "loss.csv";
  schedule.start_iteration = start;
  if (a.stop_after > 0) {
    schedule.check_every = 1;
    schedule.stop = [n = a.stop_after](std::size_t it) { return it >= n; };
  }
  const XeResult result = train_xe(*model, data.images, examples, schedule);
  const std::size_t reached = std::max(start, result.iterations);

  vocab->save(dir / "vocab.txt");
  model->params().set_meta("iteration", static_cast<double>(reached));
  model->save(dir / "model.udpm", true);
  write_text(dir / "config.txt", cfg.to_string());

  const auto eval = greedy_eval(*model, *vocab, data, cfg.decode());
  json m = {{"iterations", reached},
            {"final_loss", result.curve.empty() ? json(nullptr) : json(result.curve.back().loss)},
            {"token_reconstruction", token_reconstruction(*model, data.images, examples, cfg.decode())},
            {"train", corpus_json(eval)}};
  write_text(dir / "metrics.json", m.dump(2) + "\n");
  out << "trained to iteration " << reached << "; train CIDEr-D " << eval.cider_d << "\n";
  return kExitOk;
}

struct TrainScstArgs {
  std::string data;
  std::string init;
  std::string vocab;
  std::string out;
};

int cmd_train_scst(const TrainScstArgs& a, const Common& c, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  require_runnable(cfg, c.force);
  if (a.init.empty()) {
    throw ConfigError("train-scst: --init must point at a cross-entropy checkpoint to start from");
  }
  const CaptionData data = load_caption_data(a.data, true);
  const std::size_t dim = feature_dim(data.images, a.data);
  const Vocabulary vocab = Vocabulary::load(a.vocab.empty() ? sibling(a.init, "vocab.txt") : fs::path(a.vocab));
  Captioner model = Captioner::from_checkpoint(a.init);
  check_captioner(model, vocab, dim);

  make_dir(a.out);
  const fs::path dir(a.out);
  ScstConfig sc = cfg.scst();
  sc.reward_csv = dir / "rewards.csv";
  const RewardSpec spec(reward_metric_from_string(cfg.scst_metric), data.ids, data.references);

  const auto before = greedy_eval(model, vocab, data, cfg.decode());
  const auto rows = scst_epoch(model, data.images, spec, vocab, sc);
  const auto after = greedy_eval(model, vocab, data, cfg.decode());

  double mean_adv = 0;
  for (const auto& r : rows) mean_adv += r.advantage;
  if (!rows.empty()) mean_adv /= static_cast<double>(rows.size());

  vocab.save(dir / "vocab.txt");
  model.save(dir / "model.udpm");
  write_text(dir / "config.txt", cfg.to_string());
  json m = {{"iterations", rows.size()},
            {"mean_advantage", mean_adv},
            {"before", corpus_json(before)},
            {"after", corpus_json(after)}};
  write_text(dir / "metrics.json", m.dump(2) + "\n");
  out << "train CIDEr-D " << before.cider_d << " -> " << after.cider_d << "\n";
  return kExitOk;
}

struct TrainVqaArgs {
  std::string data;
  std::string val;
  std::string out;
};

int cmd_train_vqa(const TrainVqaArgs& a, const Common& c, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  require_runnable(cfg, c.force);
  QaData train = load_qa_data(a.data);
  const std::size_t dim = feature_dim(train.images, a.data);

  std::vector<std::size_t> train_idx, val_idx;  // record indices into `train`
  std::optional<QaData> val;
  if (!a.val.empty()) {
    val = load_qa_data(a.val);
    if (feature_dim(val->images, a.val) != dim) throw DataError("validation features differ in size");
    for (std::size_t i = 0; i < train.records.size(); ++i) train_idx.push_back(i);
  } else {
    // hold out the last images so no image is shared across the split
    const std::size_t n = train.images.size();
    std::size_t held = static_cast<std::size_t>(std::floor(cfg.vqa_val_fraction * static_cast<double>(n)));
    if (cfg.vqa_val_fraction > 0 && held == 0 && n > 1) held = 1;
    for (std::size_t i = 0; i < train.records.size(); ++i)
      (train.image_of[i] + held >= n && held > 0 ? val_idx : train_idx).push_back(i);
  }
  if (train_idx.empty()) throw DataError("no training questions left after the validation split");

  std::vector<std::vector<std::string>> streams;
  std::vector<std::string> answers;
  for (auto i : train_idx) {
    streams.push_back(tokenize_question(train.records[i].question));
    answers.insert(answers.end(), train.records[i].answers.begin(), train.records[i].answers.end());
  }
  const Vocabulary questions = Vocabulary::build(streams, 1);
  const AnswerVocab answer_vocab = AnswerVocab::build(answers, cfg.vqa_answer_min_count);
  if (answer_vocab.size() == 0) {
    throw DataError("no answer occurs at least " + std::to_string(cfg.vqa_answer_min_count) + " times");
  }

  const auto all = to_examples(train, questions);
  std::vector<VqaExample> tr, va;
  for (auto i : train_idx) tr.push_back(all[i]);
  for (auto i : val_idx) va.push_back(all[i]);
  std::vector<Tensor> images = train.images;
  if (val) {
    for (auto e : to_examples(*val, questions)) {
      e.image += images.size();
      va.push_back(std::move(e));
    }
    images.insert(images.end(), val->images.begin(), val->images.end());
  }

  VqaModel model(cfg.vqa(questions.size(), answer_vocab.size(), dim), cfg.seed);
  std::size_t covered = 0;
  if (!cfg.vqa_word_vectors.empty()) covered = model.load_word_vectors(cfg.vqa_word_vectors, questions);

  make_dir(a.out);
  const fs::path dir(a.out);
  VqaTrainConfig tc = cfg.vqa_training();
  tc.curve_csv = dir / "curve.csv";
  const auto result = train_vqa(model, answer_vocab, images, tr, va, tc);

  questions.save(dir / "questions.txt");
  answer_vocab.save(dir / "answers.tsv");
  model.save(dir / "model.udpm");
  write_text(dir / "config.txt", cfg.to_string());
  const double train_acc = vqa_dataset_accuracy(model, answer_vocab, images, tr);
  json m = {{"epochs", result.curve.size()},
            {"best_epoch", result.best_epoch},
            {"stopped_early", result.stopped_early},
            {"train_accuracy", train_acc},
            {"val_accuracy", va.empty() ? json(nullptr) : json(vqa_dataset_accuracy(model, answer_vocab, images, va))},
            {"train_questions", tr.size()},
            {"val_questions", va.size()},
            {"answers", answer_vocab.size()},
            {"word_vectors_loaded", covered}};
  write_text(dir / "metrics.json", m.dump(2) + "\n");
  out << "trained " << result.curve.size() << " epochs; train accuracy " << train_acc << "\n";
  return kExitOk;
}

struct DecodeArgs {
  std::string data;
  std::string checkpoint;
  std::string vocab;
  std::string out;
};

int cmd_decode(const DecodeArgs& a, const Common& c, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const CaptionData data = load_caption_data(a.data, true);
  const Vocabulary vocab =
      Vocabulary::load(a.vocab.empty() ? sibling(a.checkpoint, "vocab.txt") : fs::path(a.vocab));
  const Captioner model = Captioner::from_checkpoint(a.checkpoint);
  check_captioner(model, vocab, feature_dim(data.images, a.data));
  const auto hyps = decode_all(model, data.images, cfg.beam, cfg.decode());
  std::string text;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    text += json{{"image_id", data.ids[i]}, {"caption", vocab.decode(hyps[i].ids)}, {"log_prob", hyps[i].log_prob}}
                .dump() +
            "\n";
  }
  write_text(a.out, text);
  out << "decoded " << hyps.size() << " images\n";
  return kExitOk;
}

struct EvalCaptionArgs {
  std::string data;
  std::string predictions;
  std::string checkpoint;
  std::string vocab;
  std::string out;
};

std::vector<Tokens> read_caption_predictions(const fs::path& path, const std::vector<std::string>& ids) {
  std::map<std::string, std::string> by_id;
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      by_id[j.at("image_id").get<std::string>()] = j.at("caption").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::vector<Tokens> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(path.string() + ": no prediction for image " + id);
    out.push_back(tokenize_caption(it->second));
  }
  return out;
}

int cmd_eval_caption(const EvalCaptionArgs& a, const Common& c, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  if (a.predictions.empty() == a.checkpoint.empty()) {
    throw ConfigError("eval-caption: give exactly one of --predictions or --checkpoint");
  }
  const CaptionData data = load_caption_data(a.data, !a.checkpoint.empty());
  std::vector<Tokens> cands;
  if (!a.predictions.empty()) {
    cands = read_caption_predictions(a.predictions, data.ids);
  } else {
    const Vocabulary vocab =
        Vocabulary::load(a.vocab.empty() ? sibling(a.checkpoint, "vocab.txt") : fs::path(a.vocab));
    const Captioner model = Captioner::from_checkpoint(a.checkpoint);
    check_captioner(model, vocab, feature_dim(data.images, a.data));
    cands = to_tokens(decode_all(model, data.images, cfg.beam, cfg.decode()), vocab);
  }
  const auto e = evaluate_captions(data.ids, cands, data.references);
  const std::string report = caption_report_json(e, cands);
  if (a.out.empty()) out << report << "\n";
  else write_text(a.out, report + "\n");
  if (!a.out.empty()) out << "BLEU-4 " << e.bleu4 << " ROUGE-L " << e.rouge_l << " CIDEr-D " << e.cider_d << "\n";
  return kExitOk;
}

struct EvalVqaArgs {
  std::string data;
  std::string checkpoint;
  std::string questions;
  std::string answers;
  std::string predictions;
  std::string predictions_out;
  std::string out;
};

int cmd_eval_vqa(const EvalVqaArgs& a, const Common& c, std::ostream& out) {
  c.resolve();
  if (a.predictions.empty() == a.checkpoint.empty()) {
    throw ConfigError("eval-vqa: give exactly one of --predictions or --checkpoint");
  }
  std::vector<QARecord> records;
  std::vector<std::string> predicted;
  if (!a.checkpoint.empty()) {
    const QaData data = load_qa_data(a.data);
    records = data.records;
    const Vocabulary questions =
        Vocabulary::load(a.questions.empty() ? sibling(a.checkpoint, "questions.txt") : fs::path(a.questions));
    const AnswerVocab answers =
        AnswerVocab::load(a.answers.empty() ? sibling(a.checkpoint, "answers.tsv") : fs::path(a.answers));
    const VqaModel model = VqaModel::from_checkpoint(a.checkpoint);
    check_vqa(model, questions, answers, feature_dim(data.images, a.data));
    std::vector<VqaPrediction> preds;
    for (const auto& ex : to_examples(data, questions)) {
      auto p = vqa_predict(model, answers, data.images[ex.image], ex.question);
      p.question_id = ex.question_id;
      predicted.push_back(p.answer);
      preds.push_back(std::move(p));
    }
    if (!a.predictions_out.empty()) write_predictions_jsonl(a.predictions_out, preds);
  } else {
    records = load_qa_jsonl(a.data, {false});
    std::map<std::string, std::string> by_id;
    std::ifstream in(a.predictions);
    if (!in) throw DataError("cannot read " + a.predictions);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = json::parse(line);
        by_id[j.at("question_id").get<std::string>()] = j.at("answer").get<std::string>();
      } catch (const json::exception& e) {
        throw DataError(a.predictions + ": " + e.what());
      }
    }
    for (const auto& r : records) {
      auto it = by_id.find(r.question_id);
      if (it == by_id.end()) throw DataError(a.predictions + ": no prediction for question " + r.question_id);
      predicted.push_back(it->second);
    }
  }

  std::map<std::string, std::pair<double, std::size_t>> buckets;
  for (const char* t : {"yes/no", "number", "other", "overall"}) buckets[t] = {0.0, 0};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double acc = vqa_accuracy(predicted[i], records[i].answers);
    for (const auto& key : {to_string(records[i].type), std::string("overall")}) {
      buckets[key].first += acc;
      buckets[key].second += 1;
    }
  }
  json report = json::object();
  for (const auto& [key, v] : buckets) {
    report[key] = {{"accuracy", v.second ? json(v.first / static_cast<double>(v.second)) : json(nullptr)},
                   {"count", v.second}};
  }
  if (a.out.empty()) {
    out << report.dump(2) << "\n";
  } else {
    write_text(a.out, report.dump(2) + "\n");
    out << "overall accuracy " << report["overall"]["accuracy"].dump() << " over " << records.size()
        << " questions\n";
  }
  return kExitOk;
}

struct AttentionArgs {
  std::string checkpoint;
  std::string features;
  std::string sentence;
  std::string question;
  std::string vocab;
  std::string questions;
  std::string answers;
  std::string out;
};

int cmd_attention(const AttentionArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = c.resolve();
  const RegionSet regions = read_region_file(a.features);
  if (!regions.has_boxes()) err << "warning: " << a.features << " has no boxes; emitting weights without geometry\n";
  const auto meta = ParamStore::load(a.checkpoint).meta();
  json doc;
  if (meta.count("G")) {
    if (a.question.empty()) throw ConfigError("attention: a VQA checkpoint needs --question");
    const Vocabulary questions =
        Vocabulary::load(a.questions.empty() ? sibling(a.checkpoint, "questions.txt") : fs::path(a.questions));
    const AnswerVocab answers =
        AnswerVocab::load(a.answers.empty() ? sibling(a.checkpoint, "answers.tsv") : fs::path(a.answers));
    const VqaModel model = VqaModel::from_checkpoint(a.checkpoint);
    check_vqa(model, questions, answers, regions.dim());
    const auto ids = encode_question_text(questions, a.question);
    const auto p = vqa_predict(model, answers, regions.features, ids);
    doc = {{"task", "vqa"},
           {"question", a.question},
           {"tokens", questions.decode_tokens(ids)},
           {"answer", p.answer},
           {"score", p.score},
           {"alpha", json::array({p.alpha})}};
  } else {
    const Vocabulary vocab =
        Vocabulary::load(a.vocab.empty() ? sibling(a.checkpoint, "vocab.txt") : fs::path(a.vocab));
    const Captioner model = Captioner::from_checkpoint(a.checkpoint);
    check_captioner(model, vocab, regions.dim());
    std::vector<std::size_t> words;
    std::vector<std::vector<double>> alpha;
    if (!a.sentence.empty()) {
      const auto ids = vocab.encode(a.sentence);
      words.assign(ids.begin() + 1, ids.end() - 1);
      alpha = caption_attention(model, regions.features, words);
    } else {
      const auto h = cfg.beam <= 1 ? greedy_decode(model, regions.features, cfg.decode())
                                   : beam_search(model, regions.features, cfg.beam, cfg.decode()).front();
      words = h.words();
      alpha = h.attention;
      alpha.resize(std::min(alpha.size(), words.size()));  // drop the <eos> step
    }
    doc = {{"task", "caption"}, {"tokens", vocab.decode_tokens(words)}, {"alpha", alpha}};
  }
  doc["k"] = regions.k();
  doc["boxes"] = boxes_json(regions.boxes);
  if (a.out.empty()) out << doc.dump() << "\n";
  else write_text(a.out, doc.dump() + "\n");
  return kExitOk;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bottom-up region selection and top-down attention for captioning and VQA"};
  app.name("updown");
  app.require_subcommand(1);
  Common common;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic shapes corpus");
  s->add_option("--scenes", synth.scenes, "Number of scenes")->required();
  s->add_option("--out", synth.out, "Output directory")->required();
  add_common(s, common);

  SelectArgs select;
  auto* sel = app.add_subcommand("select", "Select regions from a detections JSON file");
  sel->add_option("--detections", select.detections, "Detections JSON")->required()->check(CLI::ExistingFile);
  sel->add_option("--mode", select.mode, "threshold or top36")->check(CLI::IsMember({"threshold", "top36"}));
  sel->add_option("--out", select.out, "Output region file")->required();
  add_common(sel, common);

  TrainCaptionArgs tcap;
  auto* tc = app.add_subcommand("train-caption", "Cross-entropy training of the captioner");
  tc->add_option("--data", tcap.data, "captions.jsonl")->required();
  tc->add_option("--out", tcap.out, "Output directory")->required();
  tc->add_option("--resume", tcap.resume, "Checkpoint to continue from");
  tc->add_option("--vocab", tcap.vocab, "Vocabulary file (default: built from --data, or next to --resume)");
  tc->add_option("--stop-after", tcap.stop_after, "Stop once this many iterations have run");
  add_common(tc, common);

  TrainScstArgs tscst;
  auto* ts = app.add_subcommand("train-scst", "One self-critical epoch from a cross-entropy checkpoint");
  ts->add_option("--data", tscst.data, "captions.jsonl")->required();
  ts->add_option("--init", tscst.init, "Cross-entropy checkpoint");
  ts->add_option("--vocab", tscst.vocab, "Vocabulary file (default: next to --init)");
  ts->add_option("--out", tscst.out, "Output directory")->required();
  add_common(ts, common);

  TrainVqaArgs tvqa;
  auto* tv = app.add_subcommand("train-vqa", "Train the VQA model");
  tv->add_option("--data", tvqa.data, "qa.jsonl")->required();
  tv->add_option("--val", tvqa.val, "Validation qa.jsonl (default: hold out vqa.val_fraction of the images)");
  tv->add_option("--out", tvqa.out, "Output directory")->required();
  add_common(tv, common);

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "Caption every image of a dataset");
  d->add_option("--data", dec.data, "captions.jsonl providing the images")->required();
  d->add_option("--checkpoint", dec.checkpoint, "Captioner checkpoint")->required();
  d->add_option("--vocab", dec.vocab, "Vocabulary file (default: next to the checkpoint)");
  d->add_option("--out", dec.out, "Output predictions JSONL")->required();
  add_common(d, common);

  EvalCaptionArgs ecap;
  auto* ec = app.add_subcommand("eval-caption", "BLEU, ROUGE-L and CIDEr-D of predictions or a checkpoint");
  ec->add_option("--data", ecap.data, "captions.jsonl with the references")->required();
  ec->add_option("--predictions", ecap.predictions, "Predictions JSONL");
  ec->add_option("--checkpoint", ecap.checkpoint, "Captioner checkpoint to decode with");
  ec->add_option("--vocab", ecap.vocab, "Vocabulary file (default: next to the checkpoint)");
  ec->add_option("--out", ecap.out, "Report JSON (default: stdout)");
  add_common(ec, common);

  EvalVqaArgs evqa;
  auto* ev = app.add_subcommand("eval-vqa", "VQA accuracy by question type");
  ev->add_option("--data", evqa.data, "qa.jsonl")->required();
  ev->add_option("--checkpoint", evqa.checkpoint, "VQA checkpoint");
  ev->add_option("--questions", evqa.questions, "Question vocabulary (default: next to the checkpoint)");
  ev->add_option("--answers", evqa.answers, "Answer vocabulary (default: next to the checkpoint)");
  ev->add_option("--predictions", evqa.predictions, "Predictions JSONL instead of a checkpoint");
  ev->add_option("--predictions-out", evqa.predictions_out, "Write the checkpoint's predictions here");
  ev->add_option("--out", evqa.out, "Report JSON (default: stdout)");
  add_common(ev, common);

  AttentionArgs att;
  auto* at = app.add_subcommand("attention", "Dump attention weights and boxes as JSON");
  at->add_option("--checkpoint", att.checkpoint, "Captioner or VQA checkpoint")->required();
  at->add_option("--features", att.features, "Region file")->required();
  at->add_option("--sentence", att.sentence, "Caption to teacher-force (default: decode one)");
  at->add_option("--question", att.question, "Question for a VQA checkpoint");
  at->add_option("--vocab", att.vocab, "Caption vocabulary (default: next to the checkpoint)");
  at->add_option("--questions", att.questions, "Question vocabulary (default: next to the checkpoint)");
  at->add_option("--answers", att.answers, "Answer vocabulary (default: next to the checkpoint)");
  at->add_option("--out", att.out, "Output JSON (default: stdout)");
  add_common(at, common);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*s) return cmd_synth(synth, common, out);
    if (*sel) return cmd_select(select, common, out, err);
    if (*tc) return cmd_train_caption(tcap, common, out);
    if (*ts) return cmd_train_scst(tscst, common, out);
    if (*tv) return cmd_train_vqa(tvqa, common, out);
    if (*d) return cmd_decode(dec, common, out);
    if (*ec) return cmd_eval_caption(ecap, common, out);
    if (*ev) return cmd_eval_vqa(evqa, common, out);
    if (*at) return cmd_attention(att, common, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace updown::cli
