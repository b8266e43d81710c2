#include "updown/vqa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "updown/errors.hpp"
#include "updown/init.hpp"
#include "updown/metrics.hpp"

namespace updown {

void VqaConfig::validate() const {
  if (E == 0 || G == 0 || A == 0 || J == 0 || O == 0 || D == 0 || num_answers == 0) {
    throw ConfigError("vqa: E, G, A, J, O, D and num_answers must be positive");
  }
  if (question_vocab <= Vocabulary::kNumReserved) {
    throw ConfigError("vqa: question vocabulary has no word ids (size " + std::to_string(question_vocab) + ")");
  }
}

VqaConfig VqaConfig::desk(std::size_t question_vocab, std::size_t num_answers, std::size_t feature_dim) {
  VqaConfig c;
  c.question_vocab = question_vocab;
  c.num_answers = num_answers;
  c.D = feature_dim;
  return c;
}

VqaConfig VqaConfig::paper(std::size_t question_vocab, std::size_t num_answers) {
  VqaConfig c;
  c.question_vocab = question_vocab;
  c.num_answers = num_answers;
  c.E = 300;
  c.G = c.A = c.J = c.O = 512;
  c.D = 2048;
  return c;
}

Var gated_tanh(Graph& g, Var x, const GatedTanhVars& p) {
  return g.hadamard(g.tanh(g.affine(x, p.w, p.b)), g.sigmoid(g.affine(x, p.w_gate, p.b_gate)));
}

Var gru_cell(Graph& g, Var x, Var h, const GruVars& w) {
  const std::size_t m = g.value(h).num_cols();
  if (g.value(w.w_hh).num_rows() != 3 * m || g.value(w.w_hh).num_cols() != m) {
    throw ShapeError("gru_cell: w_hh must be " + std::to_string(3 * m) + " x " + std::to_string(m));
  }
  const Var a = g.affine(x, w.w_ih, w.b);
  const Var uh = g.matmul_nt(h, g.slice_rows(w.w_hh, 0, 2 * m));
  const Var z = g.sigmoid(g.add(g.slice_cols(a, 0, m), g.slice_cols(uh, 0, m)));
  const Var r = g.sigmoid(g.add(g.slice_cols(a, m, 2 * m), g.slice_cols(uh, m, 2 * m)));
  const Var cand =
      g.tanh(g.add(g.slice_cols(a, 2 * m, 3 * m), g.matmul_nt(g.hadamard(r, h), g.slice_rows(w.w_hh, 2 * m, 3 * m))));
  return g.add(h, g.hadamard(z, g.sub(cand, h)));
}

Var encode_question(Graph& g, const VqaVars& p, std::span<const std::size_t> ids) {
  std::vector<std::size_t> words(ids.begin(), ids.begin() + std::min(ids.size(), kMaxQuestionWords));
  if (words.empty()) words.push_back(Vocabulary::kPad);
  const std::size_t m = g.value(p.gru.w_hh).num_cols();
  const Var emb = g.row_lookup(p.embed, words);
  Var h = g.constant(Tensor::matrix(1, m));
  for (std::size_t t = 0; t < words.size(); ++t) {
    h = gru_cell(g, words.size() == 1 ? emb : g.slice_rows(emb, t, t + 1), h, p.gru);
  }
  return h;
}

VqaAttention vqa_attend(Graph& g, const VqaVars& p, Var features, Var q) {
  const std::size_t k = g.value(features).num_rows();
  if (k == 0) throw ShapeError("vqa_attend: image has no feature rows");
  const Var parts[] = {features, k == 1 ? q : g.tile_rows(q, k)};
  const Var a = g.matmul_nt(p.w_a, gated_tanh(g, g.concat_cols(parts), p.f_a));  // 1 x k
  const Var alpha = g.softmax_row(a);
  return {alpha, g.matmul(alpha, features)};
}

Var vqa_scores(Graph& g, const VqaVars& p, Var q, Var v_hat) {
  const Var h = g.hadamard(gated_tanh(g, q, p.f_q), gated_tanh(g, v_hat, p.f_v));
  return g.sigmoid(g.matmul_nt(gated_tanh(g, h, p.f_o), p.w_o));
}

Var vqa_loss(Graph& g, Var scores, const Tensor& targets) { return g.bce(scores, targets); }

AnswerVocab AnswerVocab::build(std::span<const std::string> answers, std::size_t min_occurrences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& a : answers) {
    std::string n = normalize_answer(a);
    if (!n.empty()) ++counts[n];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [a, c] : counts)
    if (c >= min_occurrences) kept.emplace_back(a, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  AnswerVocab v;
  for (auto& [a, c] : kept) v.push(a, c);
  return v;
}

void AnswerVocab::push(std::string answer, std::size_t count) {
  if (!ids_.emplace(answer, answers_.size()).second) throw DataError("answer vocab: duplicate answer '" + answer + "'");
  answers_.push_back(std::move(answer));
  counts_.push_back(count);
}

std::optional<std::size_t> AnswerVocab::id(std::string_view answer) const {
  auto it = ids_.find(normalize_answer(std::string(answer)));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

void AnswerVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write answer vocab " + path.string());
  for (std::size_t i = 0; i < answers_.size(); ++i) out << answers_[i] << '\t' << counts_[i] << '\n';
}

AnswerVocab AnswerVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read answer vocab " + path.string());
  AnswerVocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing count");
    try {
      v.push(line.substr(0, tab), std::stoul(line.substr(tab + 1)));
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad count");
    }
  }
  return v;
}

Tensor soft_targets(const AnswerVocab& vocab, std::span<const std::string> annotator_answers) {
  Tensor t = Tensor::matrix(1, vocab.size());
  std::vector<std::size_t> matches(vocab.size(), 0);
  for (const auto& a : annotator_answers)
    if (auto id = vocab.id(a)) ++matches[*id];
  for (std::size_t i = 0; i < vocab.size(); ++i) t[i] = std::min(static_cast<double>(matches[i]) / 3.0, 1.0);
  return t;
}

std::vector<std::size_t> encode_question_text(const Vocabulary& vocab, std::string_view question) {
  const auto ids = vocab.encode_tokens(tokenize_question(question));
  return {ids.begin() + 1, ids.end() - 1};
}

VqaModel::VqaModel(const VqaConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  auto block = [&](const std::string& name, std::size_t out, std::size_t in) {
    params_.add(name + ".w", glorot_uniform(out, in, rng));
    params_.add(name + ".w_gate", glorot_uniform(out, in, rng));
    params_.add(name + ".b", Tensor::matrix(1, out));
    params_.add(name + ".b_gate", Tensor::matrix(1, out));
  };
  params_.add("embed", uniform_tensor({c.question_vocab, c.E}, -0.1, 0.1, rng));
  params_.add("gru.w_ih", glorot_uniform(3 * c.G, c.E, rng));
  params_.add("gru.w_hh", glorot_uniform(3 * c.G, c.G, rng));
  params_.add("gru.b", Tensor::matrix(1, 3 * c.G));
  block("f_a", c.A, c.D + c.G);
  params_.add("att.w_a", glorot_uniform(1, c.A, rng));
  block("f_q", c.J, c.G);
  block("f_v", c.J, c.D);
  block("f_o", c.O, c.J);
  params_.add("out.w_o", glorot_uniform(c.num_answers, c.O, rng));
}

VqaVars VqaModel::bind(Graph& g) const {
  auto P = [&](const std::string& name) { return g.param(params_.at(name)); };
  auto block = [&](const std::string& n) {
    return GatedTanhVars{P(n + ".w"), P(n + ".w_gate"), P(n + ".b"), P(n + ".b_gate")};
  };
  VqaVars v;
  v.embed = P("embed");
  v.gru = {P("gru.w_ih"), P("gru.w_hh"), P("gru.b")};
  v.f_a = block("f_a");
  v.f_q = block("f_q");
  v.f_v = block("f_v");
  v.f_o = block("f_o");
  v.w_a = P("att.w_a");
  v.w_o = P("out.w_o");
  return v;
}

std::size_t VqaModel::load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read word vectors " + path.string());
  Tensor& embed = params_.at("embed").value;
  std::string line;
  std::size_t lineno = 0, replaced = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vec;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::logic_error&) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (vec.size() != config_.E) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(config_.E) +
                      " values, got " + std::to_string(vec.size()));
    }
    if (!vocab.contains(word)) continue;
    const std::size_t id = vocab.id(word);
    if (id >= embed.num_rows()) continue;
    std::copy(vec.begin(), vec.end(), embed.row_span(id).begin());
    ++replaced;
  }
  return replaced;
}

void VqaModel::save(const std::filesystem::path& path, bool with_optimizer_state) const {
  const auto& c = config_;
  params_.set_meta("question_vocab", static_cast<double>(c.question_vocab));
  params_.set_meta("num_answers", static_cast<double>(c.num_answers));
  params_.set_meta("E", static_cast<double>(c.E));
  params_.set_meta("G", static_cast<double>(c.G));
  params_.set_meta("A", static_cast<double>(c.A));
  params_.set_meta("J", static_cast<double>(c.J));
  params_.set_meta("O", static_cast<double>(c.O));
  params_.set_meta("D", static_cast<double>(c.D));
  params_.save(path, with_optimizer_state);
}

void VqaModel::load(const std::filesystem::path& path) { params_.load_into(path); }

VqaModel VqaModel::from_checkpoint(const std::filesystem::path& path) {
  const auto meta = ParamStore::load(path).meta();
  auto get = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError(path.string() + ": checkpoint lacks VQA size '" + key + "'");
    return static_cast<std::size_t>(it->second);
  };
  VqaConfig c;
  c.question_vocab = get("question_vocab");
  c.num_answers = get("num_answers");
  c.E = get("E");
  c.G = get("G");
  c.A = get("A");
  c.J = get("J");
  c.O = get("O");
  c.D = get("D");
  VqaModel m(c, 0);
  m.load(path);
  return m;
}

namespace {

struct Forward {
  Var scores;
  Var alpha;
};

Forward forward(Graph& g, const VqaVars& p, const Tensor& features, std::span<const std::size_t> question) {
  const Var q = encode_question(g, p, question);
  const VqaAttention att = vqa_attend(g, p, g.constant(features), q);
  return {vqa_scores(g, p, q, att.v_hat), att.alpha};
}

}  // namespace

VqaPrediction vqa_predict(const VqaModel& model, const AnswerVocab& answers, const Tensor& features,
                          std::span<const std::size_t> question) {
  if (answers.size() != model.config().num_answers) throw ShapeError("vqa_predict: answer vocab size != model outputs");
  Graph g;
  const Forward f = forward(g, model.bind(g), features, question);
  const auto s = g.value(f.scores).values();
  const std::size_t best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  VqaPrediction out;
  out.answer = answers.answer(best);
  out.score = s[best];
  const auto a = g.value(f.alpha).values();
  out.alpha.assign(a.begin(), a.end());
  return out;
}

double vqa_dataset_accuracy(const VqaModel& model, const AnswerVocab& answers, std::span<const Tensor> images,
                            std::span<const VqaExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0;
  for (const auto& ex : examples) {
    const auto pred = vqa_predict(model, answers, images[ex.image], ex.question);
    total += vqa_accuracy(pred.answer, ex.answers);
  }
  return total / static_cast<double>(examples.size());
}

VqaTrainResult train_vqa(VqaModel& model, const AnswerVocab& answers, std::span<const Tensor> images,
                         std::span<const VqaExample> train, std::span<const VqaExample> val,
                         const VqaTrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("train_vqa: empty training set");
  if (config.epochs == 0 || config.batch_size == 0) throw ConfigError("train_vqa: epochs and batch_size must be positive");
  if (answers.size() != model.config().num_answers) throw ShapeError("train_vqa: answer vocab size != model outputs");
  std::ofstream csv;
  if (!config.curve_csv.empty()) {
    csv.open(config.curve_csv);
    if (!csv) throw DataError("cannot write accuracy curve " + config.curve_csv.string());
    csv << "epoch,loss,train_accuracy,val_accuracy\n";
  }
  std::vector<Tensor> targets;
  for (const auto& ex : train) targets.push_back(soft_targets(answers, ex.answers));

  Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  ParamStore& params = model.params();
  VqaTrainResult result;
  double best_val = -1.0;
  std::vector<Tensor> best_values;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t j = order.size(); j > 1; --j)
      std::swap(order[j - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(j) - 1))]);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      params.zero_grad();
      Graph g;
      try {
        const VqaVars p = model.bind(g);
        Var total;
        for (std::size_t i = start; i < end; ++i) {
          const auto& ex = train[order[i]];
          const Var l = vqa_loss(g, forward(g, p, images[ex.image], ex.question).scores, targets[order[i]]);
          total = total.valid() ? g.add(total, l) : l;
        }
        const Var mean = g.scalar_mul(total, 1.0 / static_cast<double>(end - start));
        loss_sum += g.value(total)[0];
        g.backward(mean);
      } catch (const NumericError& e) {
        throw NumericError("train_vqa: non-finite loss at epoch " + std::to_string(epoch) + " (" + e.what() + ")");
      }
      adadelta_step(params, config.adadelta);
    }
    VqaEpoch row{epoch, loss_sum / static_cast<double>(train.size()), vqa_dataset_accuracy(model, answers, images, train),
                 std::numeric_limits<double>::quiet_NaN()};
    if (!val.empty()) row.val_accuracy = vqa_dataset_accuracy(model, answers, images, val);
    result.curve.push_back(row);
    if (csv) csv << row.epoch << ',' << row.loss << ',' << row.train_accuracy << ',' << row.val_accuracy << '\n';

    if (!val.empty()) {
      if (row.val_accuracy > best_val) {
        best_val = row.val_accuracy;
        result.best_epoch = epoch;
        since_best = 0;
        best_values.clear();
        for (const auto& prm : params) best_values.push_back(prm.value);
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        result.stopped_early = true;
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
    if (config.target_train_accuracy > 0 && row.train_accuracy >= config.target_train_accuracy) {
      result.stopped_early = epoch + 1 < config.epochs;
      break;
    }
  }
  if (!best_values.empty()) {
    std::size_t i = 0;
    for (auto& prm : params) prm.value = best_values[i++];
  }
  return result;
}

void write_predictions_jsonl(const std::filesystem::path& path, std::span<const VqaPrediction> predictions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write predictions " + path.string());
  for (const auto& p : predictions) {
    nlohmann::json j;
    j["question_id"] = p.question_id;
    j["answer"] = p.answer;
    j["score"] = p.score;
    j["alpha"] = p.alpha;
    out << j.dump() << '\n';
  }
}

}  // namespace updown
