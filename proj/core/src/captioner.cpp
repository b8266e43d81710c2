#include "updown/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "updown/errors.hpp"
#include "updown/init.hpp"
#include "updown/optim.hpp"
#include "updown/vocabulary.hpp"

namespace updown {

void CaptionerConfig::validate() const {
  if (M == 0 || H == 0 || E == 0 || D == 0 || beam_size == 0 || max_len == 0) {
    throw ConfigError("captioner: M, H, E, D, beam_size and max_len must be positive");
  }
  if (vocab <= Vocabulary::kNumReserved) {
    throw ConfigError("captioner: vocabulary has no word ids (size " + std::to_string(vocab) + ")");
  }
}

CaptionerConfig CaptionerConfig::desk(std::size_t vocab, std::size_t feature_dim) {
  CaptionerConfig c;
  c.vocab = vocab;
  c.D = feature_dim;
  return c;
}

CaptionerConfig CaptionerConfig::paper(std::size_t vocab) {
  CaptionerConfig c;
  c.vocab = vocab;
  c.M = 1000;
  c.H = 512;
  c.E = 1000;
  c.D = 2048;
  c.beam_size = 5;
  return c;
}

LstmState lstm_cell(Graph& g, Var x, const LstmState& prev, const LstmVars& w) {
  const std::size_t m = g.value(prev.h).num_cols();
  const Var gates = g.add(g.affine(x, w.w_ih, w.b), g.matmul_nt(prev.h, w.w_hh));
  if (g.value(gates).num_cols() != 4 * m) {
    throw ShapeError("lstm_cell: gate width " + std::to_string(g.value(gates).num_cols()) + " != 4 x hidden " +
                     std::to_string(m));
  }
  const Var i = g.sigmoid(g.slice_cols(gates, 0, m));
  const Var f = g.sigmoid(g.slice_cols(gates, m, 2 * m));
  const Var o = g.sigmoid(g.slice_cols(gates, 2 * m, 3 * m));
  const Var cand = g.tanh(g.slice_cols(gates, 3 * m, 4 * m));
  const Var c = g.add(g.hadamard(f, prev.c), g.hadamard(i, cand));
  const Var h = g.hadamard(o, g.tanh(c));
  return {h, c};
}

Attention attend(Graph& g, Var features, Var projected, Var h1_row, Var w_ha, Var w_a) {
  const Var q = g.matmul_nt(h1_row, w_ha);                       // 1 x H
  const Var a = g.matmul_nt(w_a, g.tanh(g.add(projected, q)));   // 1 x k
  const Var alpha = g.softmax_row(a);
  return {alpha, g.matmul(alpha, features)};
}

ImageVars bind_image(Graph& g, const CaptionerVars& p, const Tensor& features) {
  if (features.empty()) throw ShapeError("captioner: image has no feature rows");
  ImageVars iv;
  iv.features = g.constant(features);
  iv.projected = g.matmul_nt(iv.features, p.w_va);
  iv.mean = g.mean_rows(iv.features);
  return iv;
}

StepOutput captioner_step(Graph& g, const CaptionerVars& p, const StepVars& state,
                          std::span<const std::size_t> prev_ids, std::span<const ImageVars> images,
                          std::span<const std::size_t> image_of_row) {
  const std::size_t rows = prev_ids.size();
  if (image_of_row.size() != rows) throw ShapeError("captioner_step: image_of_row size != batch");
  const bool shared = std::all_of(image_of_row.begin(), image_of_row.end(),
                                  [&](std::size_t i) { return i == image_of_row[0]; });
  Var vbar;
  if (shared) {
    vbar = rows == 1 ? images[image_of_row[0]].mean : g.tile_rows(images[image_of_row[0]].mean, rows);
  } else {
    std::vector<Var> parts;
    for (auto i : image_of_row) parts.push_back(images[i].mean);
    vbar = g.concat_rows(parts);
  }
  const Var emb = g.row_lookup(p.embed, std::vector<std::size_t>(prev_ids.begin(), prev_ids.end()));
  const Var x1_parts[] = {state.h2, vbar, emb};
  const LstmState s1 = lstm_cell(g, g.concat_cols(x1_parts), {state.h1, state.c1}, p.att_lstm);

  StepOutput out;
  std::vector<Var> v_hats;
  for (std::size_t b = 0; b < rows; ++b) {
    const ImageVars& img = images[image_of_row[b]];
    const Var h_row = rows == 1 ? s1.h : g.slice_rows(s1.h, b, b + 1);
    const Attention att = attend(g, img.features, img.projected, h_row, p.w_ha, p.w_a);
    out.alphas.push_back(att.alpha);
    v_hats.push_back(att.v_hat);
  }
  const Var v_hat = rows == 1 ? v_hats[0] : g.concat_rows(v_hats);
  const Var x2_parts[] = {v_hat, s1.h};
  const LstmState s2 = lstm_cell(g, g.concat_cols(x2_parts), {state.h2, state.c2}, p.lang_lstm);
  out.log_probs = g.log_softmax_row(g.affine(s2.h, p.w_p, p.b_p));
  out.state = {s1.h, s1.c, s2.h, s2.c};
  return out;
}

Captioner::Captioner(const CaptionerConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  params_.add("embed", uniform_tensor({c.vocab, c.E}, -0.1, 0.1, rng));
  const std::size_t in1 = c.M + c.D + c.E, in2 = c.D + c.M;
  params_.add("att_lstm.w_ih", glorot_uniform(4 * c.M, in1, rng));
  params_.add("att_lstm.w_hh", glorot_uniform(4 * c.M, c.M, rng));
  params_.add("att_lstm.b", Tensor::matrix(1, 4 * c.M));
  params_.add("lang_lstm.w_ih", glorot_uniform(4 * c.M, in2, rng));
  params_.add("lang_lstm.w_hh", glorot_uniform(4 * c.M, c.M, rng));
  params_.add("lang_lstm.b", Tensor::matrix(1, 4 * c.M));
  params_.add("att.w_va", glorot_uniform(c.H, c.D, rng));
  params_.add("att.w_ha", glorot_uniform(c.H, c.M, rng));
  params_.add("att.w_a", glorot_uniform(1, c.H, rng));
  params_.add("out.w_p", glorot_uniform(c.vocab, c.M, rng));
  params_.add("out.b_p", Tensor::matrix(1, c.vocab));
}

CaptionerVars Captioner::bind(Graph& g) const {
  auto P = [&](const char* name) { return g.param(params_.at(name)); };
  CaptionerVars v;
  v.embed = P("embed");
  v.att_lstm = {P("att_lstm.w_ih"), P("att_lstm.w_hh"), P("att_lstm.b")};
  v.lang_lstm = {P("lang_lstm.w_ih"), P("lang_lstm.w_hh"), P("lang_lstm.b")};
  v.w_va = P("att.w_va");
  v.w_ha = P("att.w_ha");
  v.w_a = P("att.w_a");
  v.w_p = P("out.w_p");
  v.b_p = P("out.b_p");
  return v;
}

StepVars Captioner::initial_state(Graph& g, std::size_t rows) const {
  const Tensor z = Tensor::matrix(rows, config_.M);
  return {g.constant(z), g.constant(z), g.constant(z), g.constant(z)};
}

void Captioner::zero_parameters() {
  for (auto& p : params_) p.value.fill(0.0);
}

void Captioner::save(const std::filesystem::path& path, bool with_optimizer_state) const {
  params_.set_meta("vocab", static_cast<double>(config_.vocab));
  params_.set_meta("M", static_cast<double>(config_.M));
  params_.set_meta("H", static_cast<double>(config_.H));
  params_.set_meta("E", static_cast<double>(config_.E));
  params_.set_meta("D", static_cast<double>(config_.D));
  params_.save(path, with_optimizer_state);
}

void Captioner::load(const std::filesystem::path& path) { params_.load_into(path); }

Captioner Captioner::from_checkpoint(const std::filesystem::path& path) {
  const auto meta = ParamStore::load(path).meta();
  auto get = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError(path.string() + ": checkpoint lacks captioner size '" + key + "'");
    return static_cast<std::size_t>(it->second);
  };
  CaptionerConfig c;
  c.vocab = get("vocab");
  c.M = get("M");
  c.H = get("H");
  c.E = get("E");
  c.D = get("D");
  Captioner m(c, 0);
  m.load(path);
  return m;
}

Var xe_loss(Graph& g, const CaptionerVars& p, std::span<const ImageVars> images,
            std::span<const CaptionExample> examples, std::span<const double> weights) {
  if (examples.empty()) throw std::invalid_argument("xe_loss: empty batch");
  if (weights.size() != examples.size()) throw std::invalid_argument("xe_loss: one weight per example required");
  for (const auto& ex : examples) {
    if (ex.target.empty()) throw std::invalid_argument("xe_loss: empty target");
    if (ex.image >= images.size()) throw std::out_of_range("xe_loss: image index out of range");
  }
  // longest first, so the active rows at step t are always a prefix
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].target.size() > examples[b].target.size();
  });
  const std::size_t T = examples[order[0]].target.size();
  const std::size_t m = g.value(p.att_lstm.w_hh).num_cols();
  const Tensor z = Tensor::matrix(examples.size(), m);
  StepVars state{g.constant(z), g.constant(z), g.constant(z), g.constant(z)};
  std::size_t rows = examples.size();
  Var total;
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t active = 0;
    while (active < order.size() && examples[order[active]].target.size() > t) ++active;
    if (active < rows) {
      state = {g.slice_rows(state.h1, 0, active), g.slice_rows(state.c1, 0, active),
               g.slice_rows(state.h2, 0, active), g.slice_rows(state.c2, 0, active)};
      rows = active;
    }
    std::vector<std::size_t> prev(rows), image_of_row(rows), cols(rows);
    std::vector<double> w(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& ex = examples[order[r]];
      prev[r] = t == 0 ? Vocabulary::kBos : ex.target[t - 1];
      image_of_row[r] = ex.image;
      cols[r] = ex.target[t];
      w[r] = ex.target[t] == Vocabulary::kPad ? 0.0 : -weights[order[r]];
    }
    StepOutput step = captioner_step(g, p, state, prev, images, image_of_row);
    const Var term = g.pick_sum(step.log_probs, std::move(cols), std::move(w));
    total = total.valid() ? g.add(total, term) : term;
    state = step.state;
  }
  return total;
}

Var xe_loss(Graph& g, const Captioner& model, std::span<const Tensor> images,
            std::span<const CaptionExample> examples) {
  const CaptionerVars p = model.bind(g);
  std::vector<ImageVars> iv;
  for (const auto& t : images) iv.push_back(bind_image(g, p, t));
  const std::vector<double> w(examples.size(), 1.0 / static_cast<double>(examples.size()));
  return xe_loss(g, p, iv, examples, w);
}

namespace {

// Runs teacher forcing over `ids` and returns the per-step log-prob rows.
std::vector<Tensor> teacher_forced(const Captioner& model, const Tensor& features, std::span<const std::size_t> ids,
                                   std::size_t steps) {
  Graph g;
  const CaptionerVars p = model.bind(g);
  const ImageVars img[] = {bind_image(g, p, features)};
  const std::size_t row0[] = {0};
  StepVars state = model.initial_state(g, 1);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t prev[] = {t == 0 ? Vocabulary::kBos : ids[t - 1]};
    StepOutput s = captioner_step(g, p, state, prev, img, row0);
    out.push_back(g.value(s.log_probs));
    state = s.state;
  }
  return out;
}

}  // namespace

double sequence_log_prob(const Captioner& model, const Tensor& features, std::span<const std::size_t> ids) {
  if (ids.empty()) return 0.0;
  const auto rows = teacher_forced(model, features, ids, ids.size());
  double lp = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= rows[t].size()) throw std::out_of_range("sequence_log_prob: id out of range");
    lp += rows[t][ids[t]];
  }
  return lp;
}

std::vector<double> next_token_log_probs(const Captioner& model, const Tensor& features,
                                         std::span<const std::size_t> prefix) {
  const auto rows = teacher_forced(model, features, prefix, prefix.size() + 1);
  const auto v = rows.back().values();
  return {v.begin(), v.end()};
}

std::vector<std::vector<double>> caption_attention(const Captioner& model, const Tensor& features,
                                                   std::span<const std::size_t> words) {
  Graph g;
  const CaptionerVars p = model.bind(g);
  const ImageVars img[] = {bind_image(g, p, features)};
  const std::size_t row0[] = {0};
  StepVars state = model.initial_state(g, 1);
  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < words.size(); ++t) {
    const std::size_t prev[] = {t == 0 ? Vocabulary::kBos : words[t - 1]};
    StepOutput s = captioner_step(g, p, state, prev, img, row0);
    const auto a = g.value(s.alphas[0]).values();
    rows.emplace_back(a.begin(), a.end());
    state = s.state;
  }
  return rows;
}

std::vector<std::size_t> Hypothesis::words() const {
  std::vector<std::size_t> w(ids);
  if (finished && !w.empty()) w.pop_back();
  return w;
}

namespace {

bool suppressed(std::size_t token, std::size_t prev, bool first, const DecodeOptions& o) {
  if (token == Vocabulary::kPad || token == Vocabulary::kBos) return true;
  if (o.suppress_unk && token == Vocabulary::kUnk) return true;
  return o.no_repeat && !first && token == prev;
}

// Tie preference at equal scores: a word beats EOS, then lower ids win.
bool token_before(std::size_t a, std::size_t b) {
  const bool ea = a == Vocabulary::kEos, eb = b == Vocabulary::kEos;
  if (ea != eb) return !ea;
  return a < b;
}

struct Candidate {
  double score;
  std::size_t hyp;
  std::size_t token;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.hyp != b.hyp) return a.hyp < b.hyp;
  return token_before(a.token, b.token);
}

std::vector<double> row_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

Hypothesis greedy_decode(const Captioner& model, const Tensor& features, const DecodeOptions& options) {
  if (options.max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  Graph g;
  const CaptionerVars p = model.bind(g);
  const ImageVars img[] = {bind_image(g, p, features)};
  const std::size_t row0[] = {0};
  StepVars state = model.initial_state(g, 1);
  Hypothesis h;
  std::size_t prev = Vocabulary::kBos;
  for (std::size_t t = 0; t < options.max_len; ++t) {
    const std::size_t prev_ids[] = {prev};
    StepOutput s = captioner_step(g, p, state, prev_ids, img, row0);
    const Tensor& lp = g.value(s.log_probs);
    std::size_t best = lp.size();
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (suppressed(v, prev, t == 0, options)) continue;
      if (best == lp.size() || lp[v] > lp[best] || (lp[v] == lp[best] && token_before(v, best))) best = v;
    }
    if (best == lp.size()) break;
    h.ids.push_back(best);
    h.log_prob += lp[best];
    if (best == Vocabulary::kEos) {
      h.finished = true;
      break;
    }
    h.attention.push_back(row_of(g.value(s.alphas[0])));
    prev = best;
    state = s.state;
  }
  return h;
}

std::vector<Hypothesis> beam_search(const Captioner& model, const Tensor& features, std::size_t beam,
                                    const DecodeOptions& options) {
  if (beam == 0) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (options.max_len == 0) throw std::invalid_argument("beam_search: max_len must be >= 1");
  Graph g;
  const CaptionerVars p = model.bind(g);
  const ImageVars img[] = {bind_image(g, p, features)};
  std::vector<Hypothesis> live(1), pool;
  StepVars state = model.initial_state(g, 1);
  for (std::size_t t = 0; t < options.max_len && !live.empty(); ++t) {
    const std::size_t rows = live.size();
    std::vector<std::size_t> prev(rows), image_of_row(rows, 0);
    for (std::size_t b = 0; b < rows; ++b) prev[b] = t == 0 ? Vocabulary::kBos : live[b].ids.back();
    StepOutput s = captioner_step(g, p, state, prev, img, image_of_row);
    const Tensor& lp = g.value(s.log_probs);
    const std::size_t V = lp.num_cols();

    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t v = 0; v < V; ++v)
        if (!suppressed(v, prev[b], t == 0, options)) cands.push_back({live[b].log_prob + lp.at(b, v), b, v});
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(), candidate_before);
    cands.resize(keep);

    std::vector<Hypothesis> next;
    std::vector<std::size_t> parents;
    for (const auto& c : cands) {
      Hypothesis h = live[c.hyp];
      h.ids.push_back(c.token);
      h.log_prob = c.score;
      if (c.token == Vocabulary::kEos) {
        h.finished = true;
        pool.push_back(std::move(h));
        continue;
      }
      h.attention.push_back(row_of(g.value(s.alphas[c.hyp])));
      next.push_back(std::move(h));
      parents.push_back(c.hyp);
    }
    live = std::move(next);
    if (!live.empty()) {
      state = {g.row_lookup(s.state.h1, parents), g.row_lookup(s.state.c1, parents),
               g.row_lookup(s.state.h2, parents), g.row_lookup(s.state.c2, parents)};
    }
  }
  for (auto& h : live) pool.push_back(std::move(h));
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
  return pool;
}

XeResult train_xe(Captioner& model, std::span<const Tensor> images, std::span<const CaptionExample> examples,
                  const XeSchedule& schedule) {
  if (examples.empty()) throw std::invalid_argument("train_xe: empty dataset");
  if (schedule.total_iterations == 0 || schedule.batch_size == 0) {
    throw ConfigError("train_xe: total_iterations and batch_size must be positive");
  }
  std::ofstream csv;
  if (!schedule.curve_csv.empty()) {
    csv.open(schedule.curve_csv);
    if (!csv) throw DataError("cannot write loss curve " + schedule.curve_csv.string());
    csv << "iteration,lr,loss\n";
  }
  Rng rng(schedule.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(schedule.batch_size, examples.size());

  XeResult result;
  ParamStore& params = model.params();
  for (std::size_t it = 0; it < schedule.total_iterations; ++it) {
    std::vector<CaptionExample> mb;
    std::map<std::size_t, std::size_t> local;
    std::vector<Tensor> feats;
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == order.size()) {
        for (std::size_t j = order.size(); j > 1; --j)
          std::swap(order[j - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(j) - 1))]);
        cursor = 0;
      }
      CaptionExample ex = examples[order[cursor++]];
      auto [pos, fresh] = local.emplace(ex.image, feats.size());
      if (fresh) feats.push_back(images[ex.image]);
      ex.image = pos->second;
      mb.push_back(std::move(ex));
    }
    if (it < schedule.start_iteration) continue;
    params.zero_grad();
    Graph g;
    double value = 0.0;
    try {
      const Var loss = xe_loss(g, model, feats, mb);
      value = g.value(loss)[0];
      g.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("train_xe: non-finite loss at iteration " + std::to_string(it) + " (" + e.what() + ")");
    }
    if (schedule.clip > 0) clip_global_norm(params, schedule.clip);
    const double lr = schedule.lr0 * (1.0 - static_cast<double>(it) / static_cast<double>(schedule.total_iterations));
    sgd_momentum_step(params, lr, schedule.momentum);
    result.curve.push_back({it, lr, value});
    if (csv) csv << it << ',' << lr << ',' << value << '\n';
    result.iterations = it + 1;
    if (schedule.stop && schedule.check_every && (it + 1) % schedule.check_every == 0 && schedule.stop(it + 1)) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

double token_reconstruction(const Captioner& model, std::span<const Tensor> images,
                            std::span<const CaptionExample> examples, const DecodeOptions& options) {
  double correct = 0, total = 0;
  for (const auto& ex : examples) {
    const Hypothesis h = greedy_decode(model, images[ex.image], options);
    for (std::size_t i = 0; i < std::min(h.ids.size(), ex.target.size()); ++i) correct += h.ids[i] == ex.target[i];
    total += static_cast<double>(std::max(h.ids.size(), ex.target.size()));
  }
  return total > 0 ? correct / total : 0.0;
}

}  // namespace updown
