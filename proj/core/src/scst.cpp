#include "updown/scst.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "updown/errors.hpp"
#include "updown/optim.hpp"

namespace updown {

RewardMetric reward_metric_from_string(const std::string& s) {
  if (s == "cider_d") return RewardMetric::cider_d;
  if (s == "bleu4") return RewardMetric::bleu4;
  throw ConfigError("unknown reward metric '" + s + "' (expected cider_d or bleu4)");
}

RewardSpec::RewardSpec(RewardMetric metric, std::vector<std::string> image_ids,
                       std::vector<std::vector<Tokens>> references)
    : metric_(metric), ids_(std::move(image_ids)), refs_(std::move(references)) {
  if (ids_.size() != refs_.size()) throw std::invalid_argument("reward spec: one reference set per image required");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (refs_[i].empty()) throw std::invalid_argument("reward spec: image " + ids_[i] + " has no references");
    if (!index_.emplace(ids_[i], i).second) throw std::invalid_argument("reward spec: duplicate image " + ids_[i]);
  }
  if (metric_ == RewardMetric::cider_d) cider_ = std::make_unique<CiderD>(refs_);
}

std::size_t RewardSpec::index_of(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw std::out_of_range("reward spec: unknown image id '" + image_id + "'");
  return it->second;
}

double RewardSpec::reward(std::size_t image, const Tokens& candidate) const {
  if (image >= refs_.size()) throw std::out_of_range("reward spec: image index out of range");
  if (metric_ == RewardMetric::cider_d) return cider_->score(candidate, image);
  const Tokens cands[] = {candidate};
  return bleu4(cands, std::span<const std::vector<Tokens>>(&refs_[image], 1));
}

double sequence_reward(const RewardSpec& spec, const std::string& image_id, std::span<const std::size_t> ids,
                       const Vocabulary& vocab) {
  return spec.reward(spec.index_of(image_id), vocab.decode_tokens(ids));
}

std::size_t sample_beam_index(std::span<const double> log_probs, Rng& rng, BeamSampling mode) {
  if (log_probs.empty()) throw std::invalid_argument("sample_beam_index: empty beam");
  if (mode == BeamSampling::uniform) {
    return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(log_probs.size()) - 1));
  }
  double mx = log_probs[0];
  for (double v : log_probs) mx = std::max(mx, v);
  std::vector<double> w;
  double z = 0;
  for (double v : log_probs) {
    w.push_back(std::exp(v - mx));
    z += w.back();
  }
  double u = uniform(rng) * z;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

ScstSample restricted_beam_sample(const Captioner& model, const Tensor& features, std::size_t beam, Rng& rng,
                                  BeamSampling mode, const DecodeOptions& options) {
  if (beam < 2) throw std::invalid_argument("restricted_beam_sample: beam must be >= 2");
  ScstSample s;
  s.beam = beam_search(model, features, beam, options);
  if (s.beam.size() > beam) s.beam.resize(beam);
  s.baseline = greedy_decode(model, features, options);
  std::vector<double> lps;
  for (const auto& h : s.beam) lps.push_back(h.log_prob);
  s.sample_index = sample_beam_index(lps, rng, mode);
  s.sample = s.beam[s.sample_index];
  return s;
}

Hypothesis sample_sequence(const Captioner& model, const Tensor& features, Rng& rng, std::size_t max_len) {
  Hypothesis h;
  for (std::size_t t = 0; t < max_len; ++t) {
    const auto lp = next_token_log_probs(model, features, h.ids);
    double u = uniform(rng);
    std::size_t pick = lp.size() - 1;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      const double p = std::exp(lp[v]);
      if (u < p) {
        pick = v;
        break;
      }
      u -= p;
    }
    h.ids.push_back(pick);
    h.log_prob += lp[pick];
    if (pick == Vocabulary::kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

double scst_gradient(Captioner& model, const Tensor& features, std::span<const std::size_t> sample,
                     double advantage) {
  if (sample.empty()) return 0.0;
  Graph g;
  const CaptionerVars p = model.bind(g);
  const ImageVars img[] = {bind_image(g, p, features)};
  const CaptionExample ex[] = {{0, {sample.begin(), sample.end()}}};
  const double w[] = {advantage};
  const Var loss = xe_loss(g, p, img, ex, w);
  g.backward(loss);
  return g.value(loss)[0];
}

std::vector<ScstLogRow> scst_epoch(Captioner& model, std::span<const Tensor> images, const RewardSpec& spec,
                                   const Vocabulary& vocab, const ScstConfig& config) {
  if (images.size() != spec.size()) throw std::invalid_argument("scst_epoch: one feature set per reward image");
  std::ofstream csv;
  if (!config.reward_csv.empty()) {
    csv.open(config.reward_csv);
    if (!csv) throw DataError("cannot write reward log " + config.reward_csv.string());
    csv << "iteration,image_id,r_sample,r_greedy,advantage\n";
  }
  Rng rng(config.seed);
  std::vector<ScstLogRow> log;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Hypothesis sample, baseline;
    double rs = 0, rg = 0;
    try {
      if (config.unrestricted) {
        sample = sample_sequence(model, images[i], rng, config.decode.max_len);
        baseline = greedy_decode(model, images[i], config.decode);
      } else {
        ScstSample s = restricted_beam_sample(model, images[i], config.beam, rng, config.sampling, config.decode);
        sample = std::move(s.sample);
        baseline = std::move(s.baseline);
      }
      rs = spec.reward(i, vocab.decode_tokens(sample.ids));
      rg = spec.reward(i, vocab.decode_tokens(baseline.ids));
      model.params().zero_grad();
      const double loss = scst_gradient(model, images[i], sample.ids, rs - rg);
      if (!std::isfinite(loss)) throw NumericError("non-finite surrogate loss");
    } catch (const NumericError& e) {
      throw NumericError("scst_epoch: non-finite loss at iteration " + std::to_string(i) + " (" + e.what() + ")");
    }
    const double adv = rs - rg;
    if (model.params().any_grad()) sgd_momentum_step(model.params(), config.lr, 0.0);
    log.push_back({i, spec.image_id(i), rs, rg, adv});
    if (csv) csv << i << ',' << spec.image_id(i) << ',' << rs << ',' << rg << ',' << adv << '\n';
  }
  return log;
}

}  // namespace updown
