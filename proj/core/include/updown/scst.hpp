#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "updown/captioner.hpp"
#include "updown/init.hpp"
#include "updown/metrics.hpp"
#include "updown/vocabulary.hpp"

namespace updown {

enum class RewardMetric { cider_d, bleu4 };

RewardMetric reward_metric_from_string(const std::string& s);

/// Reward function of the self-critical objective: a caption metric against
/// the references of each training image.
class RewardSpec {
 public:
  /// Throws std::invalid_argument if an image has no references, ids repeat,
  /// or CIDEr-D is requested for fewer than 2 images.
  RewardSpec(RewardMetric metric, std::vector<std::string> image_ids, std::vector<std::vector<Tokens>> references);

  RewardMetric metric() const { return metric_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& image_id(std::size_t i) const { return ids_.at(i); }
  /// Throws std::out_of_range for unknown ids.
  std::size_t index_of(const std::string& image_id) const;

  double reward(std::size_t image, const Tokens& candidate) const;

 private:
  RewardMetric metric_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<Tokens>> refs_;
  std::unique_ptr<CiderD> cider_;
};

/// Metric score of a decoded candidate (BOS/EOS/PAD dropped).
double sequence_reward(const RewardSpec& spec, const std::string& image_id, std::span<const std::size_t> ids,
                       const Vocabulary& vocab);

enum class BeamSampling { proportional, uniform };

/// Index into `log_probs` drawn with probability ∝ exp(log_prob), or
/// uniformly.
std::size_t sample_beam_index(std::span<const double> log_probs, Rng& rng,
                              BeamSampling mode = BeamSampling::proportional);

struct ScstSample {
  Hypothesis sample;
  Hypothesis baseline;  // greedy decode
  std::vector<Hypothesis> beam;
  std::size_t sample_index = 0;
};

/// Samples one caption from the top `beam` beam-search entries; the baseline
/// is the greedy decode. Throws std::invalid_argument for beam < 2.
ScstSample restricted_beam_sample(const Captioner& model, const Tensor& features, std::size_t beam, Rng& rng,
                                  BeamSampling mode = BeamSampling::proportional,
                                  const DecodeOptions& options = {});

/// Ancestral sample from the full softmax at every step, stopping at EOS or
/// max_len. Used for the unrestricted estimator; nothing is suppressed.
Hypothesis sample_sequence(const Captioner& model, const Tensor& features, Rng& rng, std::size_t max_len);

/// Accumulates −advantage · ∇ log p(sample) into the parameter gradients and
/// returns the surrogate loss advantage · (−log p(sample)).
double scst_gradient(Captioner& model, const Tensor& features, std::span<const std::size_t> sample,
                     double advantage);

struct ScstConfig {
  double lr = 1e-4;
  std::size_t beam = 5;
  BeamSampling sampling = BeamSampling::proportional;
  /// Sample from the full softmax instead of the beam.
  bool unrestricted = false;
  std::uint64_t seed = 1;
  DecodeOptions decode;
  /// Rows (iteration, image_id, r_sample, r_greedy, advantage); empty disables.
  std::filesystem::path reward_csv;
};

struct ScstLogRow {
  std::size_t iteration;
  std::string image_id;
  double r_sample;
  double r_greedy;
  double advantage;
};

/// One pass over the images in order, one sample per image, plain SGD on the
/// self-critical gradient. images[i] belongs to spec.image_id(i). Throws
/// NumericError naming the iteration on a non-finite loss.
std::vector<ScstLogRow> scst_epoch(Captioner& model, std::span<const Tensor> images, const RewardSpec& spec,
                                   const Vocabulary& vocab, const ScstConfig& config);

}  // namespace updown
