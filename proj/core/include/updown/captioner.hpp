#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "updown/graph.hpp"
#include "updown/param_store.hpp"

namespace updown {

struct CaptionerConfig {
  std::size_t vocab = 0;  // |Σ| including the reserved ids
  std::size_t M = 64;     // hidden units per LSTM
  std::size_t H = 32;     // attention hidden size
  std::size_t E = 32;     // word embedding size
  std::size_t D = 64;     // image feature size
  std::size_t beam_size = 5;
  std::size_t max_len = 16;

  /// Throws ConfigError if any size is zero or vocab leaves no word ids.
  void validate() const;

  static CaptionerConfig desk(std::size_t vocab, std::size_t feature_dim = 64);
  /// M = E = 1000, H = 512, D = 2048.
  static CaptionerConfig paper(std::size_t vocab);
};

// Graph handles of every captioner parameter, bound once per graph.
struct LstmVars {
  Var w_ih, w_hh, b;
};

struct CaptionerVars {
  Var embed;  // |Σ| x E, row v is the embedding of word v
  LstmVars att_lstm;   // input [h2, v̄, W_e Π_t]
  LstmVars lang_lstm;  // input [v̂, h1]
  Var w_va, w_ha, w_a;
  Var w_p, b_p;
};

struct LstmState {
  Var h, c;
};

/// Standard LSTM over a batch of rows. Gate blocks in w_ih / w_hh / b are
/// stacked as [input, forget, output, candidate], each `hidden` rows tall.
LstmState lstm_cell(Graph& g, Var x, const LstmState& prev, const LstmVars& w);

struct Attention {
  Var alpha;  // 1 x k
  Var v_hat;  // 1 x D
};

/// Soft attention of one query row over the k feature rows of one image.
/// `projected` is features * W_vaᵀ (k x H), shared across decoding steps.
Attention attend(Graph& g, Var features, Var projected, Var h1_row, Var w_ha, Var w_a);

/// Per-image graph handles: features, their projection and their mean.
struct ImageVars {
  Var features, projected, mean;
};

ImageVars bind_image(Graph& g, const CaptionerVars& p, const Tensor& features);

struct StepVars {
  Var h1, c1, h2, c2;
};

struct StepOutput {
  StepVars state;
  Var log_probs;  // B x |Σ|
  std::vector<Var> alphas;  // per row, 1 x k
};

/// One decoding step for B rows. Row b reads image images[image_of_row[b]]
/// and previous word prev_ids[b].
StepOutput captioner_step(Graph& g, const CaptionerVars& p, const StepVars& state,
                          std::span<const std::size_t> prev_ids, std::span<const ImageVars> images,
                          std::span<const std::size_t> image_of_row);

/// A target sequence: words after BOS, ending with EOS. PAD positions are
/// masked out of the loss.
struct CaptionExample {
  std::size_t image = 0;
  std::vector<std::size_t> target;
};

class Captioner {
 public:
  /// Glorot-uniform weights, zero biases, small uniform embeddings.
  explicit Captioner(const CaptionerConfig& config, std::uint64_t seed = 1);

  const CaptionerConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Binds every parameter as a leaf of `g`. Decoding graphs never run
  /// backward, so binding a const model for inference only reads it.
  CaptionerVars bind(Graph& g) const;

  StepVars initial_state(Graph& g, std::size_t rows) const;

  void zero_parameters();

  void save(const std::filesystem::path& path, bool with_optimizer_state = false) const;
  /// Loads a checkpoint written by save into a model of the same config.
  void load(const std::filesystem::path& path);
  /// Builds a model from the sizes recorded in a checkpoint and loads it.
  /// Throws DataError if the sizes are missing.
  static Captioner from_checkpoint(const std::filesystem::path& path);

 private:
  CaptionerConfig config_;
  mutable ParamStore params_;
};

/// Σ_b weights[b] · (−Σ_t log p(y*_t | y*_<t, V)) with teacher forcing.
/// Throws std::invalid_argument on an empty target.
Var xe_loss(Graph& g, const CaptionerVars& p, std::span<const ImageVars> images,
            std::span<const CaptionExample> examples, std::span<const double> weights);

/// Mean per-sequence cross-entropy of a batch; convenience wrapper.
Var xe_loss(Graph& g, const Captioner& model, std::span<const Tensor> images,
            std::span<const CaptionExample> examples);

/// Σ_t log p(ids_t | ids_<t, V); `ids` excludes BOS.
double sequence_log_prob(const Captioner& model, const Tensor& features, std::span<const std::size_t> ids);

struct DecodeOptions {
  std::size_t max_len = 16;
  /// A word equal to the hypothesis's previous word is never emitted.
  bool no_repeat = true;
  bool suppress_unk = true;
};

struct Hypothesis {
  /// Generated ids; ends with EOS when finished.
  std::vector<std::size_t> ids;
  double log_prob = 0.0;
  bool finished = false;
  /// One attention row per generated word (EOS excluded).
  std::vector<std::vector<double>> attention;

  std::vector<std::size_t> words() const;
};

Hypothesis greedy_decode(const Captioner& model, const Tensor& features, const DecodeOptions& options = {});

/// Length-synchronous beam search. Each step keeps the `beam` best
/// continuations over all live hypotheses; EOS continuations retire to a
/// pool. Unfinished hypotheses at max_len join the pool, which is returned
/// sorted by raw summed log-prob. Score ties prefer a word over EOS, then
/// the lower id.
std::vector<Hypothesis> beam_search(const Captioner& model, const Tensor& features, std::size_t beam,
                                    const DecodeOptions& options = {});

/// Per-step log-probs (1 x |Σ|) for a given prefix; `prefix` excludes BOS.
std::vector<double> next_token_log_probs(const Captioner& model, const Tensor& features,
                                         std::span<const std::size_t> prefix);

/// Teacher-forced attention over `words` (no BOS/EOS): row t is the weighting
/// used when predicting words[t].
std::vector<std::vector<double>> caption_attention(const Captioner& model, const Tensor& features,
                                                   std::span<const std::size_t> words);

struct XeSchedule {
  double lr0 = 0.01;
  std::size_t total_iterations = 60000;
  std::size_t batch_size = 100;
  double momentum = 0.9;
  /// Global gradient-norm clip; 0 disables.
  double clip = 0.0;
  std::uint64_t seed = 1;
  /// Loss curve rows (iteration, lr, loss); empty path disables.
  std::filesystem::path curve_csv;
  /// Called every `check_every` iterations after the update; returning
  /// true stops training.
  std::function<bool(std::size_t iteration)> stop;
  std::size_t check_every = 100;
  /// Resume point: earlier iterations only advance the batch order.
  std::size_t start_iteration = 0;

  static XeSchedule paper() { return {}; }
};

struct LossPoint {
  std::size_t iteration;
  double lr;
  double loss;
};

struct XeResult {
  std::vector<LossPoint> curve;
  std::size_t iterations = 0;
  bool stopped_early = false;
};

/// Momentum SGD with lr = lr0 · (1 − it / total). Throws NumericError naming
/// the iteration if the loss becomes non-finite.
XeResult train_xe(Captioner& model, std::span<const Tensor> images, std::span<const CaptionExample> examples,
                  const XeSchedule& schedule);

/// Position-wise agreement of greedy decodes with the targets over
/// Σ max(len(decoded), len(target)).
double token_reconstruction(const Captioner& model, std::span<const Tensor> images,
                            std::span<const CaptionExample> examples, const DecodeOptions& options = {});

}  // namespace updown
