#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "updown/graph.hpp"
#include "updown/optim.hpp"
#include "updown/param_store.hpp"
#include "updown/vocabulary.hpp"

namespace updown {

/// Questions are cut to this many words before encoding.
inline constexpr std::size_t kMaxQuestionWords = 14;

struct VqaConfig {
  std::size_t question_vocab = 0;  // including the reserved ids
  std::size_t num_answers = 0;
  std::size_t E = 32;    // word embedding size
  std::size_t G = 64;    // GRU hidden size
  std::size_t A = 64;    // attention block width
  std::size_t J = 64;    // joint embedding width
  std::size_t O = 64;    // output block width
  std::size_t D = 64;    // image feature size

  /// Throws ConfigError on zero sizes.
  void validate() const;

  static VqaConfig desk(std::size_t question_vocab, std::size_t num_answers, std::size_t feature_dim = 64);
  /// E = 300, G = A = J = O = 512, D = 2048.
  static VqaConfig paper(std::size_t question_vocab, std::size_t num_answers);
};

/// y = tanh(W x + b) ∘ σ(W' x + b'), applied to every row of x.
struct GatedTanhVars {
  Var w, w_gate, b, b_gate;
};

Var gated_tanh(Graph& g, Var x, const GatedTanhVars& p);

/// Gate blocks in w_ih / w_hh / b are stacked as [update, reset, candidate].
struct GruVars {
  Var w_ih, w_hh, b;
};

/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// h̃ = tanh(W x + U (r ∘ h) + b), h' = (1 − z) ∘ h + z ∘ h̃.
Var gru_cell(Graph& g, Var x, Var h, const GruVars& w);

struct VqaVars {
  Var embed;
  GruVars gru;
  GatedTanhVars f_a, f_q, f_v, f_o;
  Var w_a;  // 1 x A
  Var w_o;  // answers x O
};

/// Final GRU state (1 x G) over the first kMaxQuestionWords ids. An empty
/// question runs one PAD step.
Var encode_question(Graph& g, const VqaVars& p, std::span<const std::size_t> ids);

struct VqaAttention {
  Var alpha;  // 1 x k
  Var v_hat;  // 1 x D
};

/// a_i = w_aᵀ f_a([v_i, q]), softmax over the k regions.
VqaAttention vqa_attend(Graph& g, const VqaVars& p, Var features, Var q);

/// σ(W_o f_o(f_q(q) ∘ f_v(v̂))): independent per-answer scores (1 x answers).
Var vqa_scores(Graph& g, const VqaVars& p, Var q, Var v_hat);

/// Mean over answers of the binary cross-entropy against soft targets.
/// Throws std::invalid_argument for targets outside [0, 1].
Var vqa_loss(Graph& g, Var scores, const Tensor& targets);

/// Answer strings kept for the output layer.
class AnswerVocab {
 public:
  AnswerVocab() = default;

  /// Keeps normalized answers occurring at least `min_occurrences` times,
  /// ordered by descending count, then lexicographically.
  static AnswerVocab build(std::span<const std::string> answers, std::size_t min_occurrences = 9);

  std::size_t size() const { return answers_.size(); }
  std::optional<std::size_t> id(std::string_view answer) const;
  const std::string& answer(std::size_t id) const { return answers_.at(id); }
  std::size_t count(std::size_t id) const { return counts_.at(id); }

  /// One "answer<TAB>count" line per id.
  void save(const std::filesystem::path& path) const;
  static AnswerVocab load(const std::filesystem::path& path);

  friend bool operator==(const AnswerVocab& a, const AnswerVocab& b) {
    return a.answers_ == b.answers_ && a.counts_ == b.counts_;
  }

 private:
  void push(std::string answer, std::size_t count);

  std::vector<std::string> answers_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// Per-answer soft target min(matches / 3, 1) over the annotator answers.
Tensor soft_targets(const AnswerVocab& vocab, std::span<const std::string> annotator_answers);

/// Word ids of a question (no BOS/EOS); unknown words map to UNK.
std::vector<std::size_t> encode_question_text(const Vocabulary& vocab, std::string_view question);

class VqaModel {
 public:
  VqaModel(const VqaConfig& config, std::uint64_t seed);

  const VqaConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  VqaVars bind(Graph& g) const;

  /// Overwrites embedding rows from a plain-text "word v1 v2 ..." file.
  /// Returns the number of rows replaced. Throws DataError on a malformed
  /// line or a dimension other than E.
  std::size_t load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab);

  void save(const std::filesystem::path& path, bool with_optimizer_state = false) const;
  void load(const std::filesystem::path& path);
  /// Builds a model from the sizes recorded in a checkpoint and loads it.
  static VqaModel from_checkpoint(const std::filesystem::path& path);

 private:
  VqaConfig config_;
  mutable ParamStore params_;
};

struct VqaExample {
  std::size_t image;
  std::vector<std::size_t> question;
  std::vector<std::string> answers;  // annotator answers
  std::string question_id;
};

struct VqaPrediction {
  std::string question_id;
  std::string answer;
  double score = 0.0;
  std::vector<double> alpha;
};

VqaPrediction vqa_predict(const VqaModel& model, const AnswerVocab& answers, const Tensor& features,
                          std::span<const std::size_t> question);

/// Mean VQA accuracy of the argmax answers.
double vqa_dataset_accuracy(const VqaModel& model, const AnswerVocab& answers, std::span<const Tensor> images,
                            std::span<const VqaExample> examples);

struct VqaTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  AdaDeltaConfig adadelta;
  /// Epochs without a validation improvement before stopping; 0 disables.
  std::size_t patience = 5;
  /// Stop once training accuracy reaches this value; 0 disables.
  double target_train_accuracy = 0.0;
  std::uint64_t seed = 1;
  /// Rows (epoch, loss, train_accuracy, val_accuracy); empty disables.
  std::filesystem::path curve_csv;

  /// Small batches and a 10x AdaDelta step for the toy corpora.
  static VqaTrainConfig desk() {
    VqaTrainConfig c;
    c.batch_size = 4;
    c.adadelta.scale = 10.0;
    return c;
  }
};

struct VqaEpoch {
  std::size_t epoch;
  double loss;
  double train_accuracy;
  double val_accuracy;  // NaN without a validation set
};

struct VqaTrainResult {
  std::vector<VqaEpoch> curve;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// AdaDelta over shuffled mini-batches. With a validation set the
/// parameters of the best validation epoch are restored at the end. Throws
/// NumericError naming the epoch on a non-finite loss.
VqaTrainResult train_vqa(VqaModel& model, const AnswerVocab& answers, std::span<const Tensor> images,
                         std::span<const VqaExample> train, std::span<const VqaExample> val,
                         const VqaTrainConfig& config);

void write_predictions_jsonl(const std::filesystem::path& path, std::span<const VqaPrediction> predictions);

}  // namespace updown
