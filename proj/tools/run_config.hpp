#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "updown/captioner.hpp"
#include "updown/regions.hpp"
#include "updown/scst.hpp"
#include "updown/synthetic.hpp"
#include "updown/vqa.hpp"

namespace updown::cli {

/// Every tunable of the command-line pipeline. Serialized as flat
/// "key = value" lines; '#' starts a comment.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;

  std::size_t synth_dim = 64;
  double synth_noise = 0.1;
  std::size_t synth_grid = 10;
  std::size_t synth_min_objects = 1;
  std::size_t synth_max_objects = 6;

  double select_conf = 0.2;
  double select_nms = 0.3;
  std::size_t select_max = 100;
  std::size_t select_top_k = 36;

  std::size_t caption_M = 64;
  std::size_t caption_H = 32;
  std::size_t caption_E = 32;
  std::size_t caption_min_count = 5;
  std::size_t beam = 5;
  std::size_t max_len = 16;

  double xe_lr = 0.1;
  std::size_t xe_iterations = 3000;
  std::size_t xe_batch = 20;
  double xe_momentum = 0.9;
  double xe_clip = 5.0;

  double scst_lr = 1e-4;
  std::size_t scst_beam = 5;
  std::string scst_sampling = "proportional";
  std::string scst_metric = "cider_d";
  bool scst_unrestricted = false;

  std::size_t vqa_E = 32;
  std::size_t vqa_G = 64;
  std::size_t vqa_hidden = 64;
  std::size_t vqa_epochs = 50;
  std::size_t vqa_batch = 4;
  double vqa_rho = 0.95;
  double vqa_eps = 1e-6;
  double vqa_step_scale = 10.0;
  std::size_t vqa_patience = 5;
  std::size_t vqa_answer_min_count = 9;
  double vqa_val_fraction = 0.1;
  std::string vqa_word_vectors;

  /// Defaults of "desk" or "paper". Throws ConfigError otherwise.
  static RunConfig for_profile(const std::string& profile);

  /// Applies one "key=value" assignment; returns an error message or "".
  std::string set(const std::string& key, const std::string& value);
  /// Parses a config file. Errors from every bad line are collected.
  void apply_file(const std::filesystem::path& path, std::vector<std::string>& errors);
  /// Field-by-field range checks; one message per offending field.
  std::vector<std::string> validate() const;

  std::string to_string() const;
  static std::vector<std::string> keys();

  SynthOptions synth_options(std::size_t scenes) const;
  SelectionConfig selection() const;
  CaptionerConfig captioner(std::size_t vocab, std::size_t feature_dim) const;
  XeSchedule xe_schedule() const;
  ScstConfig scst() const;
  VqaConfig vqa(std::size_t question_vocab, std::size_t answers, std::size_t feature_dim) const;
  VqaTrainConfig vqa_training() const;
  DecodeOptions decode() const;
};

/// Resolves profile, then config file, then KEY=VALUE overrides. Throws
/// ConfigError listing every problem.
RunConfig load_run_config(const std::string& profile, const std::filesystem::path& file,
                          const std::vector<std::string>& overrides);

}  // namespace updown::cli
