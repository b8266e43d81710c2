#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include "updown/errors.hpp"

namespace updown::cli {
namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed shares the size_t slot");
using Slot = std::variant<std::string*, std::size_t*, double*, bool*>;

struct Field {
  const char* key;
  Slot slot;
};

std::vector<Field> fields(RunConfig& c) {
  return {
      {"profile", &c.profile},
      {"seed", &c.seed},
      {"synth.dim", &c.synth_dim},
      {"synth.noise", &c.synth_noise},
      {"synth.grid", &c.synth_grid},
      {"synth.min_objects", &c.synth_min_objects},
      {"synth.max_objects", &c.synth_max_objects},
      {"select.conf", &c.select_conf},
      {"select.nms", &c.select_nms},
      {"select.max", &c.select_max},
      {"select.top_k", &c.select_top_k},
      {"caption.M", &c.caption_M},
      {"caption.H", &c.caption_H},
      {"caption.E", &c.caption_E},
      {"caption.min_count", &c.caption_min_count},
      {"caption.beam", &c.beam},
      {"caption.max_len", &c.max_len},
      {"xe.lr", &c.xe_lr},
      {"xe.iterations", &c.xe_iterations},
      {"xe.batch", &c.xe_batch},
      {"xe.momentum", &c.xe_momentum},
      {"xe.clip", &c.xe_clip},
      {"scst.lr", &c.scst_lr},
      {"scst.beam", &c.scst_beam},
      {"scst.sampling", &c.scst_sampling},
      {"scst.metric", &c.scst_metric},
      {"scst.unrestricted", &c.scst_unrestricted},
      {"vqa.E", &c.vqa_E},
      {"vqa.G", &c.vqa_G},
      {"vqa.hidden", &c.vqa_hidden},
      {"vqa.epochs", &c.vqa_epochs},
      {"vqa.batch", &c.vqa_batch},
      {"vqa.rho", &c.vqa_rho},
      {"vqa.eps", &c.vqa_eps},
      {"vqa.step_scale", &c.vqa_step_scale},
      {"vqa.patience", &c.vqa_patience},
      {"vqa.answer_min_count", &c.vqa_answer_min_count},
      {"vqa.val_fraction", &c.vqa_val_fraction},
      {"vqa.word_vectors", &c.vqa_word_vectors},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
bool parse_number(const std::string& v, T& out) {
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  return r.ec == std::errc() && r.ptr == v.data() + v.size();
}

bool parse_double(const std::string& v, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(v, &used);
    return used == v.size();
  } catch (const std::logic_error&) {
    return false;
  }
}

std::string format(const Slot& slot) {
  std::ostringstream ss;
  ss.precision(17);
  std::visit(
      [&](auto* p) {
        if constexpr (std::is_same_v<std::remove_pointer_t<decltype(p)>, bool>) {
          ss << (*p ? "true" : "false");
        } else {
          ss << *p;
        }
      },
      slot);
  return ss.str();
}

}  // namespace

RunConfig RunConfig::for_profile(const std::string& profile) {
  RunConfig c;
  if (profile == "desk") return c;
  if (profile != "paper") throw ConfigError("profile: expected desk or paper, got '" + profile + "'");
  c.profile = "paper";
  c.synth_dim = 2048;
  c.caption_M = 1000;
  c.caption_E = 1000;
  c.caption_H = 512;
  c.xe_lr = 0.01;
  c.xe_iterations = 60000;
  c.xe_batch = 100;
  c.xe_clip = 0.0;
  c.vqa_E = 300;
  c.vqa_G = 512;
  c.vqa_hidden = 512;
  c.vqa_batch = 32;
  c.vqa_step_scale = 1.0;
  return c;
}

std::string RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  for (auto& f : fields(*this)) {
    if (key != f.key) continue;
    bool ok = true;
    std::string expected;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
          } else if constexpr (std::is_same_v<T, bool>) {
            expected = "true or false";
            if (value == "true" || value == "1") *p = true;
            else if (value == "false" || value == "0") *p = false;
            else ok = false;
          } else if constexpr (std::is_same_v<T, double>) {
            expected = "a number";
            ok = parse_double(value, *p);
          } else {
            expected = "a non-negative integer";
            ok = parse_number(value, *p);
          }
        },
        f.slot);
    return ok ? "" : key + ": expected " + expected + ", got '" + value + "'";
  }
  return key + ": unknown key";
}

void RunConfig::apply_file(const std::filesystem::path& path, std::vector<std::string>& errors) {
  std::ifstream in(path);
  if (!in) {
    errors.push_back("cannot read config file " + path.string());
    return;
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    if (key == "profile") continue;  // resolved before the file is applied
    if (auto e = set(key, line.substr(eq + 1)); !e.empty()) errors.push_back(where + e);
  }
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> e;
  auto positive = [&](const char* key, double v) {
    if (!(v > 0)) e.push_back(std::string(key) + ": must be positive");
  };
  auto in_unit = [&](const char* key, double v, bool closed_top) {
    if (!(v >= 0 && (closed_top ? v <= 1 : v < 1))) {
      e.push_back(std::string(key) + (closed_top ? ": must lie in [0, 1]" : ": must lie in [0, 1)"));
    }
  };
  if (profile != "desk" && profile != "paper") e.push_back("profile: expected desk or paper");
  if (synth_dim < 24) e.push_back("synth.dim: must be at least 24");
  if (synth_noise < 0) e.push_back("synth.noise: must be non-negative");
  positive("synth.grid", static_cast<double>(synth_grid));
  positive("synth.min_objects", static_cast<double>(synth_min_objects));
  if (synth_max_objects < synth_min_objects) e.push_back("synth.max_objects: must be >= synth.min_objects");
  in_unit("select.conf", select_conf, true);
  in_unit("select.nms", select_nms, true);
  positive("select.max", static_cast<double>(select_max));
  positive("select.top_k", static_cast<double>(select_top_k));
  positive("caption.M", static_cast<double>(caption_M));
  positive("caption.H", static_cast<double>(caption_H));
  positive("caption.E", static_cast<double>(caption_E));
  positive("caption.min_count", static_cast<double>(caption_min_count));
  positive("caption.beam", static_cast<double>(beam));
  positive("caption.max_len", static_cast<double>(max_len));
  positive("xe.lr", xe_lr);
  positive("xe.iterations", static_cast<double>(xe_iterations));
  positive("xe.batch", static_cast<double>(xe_batch));
  in_unit("xe.momentum", xe_momentum, false);
  if (xe_clip < 0) e.push_back("xe.clip: must be non-negative (0 disables)");
  if (scst_lr < 0) e.push_back("scst.lr: must be non-negative");
  if (scst_beam < 2) e.push_back("scst.beam: must be at least 2");
  if (scst_sampling != "proportional" && scst_sampling != "uniform") {
    e.push_back("scst.sampling: expected proportional or uniform");
  }
  if (scst_metric != "cider_d" && scst_metric != "bleu4") e.push_back("scst.metric: expected cider_d or bleu4");
  positive("vqa.E", static_cast<double>(vqa_E));
  positive("vqa.G", static_cast<double>(vqa_G));
  positive("vqa.hidden", static_cast<double>(vqa_hidden));
  positive("vqa.epochs", static_cast<double>(vqa_epochs));
  positive("vqa.batch", static_cast<double>(vqa_batch));
  in_unit("vqa.rho", vqa_rho, false);
  positive("vqa.eps", vqa_eps);
  positive("vqa.step_scale", vqa_step_scale);
  positive("vqa.answer_min_count", static_cast<double>(vqa_answer_min_count));
  in_unit("vqa.val_fraction", vqa_val_fraction, false);
  return e;
}

std::string RunConfig::to_string() const {
  RunConfig copy = *this;
  std::string out;
  for (const auto& f : fields(copy)) out += std::string(f.key) + " = " + format(f.slot) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> k;
  for (const auto& f : fields(c)) k.emplace_back(f.key);
  return k;
}

SynthOptions RunConfig::synth_options(std::size_t scenes) const {
  SynthOptions o;
  o.num_scenes = scenes;
  o.seed = seed;
  o.scene.min_objects = synth_min_objects;
  o.scene.max_objects = synth_max_objects;
  o.features.dim = synth_dim;
  o.features.noise = synth_noise;
  o.grid.grid = synth_grid;
  return o;
}

SelectionConfig RunConfig::selection() const { return {select_conf, select_nms, select_max}; }

CaptionerConfig RunConfig::captioner(std::size_t vocab, std::size_t feature_dim) const {
  CaptionerConfig c = CaptionerConfig::desk(vocab, feature_dim);
  c.M = caption_M;
  c.H = caption_H;
  c.E = caption_E;
  c.beam_size = beam;
  c.max_len = max_len;
  return c;
}

XeSchedule RunConfig::xe_schedule() const {
  XeSchedule s;
  s.lr0 = xe_lr;
  s.total_iterations = xe_iterations;
  s.batch_size = xe_batch;
  s.momentum = xe_momentum;
  s.clip = xe_clip;
  s.seed = seed;
  return s;
}

ScstConfig RunConfig::scst() const {
  ScstConfig c;
  c.lr = scst_lr;
  c.beam = scst_beam;
  c.sampling = scst_sampling == "uniform" ? BeamSampling::uniform : BeamSampling::proportional;
  c.unrestricted = scst_unrestricted;
  c.seed = seed;
  c.decode = decode();
  return c;
}

VqaConfig RunConfig::vqa(std::size_t question_vocab, std::size_t answers, std::size_t feature_dim) const {
  VqaConfig c = VqaConfig::desk(question_vocab, answers, feature_dim);
  c.E = vqa_E;
  c.G = vqa_G;
  c.A = c.J = c.O = vqa_hidden;
  return c;
}

VqaTrainConfig RunConfig::vqa_training() const {
  VqaTrainConfig c;
  c.epochs = vqa_epochs;
  c.batch_size = vqa_batch;
  c.adadelta.rho = vqa_rho;
  c.adadelta.eps = vqa_eps;
  c.adadelta.scale = vqa_step_scale;
  c.patience = vqa_patience;
  c.seed = seed;
  return c;
}

DecodeOptions RunConfig::decode() const {
  DecodeOptions d;
  d.max_len = max_len;
  return d;
}

RunConfig load_run_config(const std::string& profile, const std::filesystem::path& file,
                          const std::vector<std::string>& overrides) {
  std::vector<std::string> errors;
  std::string chosen = profile;
  // a profile named in the file applies unless the command line names one
  if (chosen.empty() && !file.empty()) {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos && trim(line.substr(0, eq)) == "profile") chosen = trim(line.substr(eq + 1));
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq != std::string::npos && trim(o.substr(0, eq)) == "profile") chosen = trim(o.substr(eq + 1));
  }
  if (chosen.empty()) chosen = "desk";
  RunConfig c;
  try {
    c = RunConfig::for_profile(chosen);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid configuration:\n  ") + e.what());
  }
  if (!file.empty()) c.apply_file(file, errors);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      errors.push_back("--set " + o + ": expected KEY=VALUE");
      continue;
    }
    const std::string key = trim(o.substr(0, eq));
    if (key == "profile") continue;
    if (auto e = c.set(key, o.substr(eq + 1)); !e.empty()) errors.push_back(e);
  }
  const auto invalid = c.validate();
  errors.insert(errors.end(), invalid.begin(), invalid.end());
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

}  // namespace updown::cli
