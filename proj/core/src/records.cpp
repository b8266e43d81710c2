#include "updown/records.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

#include "updown/errors.hpp"

namespace updown {

using nlohmann::json;

std::string to_string(QuestionType t) {
  switch (t) {
    case QuestionType::yes_no: return "yes/no";
    case QuestionType::number: return "number";
    case QuestionType::other: return "other";
  }
  return "other";
}

QuestionType question_type_from_string(const std::string& s) {
  if (s == "yes/no") return QuestionType::yes_no;
  if (s == "number") return QuestionType::number;
  if (s == "other") return QuestionType::other;
  throw DataError("unknown question type '" + s + "'");
}

QuestionType infer_question_type(const std::string& answer) {
  if (answer == "yes" || answer == "no") return QuestionType::yes_no;
  if (!answer.empty() && std::all_of(answer.begin(), answer.end(), [](unsigned char c) { return std::isdigit(c); }))
    return QuestionType::number;
  return QuestionType::other;
}

std::string majority_answer(const QARecord& r) {
  std::map<std::string, int> counts;
  std::string best;
  int best_n = 0;
  for (const auto& a : r.answers) {
    const int n = ++counts[a];
    if (n > best_n) {
      best_n = n;
      best = a;
    }
  }
  return best;
}

std::filesystem::path resolve_feature_path(const std::filesystem::path& jsonl_path,
                                           const std::string& feature_path) {
  std::filesystem::path p(feature_path);
  if (p.is_absolute()) return p;
  return jsonl_path.parent_path() / p;
}

namespace {

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

const json& field(const json& j, const char* name) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw DataError(std::string("missing field \"") + name + "\"");
  return *it;
}

std::string string_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw DataError(std::string("field \"") + name + "\" must be a string");
  return v.get<std::string>();
}

std::vector<std::string> string_list(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array()) throw DataError(std::string("field \"") + name + "\" must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw DataError(std::string("field \"") + name + "\" must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

void check_feature(const std::filesystem::path& jsonl, const std::string& feature, const LoadOptions& o) {
  if (!o.check_features) return;
  if (!std::filesystem::exists(resolve_feature_path(jsonl, feature))) {
    throw DataError("feature file not found: " + feature);
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& j : lines) out << j.dump() << '\n';
}

}  // namespace

std::vector<CaptionRecord> load_captions_jsonl(const std::filesystem::path& path, const LoadOptions& options) {
  std::vector<CaptionRecord> out;
  for_each_line(path, [&](const json& j) {
    CaptionRecord r;
    r.image_id = string_field(j, "image_id");
    r.captions = string_list(j, "captions");
    if (r.captions.empty()) throw DataError("field \"captions\" is empty");
    r.feature_path = string_field(j, "feature_path");
    check_feature(path, r.feature_path, options);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<QARecord> load_qa_jsonl(const std::filesystem::path& path, const LoadOptions& options) {
  std::vector<QARecord> out;
  for_each_line(path, [&](const json& j) {
    QARecord r;
    r.image_id = string_field(j, "image_id");
    r.question = string_field(j, "question");
    r.answers = string_list(j, "answers");
    if (r.answers.empty()) throw DataError("field \"answers\" is empty");
    if (r.answers.size() > QARecord::kNumAnswers) {
      throw DataError("field \"answers\" has " + std::to_string(r.answers.size()) + " entries, expected 10");
    }
    if (r.answers.size() < QARecord::kNumAnswers) {
      r.answers_padded = true;
      const std::size_t n = r.answers.size();
      for (std::size_t i = n; i < QARecord::kNumAnswers; ++i) r.answers.push_back(r.answers[i % n]);
    }
    r.feature_path = string_field(j, "feature_path");
    check_feature(path, r.feature_path, options);
    r.question_id = j.contains("question_id") ? string_field(j, "question_id")
                                              : r.image_id + "_" + std::to_string(out.size());
    r.type = j.contains("question_type") ? question_type_from_string(string_field(j, "question_type"))
                                         : infer_question_type(majority_answer(r));
    out.push_back(std::move(r));
  });
  return out;
}

void write_captions_jsonl(const std::filesystem::path& path, const std::vector<CaptionRecord>& records) {
  std::vector<json> lines;
  for (const auto& r : records) {
    json j;
    j["image_id"] = r.image_id;
    j["captions"] = r.captions;
    j["feature_path"] = r.feature_path;
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
}

void write_qa_jsonl(const std::filesystem::path& path, const std::vector<QARecord>& records) {
  std::vector<json> lines;
  for (const auto& r : records) {
    json j;
    j["question_id"] = r.question_id;
    j["image_id"] = r.image_id;
    j["question"] = r.question;
    j["answers"] = r.answers;
    j["feature_path"] = r.feature_path;
    j["question_type"] = to_string(r.type);
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
}

}  // namespace updown
