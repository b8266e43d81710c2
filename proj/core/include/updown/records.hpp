#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace updown {

struct CaptionRecord {
  std::string image_id;
  std::vector<std::string> captions;
  /// Region file, relative paths resolved against the JSONL file's directory.
  std::string feature_path;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

enum class QuestionType { yes_no, number, other };

std::string to_string(QuestionType t);
QuestionType question_type_from_string(const std::string& s);
/// Type implied by an answer: yes/no, digits, or anything else.
QuestionType infer_question_type(const std::string& answer);

struct QARecord {
  static constexpr std::size_t kNumAnswers = 10;

  std::string question_id;
  std::string image_id;
  std::string question;
  /// Exactly kNumAnswers annotator answers.
  std::vector<std::string> answers;
  std::string feature_path;
  QuestionType type = QuestionType::other;
  /// The source had fewer than kNumAnswers answers and was padded by cycling.
  bool answers_padded = false;

  friend bool operator==(const QARecord&, const QARecord&) = default;
};

/// Most frequent annotator answer (ties: first seen).
std::string majority_answer(const QARecord& r);

struct LoadOptions {
  /// Fail when a record's feature file does not exist.
  bool check_features = true;
};

/// Schema: {"image_id", "captions": [...], "feature_path"}. Errors are
/// DataError with the 1-based line number.
std::vector<CaptionRecord> load_captions_jsonl(const std::filesystem::path& path,
                                               const LoadOptions& options = {});
/// Schema: {"image_id", "question", "answers": [10], "feature_path"} plus
/// optional "question_id" and "question_type" ("yes/no" | "number" | "other").
std::vector<QARecord> load_qa_jsonl(const std::filesystem::path& path, const LoadOptions& options = {});

void write_captions_jsonl(const std::filesystem::path& path, const std::vector<CaptionRecord>& records);
void write_qa_jsonl(const std::filesystem::path& path, const std::vector<QARecord>& records);

/// Resolves a record's feature path relative to the directory of its JSONL file.
std::filesystem::path resolve_feature_path(const std::filesystem::path& jsonl_path,
                                           const std::string& feature_path);

}  // namespace updown
