#include "updown/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "updown/errors.hpp"

namespace updown {

namespace {

const char* const kReserved[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

std::string strip_terminal(std::string s, std::string_view chars) {
  for (;;) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    if (!s.empty() && chars.find(s.back()) != std::string_view::npos) {
      s.pop_back();
      continue;
    }
    return s;
  }
}

}  // namespace

std::vector<std::string> tokenize_caption(std::string_view text) {
  return split_ws(strip_terminal(lowercase(text), "."));
}

std::vector<std::string> tokenize_question(std::string_view text) {
  return split_ws(strip_terminal(lowercase(text), ".?"));
}

Vocabulary::Vocabulary() {
  for (const char* t : kReserved) push(t);
}

void Vocabulary::push(std::string token) {
  if (ids_.count(token)) throw DataError("vocabulary: duplicate token '" + token + "'");
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_streams,
                             std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& stream : token_streams)
    for (const auto& tok : stream) ++counts[lowercase(tok)];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n < min_count) continue;
    if (std::find(std::begin(kReserved), std::end(kReserved), tok) != std::end(kReserved)) continue;
    kept.emplace_back(tok, n);
  }
  // counts is a sorted map, so a stable sort by count keeps lexicographic ties
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [tok, n] : kept) v.push(tok);
  return v;
}

Vocabulary Vocabulary::build_from_captions(std::span<const std::string> captions,
                                           std::size_t min_count) {
  std::vector<std::vector<std::string>> streams;
  streams.reserve(captions.size());
  for (const auto& c : captions) streams.push_back(tokenize_caption(c));
  return build(streams, min_count);
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range (size " +
                            std::to_string(tokens_.size()) + ")");
  }
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode_tokens(std::span<const std::string> tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size() + 2);
  out.push_back(kBos);
  for (const auto& t : tokens) out.push_back(id(lowercase(t)));
  out.push_back(kEos);
  return out;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view caption) const {
  return encode_tokens(tokenize_caption(caption));
}

std::vector<std::string> Vocabulary::decode_tokens(std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  for (auto id : ids) {
    const std::string& t = token(id);
    if (id == kBos || id == kEos || id == kPad) continue;
    out.push_back(t);
  }
  return out;
}

std::string Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::string out;
  for (const auto& t : decode_tokens(ids)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < kNumReserved) throw DataError("vocabulary file too short: " + path.string());
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (lines[i] != kReserved[i]) throw DataError("vocabulary file has wrong reserved tokens");
  }
  Vocabulary v;
  for (std::size_t i = kNumReserved; i < lines.size(); ++i) v.push(lines[i]);
  return v;
}

}  // namespace updown
