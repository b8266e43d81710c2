#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace updown {

/// Lowercases, strips terminal periods and splits on whitespace.
std::vector<std::string> tokenize_caption(std::string_view text);
/// As tokenize_caption, additionally stripping a trailing question mark.
std::vector<std::string> tokenize_question(std::string_view text);

/// Token <-> id bijection with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kNumReserved = 4;

  Vocabulary();

  /// Keeps tokens occurring at least `min_count` times. Ids after the
  /// reserved block are assigned by descending count, then lexicographically.
  static Vocabulary build(std::span<const std::vector<std::string>> token_streams,
                          std::size_t min_count = 5);
  static Vocabulary build_from_captions(std::span<const std::string> captions,
                                        std::size_t min_count = 5);

  std::size_t size() const { return tokens_.size(); }
  /// Id of `token`, or kUnk.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  /// Throws std::out_of_range for ids >= size().
  const std::string& token(std::size_t id) const;
  static bool is_reserved(std::size_t id) { return id < kNumReserved; }

  /// [BOS, ids..., EOS]; unknown tokens map to UNK.
  std::vector<std::size_t> encode(std::string_view caption) const;
  std::vector<std::size_t> encode_tokens(std::span<const std::string> tokens) const;
  /// Space-joined tokens with BOS/EOS/PAD dropped.
  std::string decode(std::span<const std::size_t> ids) const;
  std::vector<std::string> decode_tokens(std::span<const std::size_t> ids) const;

  /// One token per line in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace updown
