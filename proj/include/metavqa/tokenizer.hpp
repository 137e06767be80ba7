#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metavqa/datamodel.hpp"

namespace mvqa {

// Fixed special ids. The nine segment tokens mirror the segment inventory.
namespace special {
inline constexpr int kSos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kUnk = 3;
inline constexpr int kFirstSegment = 4;  // [V] .. [ANS] occupy 4..12
inline constexpr int kCount = 13;
}  // namespace special

// Lowercases and splits on whitespace; every ASCII punctuation mark becomes
// its own token.
std::vector<std::string> normalize(std::string_view text);

// Tokens joined by single spaces.
std::string join_tokens(std::span<const std::string> tokens);

class Vocabulary {
 public:
  Vocabulary();

  // Specials first, then tokens by descending frequency, ties lexicographic.
  static Vocabulary build(std::span<const Corpus> corpora, int min_freq = 1);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::vector<int> encode(std::string_view text) const;
  std::vector<int> encode_tokens(std::span<const std::string> tokens) const;
  std::string decode(std::span<const int> ids) const;
  std::vector<std::string> decode_tokens(std::span<const int> ids) const;

  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  // Ordinary (non-special) tokens in id order.
  std::vector<std::string> tokens() const;
  static const std::vector<std::string>& special_tokens();

  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void add(const std::string& token);

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace mvqa
