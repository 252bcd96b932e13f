#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tslider {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kBosId = 1;
inline constexpr std::int32_t kEosId = 2;
inline constexpr std::int32_t kUnkId = 3;
inline constexpr std::int32_t kFirstTokenId = 4;
inline constexpr std::size_t kDefaultMaxLen = 77;

/// Word-level vocabulary. Learned tokens take ids from kFirstTokenId
/// upward, in file order.
class Vocab {
 public:
  Vocab() = default;
  static Vocab from_tokens(std::vector<std::string> tokens);
  /// One token per line; '#' lines and blank lines are skipped and do not
  /// consume an id.
  static Vocab parse(std::istream& in);
  static Vocab load(const std::filesystem::path& path);

  /// Id for `word`, or kUnkId.
  std::int32_t id(std::string_view word) const;
  /// Total id count including reserved ids.
  std::size_t size() const noexcept { return tokens_.size() + kFirstTokenId; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct TokenSeq {
  std::vector<std::int32_t> ids;
  std::size_t eos_pos = 1;
};

/// Lowercased words; whitespace and ASCII punctuation act as boundaries and
/// are dropped.
std::vector<std::string> split_words(std::string_view text);

/// [BOS, words..., EOS, PAD...] of exactly `max_len` ids. Words beyond
/// max_len - 2 are dropped so EOS always fits.
TokenSeq encode(std::string_view text, const Vocab& vocab, std::size_t max_len = kDefaultMaxLen);

/// Joins non-empty parts with ", ".
std::string join_prompt(std::span<const std::string> parts);

}  // namespace tslider
