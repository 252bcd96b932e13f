#include "tslider/tokenizer.hpp"

#include <fstream>

#include "tslider/errors.hpp"

namespace tslider {

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_ascii_punct(unsigned char c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) {
      extra = 0;
    } else if ((c & 0xE0) == 0xC0 && c >= 0xC2) {
      extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
    } else if ((c & 0xF8) == 0xF0 && c <= 0xF4) {
      extra = 3;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += extra + 1;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_.reserve(tokens.size());
  for (auto& t : tokens) {
    if (t.empty()) throw FormatError("vocab token must be non-empty");
    for (char c : t) {
      if (is_space(static_cast<unsigned char>(c))) throw FormatError("vocab token contains whitespace: '" + t + "'");
    }
    const auto id = static_cast<std::int32_t>(v.tokens_.size()) + kFirstTokenId;
    if (!v.ids_.emplace(t, id).second) throw FormatError("duplicate vocab token '" + t + "'");
    v.tokens_.push_back(std::move(t));
  }
  return v;
}

Vocab Vocab::parse(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    tokens.emplace_back(t);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocab file " + path.string());
  return parse(in);
}

std::int32_t Vocab::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnkId : it->second;
}

std::vector<std::string> split_words(std::string_view text) {
  if (!valid_utf8(text)) throw ContractError("text is not valid UTF-8");
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c) || is_ascii_punct(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
      continue;
    }
    current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch);
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

TokenSeq encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ContractError("max_len must be at least 2");
  const auto words = split_words(text);
  const std::size_t kept = std::min(words.size(), max_len - 2);
  TokenSeq seq;
  seq.ids.assign(max_len, kPadId);
  seq.ids[0] = kBosId;
  for (std::size_t i = 0; i < kept; ++i) seq.ids[i + 1] = vocab.id(words[i]);
  seq.eos_pos = kept + 1;
  seq.ids[seq.eos_pos] = kEosId;
  return seq;
}

std::string join_prompt(std::span<const std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ", ";
    out += p;
  }
  if (out.empty()) throw ContractError("join_prompt needs at least one non-empty part");
  return out;
}

}  // namespace tslider
