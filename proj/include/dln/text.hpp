#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dln/errors.hpp"

namespace dln {

using TokenId = std::uint32_t;
using Tokens = std::vector<std::string>;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

/// Lowercases ASCII, splits on whitespace, and emits every ASCII punctuation
/// character as a standalone token. Non-ASCII bytes pass through unchanged.
inline Tokens tokenize(std::string_view line) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : line) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

inline std::string join_tokens(const Tokens& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s.push_back(' ');
    s += toks[i];
  }
  return s;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(s);
  }

  /// Builds from a full id-ordered token list whose first four entries are the specials.
  static Vocabulary from_list(const Tokens& list) {
    if (list.size() < kNumSpecials || list[0] != "<pad>" || list[1] != "<bos>" || list[2] != "<eos>" ||
        list[3] != "<unk>")
      throw VocabError("vocabulary list must start with <pad> <bos> <eos> <unk>");
    Vocabulary v;
    for (std::size_t i = kNumSpecials; i < list.size(); ++i) v.add(list[i]);
    return v;
  }

  TokenId add(const std::string& token) {
    if (index_.count(token)) throw VocabError("duplicate vocabulary token '" + token + "'");
    return push(token);
  }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const Tokens& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
  }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  TokenIds encode(const Tokens& toks) const {
    TokenIds ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  /// Maps ids back to tokens, skipping PAD/BOS and stopping at EOS.
  Tokens decode(const TokenIds& ids) const {
    Tokens out;
    for (TokenId i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write vocabulary '" + path + "'");
    for (const auto& t : tokens_) os << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read vocabulary '" + path + "'");
    Tokens list;
    for (std::string line; std::getline(is, line);)
      if (!line.empty()) list.push_back(line);
    return from_list(list);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  TokenId push(const std::string& token) {
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  Tokens tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Keeps the (max_size - 4) most frequent tokens; ties go to the
/// lexicographically smaller token. Everything else maps to UNK.
inline Vocabulary build_vocab(const std::vector<Tokens>& corpus, std::size_t max_size) {
  if (max_size <= kNumSpecials) throw ArgumentError("build_vocab: max_size must exceed the 4 special tokens");
  std::map<std::string, std::size_t> counts;
  for (const auto& sent : corpus)
    for (const auto& t : sent) ++counts[t];
  if (counts.empty()) throw ArgumentError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : ranked) {
    if (v.size() >= max_size) break;
    if (!v.contains(tok)) v.add(tok);
  }
  return v;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write '" + path + "'");
  for (const auto& l : lines) os << l << '\n';
}

/// One description per line, tokenized.
inline std::vector<Tokens> read_corpus(const std::string& path) {
  std::vector<Tokens> out;
  for (const auto& line : read_lines(path)) out.push_back(tokenize(line));
  return out;
}

}  // namespace dln
