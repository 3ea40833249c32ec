#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dln/keyvalue.hpp"
#include "dln/text.hpp"

namespace dln {

using NounSet = std::set<std::string>;

/// Tokens designated as nouns. File format: one token per line, '#' comments.
class NounLexicon {
 public:
  NounLexicon() = default;
  explicit NounLexicon(NounSet nouns) : nouns_(std::move(nouns)) {}

  static NounLexicon load(const std::string& path) {
    NounSet s;
    for (const auto& line : read_lines(path)) {
      const auto t = trim(line);
      if (!t.empty() && t[0] != '#') s.insert(t);
    }
    return NounLexicon(std::move(s));
  }

  void save(const std::string& path) const { write_lines(path, {nouns_.begin(), nouns_.end()}); }

  bool contains(const std::string& t) const { return nouns_.count(t) != 0; }
  const NounSet& nouns() const { return nouns_; }
  std::size_t size() const { return nouns_.size(); }
  bool empty() const { return nouns_.empty(); }

 private:
  NounSet nouns_;
};

/// noun -> synonyms, closed under symmetry at construction.
/// File format: `head: syn1, syn2, ...` per line, '#' comments.
class SynonymLexicon {
 public:
  SynonymLexicon() = default;

  explicit SynonymLexicon(const std::map<std::string, NounSet>& raw) {
    for (const auto& [head, syns] : raw)
      for (const auto& s : syns) add_pair(head, s);
  }

  void add_pair(const std::string& a, const std::string& b) {
    if (a == b) return;
    map_[a].insert(b);
    map_[b].insert(a);
  }

  static SynonymLexicon parse_lines(const std::vector<std::string>& lines, const std::string& origin) {
    SynonymLexicon lex;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto t = trim(lines[i]);
      if (t.empty() || t[0] == '#') continue;
      const auto colon = t.find(':');
      if (colon == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(i + 1) + ": expected 'head: syn1, syn2'");
      const auto head = trim(t.substr(0, colon));
      for (const auto& s : split(t.substr(colon + 1), ','))
        if (!s.empty()) lex.add_pair(head, s);
    }
    return lex;
  }

  static SynonymLexicon load(const std::string& path) { return parse_lines(read_lines(path), path); }

  std::vector<std::string> lines() const {
    std::vector<std::string> out;
    for (const auto& [head, syns] : map_) {
      std::string l = head + ":";
      bool first = true;
      for (const auto& s : syns) {
        l += (first ? " " : ", ") + s;
        first = false;
      }
      out.push_back(l);
    }
    return out;
  }

  void save(const std::string& path) const { write_lines(path, lines()); }

  const NounSet& synonyms(const std::string& noun) const {
    static const NounSet empty;
    auto it = map_.find(noun);
    return it == map_.end() ? empty : it->second;
  }

  /// set ∪ synonyms(set)
  NounSet expand(const NounSet& s) const {
    NounSet out = s;
    for (const auto& n : s) {
      const auto& syn = synonyms(n);
      out.insert(syn.begin(), syn.end());
    }
    return out;
  }

  bool empty() const { return map_.empty(); }

 private:
  std::map<std::string, NounSet> map_;
};

}  // namespace dln
