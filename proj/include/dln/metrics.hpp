#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dln/errors.hpp"
#include "dln/init.hpp"
#include "dln/lexicon.hpp"
#include "dln/text.hpp"

namespace dln {

inline NounSet extract_nouns(const Tokens& tokens, const NounLexicon& nouns) {
  NounSet out;
  for (const auto& t : tokens)
    if (nouns.contains(t)) out.insert(t);
  return out;
}

struct ContentSimilarity {
  double f = 0, p = 0, r = 0;
  std::size_t n_p = 0;  // |C_T ∩ C'_S|
  std::size_t n_r = 0;  // |C_S ∩ C'_T|
};

/// Noun-set f-score with synonym expansion. C_S is the reference set and C_T
/// the generated set; p = |C_T ∩ C'_S| / |C_T|, r = |C_S ∩ C'_T| / |C_S|.
/// An empty denominator makes that rate 0.
inline ContentSimilarity content_similarity(const NounSet& c_s, const NounSet& c_t, const SynonymLexicon& syn) {
  const NounSet xs = syn.expand(c_s), xt = syn.expand(c_t);
  ContentSimilarity cs;
  for (const auto& n : c_t)
    if (xs.count(n)) ++cs.n_p;
  for (const auto& n : c_s)
    if (xt.count(n)) ++cs.n_r;
  cs.p = c_t.empty() ? 0.0 : static_cast<double>(cs.n_p) / static_cast<double>(c_t.size());
  cs.r = c_s.empty() ? 0.0 : static_cast<double>(cs.n_r) / static_cast<double>(c_s.size());
  cs.f = cs.p + cs.r > 0 ? 2 * cs.p * cs.r / (cs.p + cs.r) : 0.0;
  return cs;
}

/// Mean per-item f over (reference, generated) noun-set pairs.
inline double corpus_content_similarity(const std::vector<std::pair<NounSet, NounSet>>& items,
                                        const SynonymLexicon& syn) {
  if (items.empty()) throw ArgumentError("corpus_content_similarity: empty item list");
  double sum = 0;
  for (const auto& [s, t] : items) sum += content_similarity(s, t, syn).f;
  return sum / static_cast<double>(items.size());
}

/// Corpus-level BLEU with one reference per candidate: clipped n-gram
/// precisions up to max_n, uniform weights, brevity penalty, no smoothing.
inline double bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references, int max_n) {
  if (max_n < 1) throw ArgumentError("bleu: max_n must be at least 1");
  if (candidates.size() != references.size()) throw ArgumentError("bleu: candidate/reference count mismatch");
  std::vector<double> match(max_n, 0.0), total(max_n, 0.0);
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<Tokens, int> rc, cc;
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++rc[Tokens(r.begin() + k, r.begin() + k + n)];
      for (std::size_t k = 0; k + n <= c.size(); ++k) ++cc[Tokens(c.begin() + k, c.begin() + k + n)];
      for (const auto& [g, cnt] : cc) {
        auto it = rc.find(g);
        if (it != rc.end()) match[n - 1] += std::min(cnt, it->second);
        total[n - 1] += cnt;
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_p = 0;
  for (int n = 0; n < max_n; ++n) {
    if (match[n] == 0) return 0.0;
    log_p += std::log(match[n] / total[n]);
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_p / max_n);
}

inline double bleu(const Tokens& candidate, const Tokens& reference, int max_n) {
  return bleu(std::vector<Tokens>{candidate}, std::vector<Tokens>{reference}, max_n);
}

/// `count` distinct nouns drawn uniformly without replacement (capped at the lexicon size).
inline Tokens random_baseline(std::size_t count, const NounLexicon& nouns, Rng& rng) {
  if (nouns.empty()) throw ArgumentError("random_baseline: empty noun lexicon");
  Tokens pool(nouns.nouns().begin(), nouns.nouns().end());
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(count);
  return pool;
}

/// A sentence counts as transferred iff its target-style probability exceeds 0.5.
inline bool is_transferred(double s) { return s > 0.5; }

inline double transfer_accuracy_from_scores(const std::vector<double>& scores) {
  if (scores.empty()) throw ArgumentError("transfer_accuracy: empty sentence list");
  std::size_t hits = 0;
  for (double s : scores) hits += is_transferred(s) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

/// Anything with `double probability(const Tokens&) const`.
template <class Classifier>
double transfer_accuracy(const std::vector<Tokens>& sentences, const Classifier& clf) {
  std::vector<double> s;
  s.reserve(sentences.size());
  for (const auto& t : sentences) s.push_back(clf.probability(t));
  return transfer_accuracy_from_scores(s);
}

}  // namespace dln
