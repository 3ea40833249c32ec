#pragma once

// Greedy and beam-search decoding over any step model exposing
//   State initial_state() const;
//   void advance(State&, TokenId input, std::vector<double>& logits) const;
//   std::size_t vocab_size() const;
// PAD, BOS and UNK are never emitted (their logits are masked to −∞).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dln/model.hpp"

namespace dln {

struct DecodeResult {
  TokenIds tokens;        // content tokens, EOS excluded
  double log_prob = 0.0;  // summed masked log-softmax of every emitted token (EOS included)
  bool finished = false;  // ended with EOS before max_len ran out
};

inline bool emittable(TokenId t) { return t != kPad && t != kBos && t != kUnk; }

/// In-place masked log-softmax.
inline void masked_log_softmax(std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!emittable(static_cast<TokenId>(i))) v[i] = -std::numeric_limits<double>::infinity();
    mx = std::max(mx, v[i]);
  }
  double sum = 0;
  for (double x : v)
    if (std::isfinite(x)) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  for (double& x : v) x = std::isfinite(x) ? x - lse : -std::numeric_limits<double>::infinity();
}

/// Step model over a generator view and latent code z.
template <class T>
class LatentStepModel {
 public:
  struct State {
    std::vector<T> h, c;
  };

  LatentStepModel(const GeneratorView<T>& view, std::vector<T> z) : g_(view), z_(std::move(z)) {
    if (z_.size() != g_.embed_dim()) throw ShapeError("latent code length does not match embedding dimension");
  }

  std::size_t vocab_size() const { return g_.vocab_size(); }

  State initial_state() const {
    const std::vector<T> zero(g_.hidden(), T(0));
    LSTMStepCache<T> cache;
    lnlstm_forward_step<T>(z_, zero, zero, g_.lstm, g_.ln, static_cast<T>(kLayerNormEps), cache);
    return {std::move(cache.h), std::move(cache.c)};
  }

  void advance(State& s, TokenId input, std::vector<double>& logits) const {
    LSTMStepCache<T> cache;
    lnlstm_forward_step<T>(g_.embedding(input), s.h, s.c, g_.lstm, g_.ln, static_cast<T>(kLayerNormEps), cache);
    s.h = std::move(cache.h);
    s.c = std::move(cache.c);
    std::vector<T> out(g_.vocab_size());
    g_.logits(s.h, out);
    logits.assign(out.begin(), out.end());
  }

 private:
  GeneratorView<T> g_;
  std::vector<T> z_;
};

template <class M>
DecodeResult greedy_decode(const M& model, std::size_t max_len) {
  if (max_len < 1) throw ArgumentError("greedy_decode: max_len must be at least 1");
  DecodeResult r;
  auto state = model.initial_state();
  TokenId in = kBos;
  std::vector<double> lp;
  for (std::size_t step = 0; step < max_len; ++step) {
    model.advance(state, in, lp);
    masked_log_softmax(lp);
    const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    r.log_prob += lp[best];
    if (best == kEos) {
      r.finished = true;
      break;
    }
    r.tokens.push_back(best);
    in = best;
  }
  return r;
}

template <class M>
struct BeamHypothesis {
  TokenIds tokens;  // emitted tokens, EOS included once finished
  double log_prob = 0.0;
  typename M::State state;
  bool finished = false;
};

namespace detail {

/// Higher score first; equal scores fall back to lexicographic token order.
inline bool beam_better(double sa, const TokenIds& a, double sb, const TokenIds& b) {
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace detail

/// Beam search on summed log-probabilities without length normalization.
/// A hypothesis that emits EOS is retired and the live beam shrinks by one;
/// the search ends when the beam is empty, max_len is reached, or no live
/// hypothesis can still beat the best retired one.
template <class M>
DecodeResult beam_search(const M& model, std::size_t width, std::size_t max_len) {
  if (width < 1) throw ArgumentError("beam_search: width must be at least 1");
  if (max_len < 1) throw ArgumentError("beam_search: max_len must be at least 1");
  using Hyp = BeamHypothesis<M>;
  std::vector<Hyp> live{Hyp{{}, 0.0, model.initial_state(), false}};
  std::vector<Hyp> finished;
  std::vector<double> lp;

  struct Candidate {
    std::size_t parent;
    TokenId token;
    double score;
    TokenIds tokens;
  };

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    std::vector<typename M::State> next_states;
    for (std::size_t p = 0; p < live.size(); ++p) {
      auto st = live[p].state;
      model.advance(st, live[p].tokens.empty() ? kBos : live[p].tokens.back(), lp);
      masked_log_softmax(lp);
      next_states.push_back(std::move(st));
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (!std::isfinite(lp[t])) continue;
        TokenIds toks = live[p].tokens;
        toks.push_back(static_cast<TokenId>(t));
        cands.push_back({p, static_cast<TokenId>(t), live[p].log_prob + lp[t], std::move(toks)});
      }
    }
    const std::size_t capacity = width - finished.size();
    const std::size_t keep = std::min(capacity, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        return detail::beam_better(a.score, a.tokens, b.score, b.tokens);
                      });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = cands[i];
      Hyp h{std::move(c.tokens), c.score, next_states[c.parent], c.token == kEos};
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
    if (finished.size() >= width) break;
    if (!finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.log_prob);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      if (best_live < best_finished) break;  // scores only decrease
    }
  }

  const auto pick = [](const std::vector<Hyp>& hs) {
    const Hyp* best = &hs.front();
    for (const auto& h : hs)
      if (detail::beam_better(h.log_prob, h.tokens, best->log_prob, best->tokens)) best = &h;
    return best;
  };
  const Hyp* best = !finished.empty() ? pick(finished) : pick(live);
  DecodeResult r;
  r.log_prob = best->log_prob;
  r.finished = best->finished;
  r.tokens = best->tokens;
  if (r.finished) r.tokens.pop_back();
  return r;
}

/// Latent code for an image, decoded with `style`'s generator.
template <class T>
DecodeResult generate(DLNModel<T>& model, const Tensor<float>& image, const std::string& style, std::size_t beam,
                      std::size_t max_len = 0) {
  LatentStepModel<T> sm(model.view(style), model.encode_image(image));
  const std::size_t len = max_len ? max_len : model.config().max_len;
  return beam == 1 ? greedy_decode(sm, len) : beam_search(sm, beam, len);
}

}  // namespace dln
