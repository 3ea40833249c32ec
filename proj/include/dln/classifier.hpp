#pragma once

// Binary sentence CNN: embeddings, one filter bank per width, ReLU, max-pool
// over time, a linear head and a sigmoid. Label 1 is the target style.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dln/init.hpp"
#include "dln/ops.hpp"
#include "dln/optim.hpp"
#include "dln/param_store.hpp"
#include "dln/text.hpp"

namespace dln {

struct ClassifierConfig {
  std::size_t embed = 64;
  std::size_t filters = 32;
  std::vector<std::size_t> widths{3, 4, 5};
  std::size_t max_vocab = 20000;
  int max_epochs = 20;
  std::size_t batch_size = 32;
  double target_accuracy = 0.99;  // early stop once train accuracy reaches this
  double init_range = 0.08;
  double learning_rate = 0.002;
  std::uint64_t seed = 11;

  void validate() const {
    if (embed == 0 || filters == 0 || widths.empty()) throw ConfigError("classifier dimensions must be positive");
    for (auto w : widths)
      if (w == 0) throw ConfigError("classifier filter widths must be positive");
    if (max_epochs < 0 || batch_size == 0) throw ConfigError("classifier schedule must be positive");
  }
};

struct ClassifierTrainReport {
  int epochs = 0;
  double train_accuracy = 0;
};

class StyleClassifier {
 public:
  StyleClassifier(const ClassifierConfig& cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t D = cfg_.embed, F = cfg_.filters;
    store_.add("clf.embed", uniform_init<float>({vocab_.size(), D}, cfg_.init_range, rng));
    for (auto w : cfg_.widths) {
      store_.add("clf.conv" + std::to_string(w) + ".w", uniform_init<float>({F, w * D}, cfg_.init_range, rng));
      store_.add("clf.conv" + std::to_string(w) + ".b", Tensor<float>({F}));
    }
    store_.add("clf.head.w", uniform_init<float>({F * cfg_.widths.size()}, cfg_.init_range, rng));
    store_.add("clf.head.b", Tensor<float>({1}));
  }

  /// Trains on `source` (label 0) and `target` (label 1) sentences.
  static std::pair<StyleClassifier, ClassifierTrainReport> train(const std::vector<Tokens>& source,
                                                                  const std::vector<Tokens>& target,
                                                                  const ClassifierConfig& cfg = {}) {
    if (source.empty() || target.empty())
      throw ArgumentError("style classifier needs sentences of both classes");
    std::vector<Tokens> all(source);
    all.insert(all.end(), target.begin(), target.end());
    StyleClassifier clf(cfg, build_vocab(all, cfg.max_vocab));
    std::vector<std::pair<TokenIds, float>> data;
    for (const auto& s : source) data.emplace_back(clf.encode(s), 0.0f);
    for (const auto& s : target) data.emplace_back(clf.encode(s), 1.0f);
    auto rep = clf.fit(data);
    return {std::move(clf), rep};
  }

  /// Probability that `sentence` is in the target style.
  double probability(const Tokens& sentence) const {
    Trace tr;
    return forward(encode(sentence), tr);
  }

  double accuracy(const std::vector<Tokens>& sentences, int label) const {
    if (sentences.empty()) return 0;
    std::size_t ok = 0;
    for (const auto& s : sentences) ok += (is_target(probability(s)) == (label == 1)) ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(sentences.size());
  }

  const Vocabulary& vocab() const { return vocab_; }
  ParamStore<float>& params() { return store_; }
  const ClassifierConfig& config() const { return cfg_; }

 private:
  static bool is_target(double s) { return s > 0.5; }

  struct Trace {
    std::vector<float> x;                  // L×D embedded input
    std::size_t len = 0;
    std::vector<float> feat;               // pooled ReLU features
    std::vector<std::size_t> argmax;       // window index per feature
    double s = 0;
  };

  TokenIds encode(const Tokens& sentence) const {
    TokenIds ids = vocab_.encode(sentence);
    const std::size_t min_len = *std::max_element(cfg_.widths.begin(), cfg_.widths.end());
    while (ids.size() < min_len) ids.push_back(kPad);
    return ids;
  }

  double forward(const TokenIds& ids, Trace& tr) const {
    const std::size_t D = cfg_.embed, F = cfg_.filters, L = ids.size();
    const auto& emb = store_.get("clf.embed");
    tr.len = L;
    tr.x.assign(L * D, 0.0f);
    for (std::size_t t = 0; t < L; ++t)
      std::copy_n(emb.values().begin() + ids[t] * D, D, tr.x.begin() + t * D);
    tr.feat.assign(F * cfg_.widths.size(), 0.0f);
    tr.argmax.assign(F * cfg_.widths.size(), 0);
    std::vector<float> a(F);
    for (std::size_t wi = 0; wi < cfg_.widths.size(); ++wi) {
      const std::size_t k = cfg_.widths[wi];
      const auto& W = store_.get("clf.conv" + std::to_string(k) + ".w");
      const auto& b = store_.get("clf.conv" + std::to_string(k) + ".b");
      for (std::size_t p = 0; p + k <= L; ++p) {
        std::copy(b.values().begin(), b.values().end(), a.begin());
        gemv_acc<float>(W.values(), k * D, std::span<const float>(tr.x.data() + p * D, k * D), a);
        for (std::size_t f = 0; f < F; ++f) {
          const float v = std::max(a[f], 0.0f);
          if (p == 0 || v > tr.feat[wi * F + f]) {
            tr.feat[wi * F + f] = v;
            tr.argmax[wi * F + f] = p;
          }
        }
      }
    }
    const auto& hw = store_.get("clf.head.w");
    double logit = store_.get("clf.head.b")[0];
    for (std::size_t i = 0; i < tr.feat.size(); ++i) logit += static_cast<double>(hw[i]) * tr.feat[i];
    tr.s = 1.0 / (1.0 + std::exp(-logit));
    return tr.s;
  }

  void backward(const TokenIds& ids, const Trace& tr, float dlogit) {
    const std::size_t D = cfg_.embed, F = cfg_.filters;
    auto& hw = store_.get("clf.head.w");
    store_.get("clf.head.b").grad()[0] += dlogit;
    std::vector<float> dx(tr.len * D, 0.0f);
    for (std::size_t wi = 0; wi < cfg_.widths.size(); ++wi) {
      const std::size_t k = cfg_.widths[wi];
      auto& W = store_.get("clf.conv" + std::to_string(k) + ".w");
      auto& b = store_.get("clf.conv" + std::to_string(k) + ".b");
      for (std::size_t f = 0; f < F; ++f) {
        const std::size_t i = wi * F + f;
        hw.grad()[i] += dlogit * tr.feat[i];
        if (tr.feat[i] <= 0) continue;  // ReLU inactive at the pooled position
        const float df = dlogit * hw[i];
        const std::size_t p = tr.argmax[i];
        b.grad()[f] += df;
        float* wg = W.grad().data() + f * k * D;
        const float* wv = W.values().data() + f * k * D;
        for (std::size_t j = 0; j < k * D; ++j) {
          wg[j] += df * tr.x[p * D + j];
          dx[p * D + j] += df * wv[j];
        }
      }
    }
    auto eg = store_.get("clf.embed").grad();
    for (std::size_t t = 0; t < tr.len; ++t)
      for (std::size_t d = 0; d < D; ++d) eg[ids[t] * D + d] += dx[t * D + d];
  }

  ClassifierTrainReport fit(const std::vector<std::pair<TokenIds, float>>& data) {
    OptimConfig oc;
    oc.learning_rate = cfg_.learning_rate;
    AdamState<float> adam;
    Rng rng(splitmix64(cfg_.seed));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    ClassifierTrainReport rep;
    auto train_accuracy = [&] {
      std::size_t ok = 0;
      Trace tr;
      for (const auto& [ids, y] : data) ok += (is_target(forward(ids, tr)) == (y > 0.5f)) ? 1 : 0;
      return static_cast<double>(ok) / static_cast<double>(data.size());
    };
    rep.train_accuracy = train_accuracy();
    Trace tr;
    for (int e = 0; e < cfg_.max_epochs && rep.train_accuracy < cfg_.target_accuracy; ++e) {
      shuffle_range(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
        const float scale = 1.0f / static_cast<float>(end - start);
        for (std::size_t i = start; i < end; ++i) {
          const auto& [ids, y] = data[order[i]];
          const double s = forward(ids, tr);
          backward(ids, tr, static_cast<float>(s - y) * scale);
        }
        clip_gradients(store_, oc.clip_norm);
        adam_step(store_, adam, oc, 0);
      }
      rep.epochs = e + 1;
      rep.train_accuracy = train_accuracy();
    }
    return rep;
  }

  ClassifierConfig cfg_;
  Vocabulary vocab_;
  ParamStore<float> store_;
};

}  // namespace dln
