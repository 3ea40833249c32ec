#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dln/model.hpp"
#include "dln/optim.hpp"
#include "dln/synth.hpp"

namespace dln {

struct TrainConfig {
  double lambda = 0.5;   // weight of L_S in the joint objective
  double lambda1 = 0.2;  // weight of L_S while extending
  double lambda2 = 0.1;  // weight of the anchor regularizer while extending
  int epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  OptimConfig optim;

  void validate() const {
    if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must lie in [0,1]");
    if (!(lambda1 >= 0 && lambda1 <= 1)) throw ConfigError("lambda1 must lie in [0,1]");
    if (!(lambda2 >= 0)) throw ConfigError("lambda2 must be non-negative");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    optim.validate();
  }
};

/// Image features with the description's ids (EOS appended).
struct SourceExample {
  Tensor<float> image;
  TokenIds ids;
};

/// Frozen sentence features with the sentence's ids (EOS appended).
struct TargetExample {
  std::string style;
  Tensor<float> text;
  TokenIds ids;
};

inline TokenIds encode_truncated(const Vocabulary& v, const Tokens& sentence, std::size_t max_len) {
  Tokens t = sentence;
  if (t.size() > max_len) t.resize(max_len);
  return with_eos(v.encode(t));
}

template <class T>
std::vector<SourceExample> prepare_source(const DLNModel<T>& model, const std::vector<PairedExample>& data) {
  std::vector<SourceExample> out;
  out.reserve(data.size());
  for (const auto& ex : data)
    out.push_back({ex.features, encode_truncated(model.vocab(), ex.description, model.config().max_len)});
  return out;
}

template <class T>
std::vector<TargetExample> prepare_target(const DLNModel<T>& model, const std::string& style,
                                          const std::vector<Tokens>& corpus) {
  const auto vocab = model.style_vocab(style);
  std::vector<TargetExample> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    if (s.empty()) continue;
    out.push_back({style, model.text_features(s), encode_truncated(vocab, s, model.config().max_len)});
  }
  return out;
}

struct StepLosses {
  double source = 0;  // mean L_S over the batch
  double target = 0;  // mean L_T over the batch
  double reg = 0;     // anchor regularizer R (0 outside extension)
  double total = 0;
};

/// R = Σ ‖θ' − θ_anchor‖ over θ_PI, θ_W and θ_V. Extension rows live in
/// separate tensors, so only the pretrained slices enter the difference.
template <class T>
double regularizer_R(DLNModel<T>& model, bool backward = false, double coef = 1.0) {
  if (!model.has_anchors()) throw StateError("regularizer needs anchors captured at extension start");
  auto& store = model.params();
  double total = 0;
  for (const char* n : {"proj.image", "embed", "output"}) {
    auto& cur = store.get(n);
    const auto& anc = store.get(std::string("anchor.") + n);
    if (cur.shape() != anc.shape())
      throw StateError(std::string("anchor shape mismatch for '") + n + "': " + shape_str(anc.shape()) + " vs " +
                       shape_str(cur.shape()));
    double sq = 0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double d = static_cast<double>(cur[i]) - static_cast<double>(anc[i]);
      sq += d * d;
    }
    const double norm = std::sqrt(sq);
    total += norm;
    if (backward && norm > 0) {
      auto g = cur.grad();
      for (std::size_t i = 0; i < cur.size(); ++i)
        g[i] += static_cast<T>(coef * (static_cast<double>(cur[i]) - static_cast<double>(anc[i])) / norm);
    }
  }
  return total;
}

/// λ·mean(L_S) + (1−λ)·mean(L_T) + λ2·R. Terms whose weight is zero are
/// evaluated but contribute no gradient. Gradients accumulate into the store.
template <class T>
StepLosses objective(DLNModel<T>& model, const std::vector<const SourceExample*>& batch_s,
                     const std::vector<const TargetExample*>& batch_t, double lambda, double lambda2 = 0.0,
                     bool backward = false) {
  if (batch_s.empty() || batch_t.empty()) throw ArgumentError("both batches must be non-empty");
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must lie in [0,1]");
  StepLosses out;
  const T cs = static_cast<T>(lambda / static_cast<double>(batch_s.size()));
  const T ct = static_cast<T>((1.0 - lambda) / static_cast<double>(batch_t.size()));
  for (const auto* ex : batch_s)
    out.source += static_cast<double>(model.source_loss(ex->image, ex->ids, backward && lambda > 0, cs));
  for (const auto* ex : batch_t)
    out.target += static_cast<double>(model.target_loss(ex->style, ex->text, ex->ids, backward && lambda < 1, ct));
  out.source /= static_cast<double>(batch_s.size());
  out.target /= static_cast<double>(batch_t.size());
  if (lambda2 > 0) out.reg = regularizer_R(model, backward, lambda2);
  out.total = lambda * out.source + (1.0 - lambda) * out.target + lambda2 * out.reg;
  return out;
}

/// One optimizer step on the joint objective: backward, clip, Adam.
template <class T>
StepLosses joint_train_step(DLNModel<T>& model, const std::vector<const SourceExample*>& batch_s,
                            const std::vector<const TargetExample*>& batch_t, const TrainConfig& cfg,
                            AdamState<T>& adam, int epoch = 0, double lambda2 = 0.0, std::optional<double> lambda = {}) {
  cfg.validate();
  model.params().zero_grad();
  const auto losses = objective(model, batch_s, batch_t, lambda.value_or(cfg.lambda), lambda2, true);
  clip_gradients(model.params(), cfg.optim.clip_norm);
  adam_step(model.params(), adam, cfg.optim, epoch);
  return losses;
}

struct EpochLog {
  int epoch = 0;  // 1-based
  double source = 0;
  double target = 0;
  double reg = 0;
  double total = 0;
};

/// Shuffled mini-batch schedule over both sets; an epoch has
/// ceil(max(|S|, |T|) / batch) steps and the smaller set wraps around.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n_s, std::size_t n_t, std::size_t batch, std::uint64_t seed)
      : s_(n_s), t_(n_t), batch_(batch), rng_(seed) {
    if (n_s == 0 || n_t == 0) throw ArgumentError("training needs non-empty source and target sets");
    for (std::size_t i = 0; i < n_s; ++i) s_[i] = i;
    for (std::size_t i = 0; i < n_t; ++i) t_[i] = i;
  }

  std::size_t steps_per_epoch() const { return (std::max(s_.size(), t_.size()) + batch_ - 1) / batch_; }

  void shuffle() {
    shuffle_range(s_.begin(), s_.end(), rng_);
    shuffle_range(t_.begin(), t_.end(), rng_);
  }

  template <class A, class B>
  void batch(std::size_t step, const std::vector<A>& src, const std::vector<B>& tgt, std::vector<const A*>& bs,
             std::vector<const B*>& bt) const {
    bs.clear();
    bt.clear();
    const std::size_t n = std::max(s_.size(), t_.size());
    const std::size_t begin = step * batch_, end = std::min(n, begin + batch_);
    for (std::size_t i = begin; i < end; ++i) {
      bs.push_back(&src[s_[i % s_.size()]]);
      bt.push_back(&tgt[t_[i % t_.size()]]);
    }
  }

 private:
  std::vector<std::size_t> s_, t_;
  std::size_t batch_;
  Rng rng_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

namespace detail {

template <class T>
std::vector<EpochLog> run_epochs(DLNModel<T>& model, const std::vector<SourceExample>& src,
                                 const std::vector<TargetExample>& tgt, const TrainConfig& cfg, double lambda,
                                 double lambda2, std::uint64_t seed, const EpochCallback& cb) {
  cfg.validate();
  BatchSchedule sched(src.size(), tgt.size(), cfg.batch_size, seed);
  AdamState<T> adam;
  std::vector<EpochLog> logs;
  std::vector<const SourceExample*> bs;
  std::vector<const TargetExample*> bt;
  for (int e = 0; e < cfg.epochs; ++e) {
    sched.shuffle();
    EpochLog log{e + 1, 0, 0, 0, 0};
    const std::size_t steps = sched.steps_per_epoch();
    for (std::size_t k = 0; k < steps; ++k) {
      sched.batch(k, src, tgt, bs, bt);
      const auto l = joint_train_step(model, bs, bt, cfg, adam, e, lambda2, lambda);
      log.source += l.source;
      log.target += l.target;
      log.reg += l.reg;
      log.total += l.total;
    }
    log.source /= static_cast<double>(steps);
    log.target /= static_cast<double>(steps);
    log.reg /= static_cast<double>(steps);
    log.total /= static_cast<double>(steps);
    logs.push_back(log);
    if (cb) cb(log);
  }
  return logs;
}

}  // namespace detail

/// Joint training of the source generator and every target reconstruction.
template <class T>
std::vector<EpochLog> train_joint(DLNModel<T>& model, const std::vector<SourceExample>& src,
                                  const std::vector<TargetExample>& tgt, const TrainConfig& cfg,
                                  const EpochCallback& cb = {}) {
  model.set_joint_training();
  return detail::run_epochs(model, src, tgt, cfg, cfg.lambda, 0.0, cfg.seed, cb);
}

/// Tokens of `corpus` missing from the shared vocabulary, most frequent first
/// (ties lexicographic), at most `max_new` of them.
template <class T>
Tokens extension_vocabulary(const DLNModel<T>& model, const std::vector<Tokens>& corpus, std::size_t max_new) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus)
    for (const auto& t : s)
      if (!model.vocab().contains(t)) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokens out;
  for (const auto& [t, n] : ranked) {
    if (out.size() >= max_new) break;
    out.push_back(t);
  }
  return out;
}

struct ExtensionReport {
  double initial_reg = 0;
  std::vector<EpochLog> log;
};

/// Registers `style` with extension rows for `extension`, anchors the
/// pretrained θ_PI/θ_W/θ_V, freezes every other style's LN vectors, and
/// trains λ1·L_S + (1−λ1)·L_T + λ2·R on the new corpus.
template <class T>
ExtensionReport extend_to_new_style(DLNModel<T>& model, const std::string& style, const Tokens& extension,
                                    const std::vector<SourceExample>& src, const std::vector<Tokens>& corpus,
                                    const TrainConfig& cfg, const EpochCallback& cb = {}) {
  cfg.validate();
  Rng rng(splitmix64(cfg.seed ^ fnv1a64(style)));
  model.add_style(style, extension, rng);
  model.capture_anchors();
  model.set_extension_training(style);
  ExtensionReport rep;
  rep.initial_reg = regularizer_R(model);
  const auto tgt = prepare_target(model, style, corpus);
  rep.log = detail::run_epochs(model, src, tgt, cfg, cfg.lambda1, cfg.lambda2, splitmix64(cfg.seed + 1), cb);
  return rep;
}

}  // namespace dln
