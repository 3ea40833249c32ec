#pragma once

// Two (or more) LN-LSTM sentence generators sharing every weight except their
// per-gate layer-norm vectors. Parameter names in the store:
//   embed [V,E], output [H,V], proj.image [E,F_I], lstm.<gate>.{ie,ih}
//   ln.<style>.<gate>.{g,b}, proj.text.<style> [E,F_T]
//   embed.<style>.ext [V_ext,E], output.<style>.ext [H,V_ext]   (extension rows)
//   anchor.{embed,output,proj.image}                             (frozen copies)

#include <filesystem>
#include <map>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dln/checkpoint.hpp"
#include "dln/extractor.hpp"
#include "dln/init.hpp"
#include "dln/keyvalue.hpp"
#include "dln/lnlstm.hpp"
#include "dln/ops.hpp"
#include "dln/param_store.hpp"
#include "dln/text.hpp"

namespace dln {

inline constexpr std::string_view kSourceStyle = "source";

struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::size_t image_dim = 64;
  std::size_t text_dim = kDefaultTextFeatureDim;
  std::size_t max_len = 100;
  double init_range = 0.08;
  std::uint64_t seed = 1;
  std::uint64_t extractor_seed = kDefaultExtractorSeed;

  void validate() const {
    if (hidden == 0 || embed == 0 || image_dim == 0 || text_dim == 0)
      throw ConfigError("model dimensions must be positive");
    if (max_len == 0) throw ConfigError("max_len must be positive");
    if (!(init_range > 0)) throw ConfigError("init_range must be positive");
  }
};

/// The pieces one generator reads. All pointers alias the model's store.
template <class T>
struct GeneratorView {
  std::string style;
  LSTMWeights<T> lstm;
  LNParams<T> ln;
  Tensor<T>* embed = nullptr;
  Tensor<T>* output = nullptr;
  Tensor<T>* embed_ext = nullptr;
  Tensor<T>* output_ext = nullptr;

  std::size_t base_vocab() const { return embed->rows(); }
  std::size_t vocab_size() const { return base_vocab() + (embed_ext ? embed_ext->rows() : 0); }
  std::size_t hidden() const { return lstm.hidden(); }
  std::size_t embed_dim() const { return lstm.embed(); }

  std::span<const T> embedding(TokenId id) const {
    check_id(id);
    const std::size_t E = embed_dim(), V = base_vocab();
    if (id < V) return embed->values().subspan(id * E, E);
    return embed_ext->values().subspan((id - V) * E, E);
  }
  std::span<T> embedding_grad(TokenId id) {
    check_id(id);
    const std::size_t E = embed_dim(), V = base_vocab();
    if (id < V) return embed->grad().subspan(id * E, E);
    return embed_ext->grad().subspan((id - V) * E, E);
  }

  /// out = [θ_V | θ_V,ext]^T h
  void logits(std::span<const T> h, std::span<T> out) const {
    const std::size_t V = base_vocab();
    std::fill(out.begin(), out.end(), T(0));
    gemv_t_acc<T>(output->values(), V, h, out.first(V));
    if (output_ext) gemv_t_acc<T>(output_ext->values(), output_ext->cols(), h, out.subspan(V));
  }

  void logits_backward(std::span<const T> h, std::span<const T> dlogits, std::span<T> dh) {
    const std::size_t V = base_vocab();
    gemv_acc<T>(output->values(), V, dlogits.first(V), dh);
    outer_acc<T>(h, dlogits.first(V), output->grad());
    if (output_ext) {
      gemv_acc<T>(output_ext->values(), output_ext->cols(), dlogits.subspan(V), dh);
      outer_acc<T>(h, dlogits.subspan(V), output_ext->grad());
    }
  }

  void check_id(TokenId id) const {
    if (id >= vocab_size())
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of style '" + style + "' (" +
                       std::to_string(vocab_size()) + ")");
  }
};

/// Teacher-forced decoding loss Σ_k −log p(targets[k]). Step −1 consumes z
/// from a zero state, step 0 consumes BOS, step k consumes targets[k−1]; the
/// logits of every step come from that step's new hidden state. `targets`
/// must already end in EOS when an end-of-sentence prediction is wanted.
/// With `backward`, parameter gradients scaled by `coef` accumulate into the
/// store and coef·∂L/∂z is accumulated into `dz`.
template <class T>
T teacher_forced_loss(GeneratorView<T>& g, std::span<const T> z, const TokenIds& targets, bool backward = false,
                      T coef = T(1), std::span<T> dz = {}) {
  const std::size_t H = g.hidden(), E = g.embed_dim(), V = g.vocab_size();
  if (z.size() != E)
    throw ShapeError("latent code has length " + std::to_string(z.size()) + ", expected " + std::to_string(E));
  if (targets.empty()) throw ArgumentError("teacher_forced_loss: empty target sequence");
  for (TokenId t : targets) g.check_id(t);
  const T eps = static_cast<T>(kLayerNormEps);
  const std::size_t m = targets.size();

  std::vector<LSTMStepCache<T>> caches(m + 1);
  std::vector<std::vector<T>> probs(m, std::vector<T>(V));
  const std::vector<T> zero(H, T(0));
  lnlstm_forward_step<T>(z, zero, zero, g.lstm, g.ln, eps, caches[0]);
  T loss = T(0);
  for (std::size_t k = 0; k < m; ++k) {
    const TokenId in = k == 0 ? kBos : targets[k - 1];
    lnlstm_forward_step<T>(g.embedding(in), caches[k].h, caches[k].c, g.lstm, g.ln, eps, caches[k + 1]);
    g.logits(caches[k + 1].h, probs[k]);
    const T lse = softmax_inplace<T>(probs[k]);
    (void)lse;
    loss -= std::log(std::max(probs[k][targets[k]], std::numeric_limits<T>::min()));
  }
  if (!backward) return loss;

  std::vector<T> dh(H, T(0)), dc(H, T(0)), dh_prev(H), dc_prev(H), dx(E);
  for (std::size_t k = m; k-- > 0;) {
    auto& p = probs[k];
    for (T& v : p) v *= coef;
    p[targets[k]] -= coef;
    g.logits_backward(caches[k + 1].h, p, dh);
    std::fill(dh_prev.begin(), dh_prev.end(), T(0));
    std::fill(dc_prev.begin(), dc_prev.end(), T(0));
    std::fill(dx.begin(), dx.end(), T(0));
    lnlstm_backward_step<T>(caches[k + 1], dh, dc, g.lstm, g.ln, eps, dx, dh_prev, dc_prev);
    const TokenId in = k == 0 ? kBos : targets[k - 1];
    auto eg = g.embedding_grad(in);
    for (std::size_t i = 0; i < E; ++i) eg[i] += dx[i];
    dh.swap(dh_prev);
    dc.swap(dc_prev);
  }
  std::fill(dh_prev.begin(), dh_prev.end(), T(0));
  std::fill(dc_prev.begin(), dc_prev.end(), T(0));
  std::fill(dx.begin(), dx.end(), T(0));
  lnlstm_backward_step<T>(caches[0], dh, dc, g.lstm, g.ln, eps, dx, dh_prev, dc_prev);
  if (!dz.empty())
    for (std::size_t i = 0; i < E; ++i) dz[i] += dx[i];
  return loss;
}

/// Appends EOS to an id sequence.
inline TokenIds with_eos(TokenIds ids) {
  ids.push_back(kEos);
  return ids;
}

struct StyleEntry {
  std::string name;
  Tokens extension;  // tokens appended after the shared vocabulary
  bool extended = false;  // registered after initial training
};

template <class T>
class DLNModel {
 public:
  DLNModel(const ModelConfig& cfg, Vocabulary vocab, const std::vector<std::string>& target_styles)
      : cfg_(cfg), vocab_(std::move(vocab)), extractor_(cfg.text_dim, cfg.extractor_seed) {
    cfg_.validate();
    if (target_styles.empty()) throw ConfigError("model needs at least one target style");
    Rng rng(cfg_.seed);
    const std::size_t V = vocab_.size(), H = cfg_.hidden, E = cfg_.embed;
    store_.add("embed", uniform_init<T>({V, E}, cfg_.init_range, rng));
    store_.add("output", uniform_init<T>({H, V}, cfg_.init_range, rng));
    store_.add("proj.image", uniform_init<T>({E, cfg_.image_dim}, cfg_.init_range, rng));
    add_lstm_weights<T>(store_, H, E, cfg_.init_range, rng);
    add_ln_params<T>(store_, kSourceStyle, H);
    styles_.push_back({std::string(kSourceStyle), {}});
    for (const auto& s : target_styles) add_style(s, {}, rng, false);
  }

  DLNModel(const DLNModel&) = delete;
  DLNModel& operator=(const DLNModel&) = delete;
  DLNModel(DLNModel&&) = default;
  DLNModel& operator=(DLNModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const Vocabulary& vocab() const { return vocab_; }
  const FrozenTextExtractor& extractor() const { return extractor_; }

  std::vector<std::string> styles() const {
    std::vector<std::string> out;
    for (const auto& s : styles_) out.push_back(s.name);
    return out;
  }
  std::vector<std::string> target_styles() const {
    std::vector<std::string> out;
    for (std::size_t i = 1; i < styles_.size(); ++i) out.push_back(styles_[i].name);
    return out;
  }
  bool has_style(const std::string& s) const { return find_style(s) != nullptr; }

  const StyleEntry& style(const std::string& s) const {
    const auto* e = find_style(s);
    if (!e) throw RegistryError(unknown_style_message(s));
    return *e;
  }

  std::string unknown_style_message(const std::string& s) const {
    std::string msg = "unknown style '" + s + "'; registered styles:";
    for (const auto& e : styles_) msg += " " + e.name;
    return msg;
  }

  /// Shared vocabulary followed by the style's extension tokens.
  Vocabulary style_vocab(const std::string& s) const {
    Vocabulary v = vocab_;
    for (const auto& t : style(s).extension) v.add(t);
    return v;
  }

  GeneratorView<T> view(const std::string& s) {
    const auto& entry = style(s);
    GeneratorView<T> g;
    g.style = entry.name;
    g.lstm = bind_lstm_weights(store_);
    g.ln = bind_ln_params(store_, entry.name);
    g.embed = &store_.get("embed");
    g.output = &store_.get("output");
    if (!entry.extension.empty()) {
      g.embed_ext = &store_.get("embed." + entry.name + ".ext");
      g.output_ext = &store_.get("output." + entry.name + ".ext");
    }
    return g;
  }

  /// Registers a new target style: fresh LN (g=1, b=0), a fresh text projection,
  /// and embedding/output rows for `extension` tokens absent from the shared vocabulary.
  void add_style(const std::string& name, const Tokens& extension, Rng& rng, bool extended = true) {
    if (name.empty() || name.find_first_of(" \t=,.") != std::string::npos)
      throw RegistryError("invalid style name '" + name + "'");
    if (has_style(name)) throw RegistryError("style '" + name + "' is already registered");
    std::set<std::string> seen;
    for (const auto& t : extension) {
      if (vocab_.contains(t)) throw VocabError("extension token '" + t + "' already in the shared vocabulary");
      if (!seen.insert(t).second) throw VocabError("duplicate extension token '" + t + "'");
    }
    add_ln_params<T>(store_, name, cfg_.hidden);
    store_.add("proj.text." + name, uniform_init<T>({cfg_.embed, cfg_.text_dim}, cfg_.init_range, rng));
    if (!extension.empty()) {
      store_.add("embed." + name + ".ext", uniform_init<T>({extension.size(), cfg_.embed}, cfg_.init_range, rng));
      store_.add("output." + name + ".ext", uniform_init<T>({cfg_.hidden, extension.size()}, cfg_.init_range, rng));
    }
    styles_.push_back({name, extension, extended});
  }

  /// z = θ_PI · features
  std::vector<T> encode_image(const Tensor<float>& features) const {
    const auto& P = store_.get("proj.image");
    if (features.size() != P.cols())
      throw ShapeError("image features have length " + std::to_string(features.size()) + ", expected " +
                       std::to_string(P.cols()));
    std::vector<T> f(features.values().begin(), features.values().end());
    std::vector<T> z(cfg_.embed, T(0));
    gemv_acc<T>(P.values(), P.cols(), f, z);
    return z;
  }

  Tensor<float> text_features(const Tokens& sentence) const { return extractor_(sentence); }

  /// z = θ_PT(style) · frozen_text_features
  std::vector<T> encode_target_features(const std::string& s, const Tensor<float>& feats) const {
    style(s);
    const auto& P = store_.get("proj.text." + s);
    if (feats.size() != P.cols()) throw ShapeError("text features have wrong length");
    std::vector<T> f(feats.values().begin(), feats.values().end());
    std::vector<T> z(cfg_.embed, T(0));
    gemv_acc<T>(P.values(), P.cols(), f, z);
    return z;
  }
  std::vector<T> encode_target(const std::string& s, const Tokens& sentence) const {
    if (sentence.empty()) throw ArgumentError("encode_target: empty sentence");
    return encode_target_features(s, text_features(sentence));
  }

  /// L_S for one pair; `ids` include the trailing EOS.
  T source_loss(const Tensor<float>& image, const TokenIds& ids, bool backward = false, T coef = T(1)) {
    check_length(ids);
    auto z = encode_image(image);
    auto g = view(std::string(kSourceStyle));
    std::vector<T> dz(cfg_.embed, T(0));
    const T loss = teacher_forced_loss<T>(g, z, ids, backward, coef, dz);
    if (backward) {
      auto& P = store_.get("proj.image");
      std::vector<T> f(image.values().begin(), image.values().end());
      outer_acc<T>(dz, f, P.grad());
    }
    return loss;
  }

  /// L_T (reconstruction) for one target sentence given its frozen features.
  T target_loss(const std::string& s, const Tensor<float>& text_feats, const TokenIds& ids, bool backward = false,
                T coef = T(1)) {
    if (s == kSourceStyle) throw RegistryError("reconstruction loss needs a target style");
    check_length(ids);
    auto z = encode_target_features(s, text_feats);
    auto g = view(s);
    std::vector<T> dz(cfg_.embed, T(0));
    const T loss = teacher_forced_loss<T>(g, z, ids, backward, coef, dz);
    if (backward) {
      auto& P = store_.get("proj.text." + s);
      std::vector<T> f(text_feats.values().begin(), text_feats.values().end());
      outer_acc<T>(dz, f, P.grad());
    }
    return loss;
  }

  T forward_source(const Tensor<float>& image, const Tokens& sentence) {
    return source_loss(image, with_eos(vocab_.encode(sentence)));
  }
  T forward_target_reconstruction(const std::string& s, const Tokens& sentence) {
    if (sentence.empty()) throw ArgumentError("forward_target_reconstruction: empty sentence");
    return target_loss(s, text_features(sentence), with_eos(style_vocab(s).encode(sentence)));
  }

  /// Copies θ_W, θ_V, θ_PI into frozen anchor entries (overwriting earlier anchors).
  void capture_anchors() {
    for (const char* n : {"embed", "output", "proj.image"}) {
      const std::string a = std::string("anchor.") + n;
      Tensor<T> copy(store_.get(n).shape(), std::vector<T>(store_.get(n).values().begin(), store_.get(n).values().end()));
      if (store_.contains(a)) {
        auto& dst = store_.get(a);
        if (dst.shape() != copy.shape()) throw StateError("anchor '" + a + "' changed shape");
        std::copy(copy.values().begin(), copy.values().end(), dst.values().begin());
      } else {
        store_.add(a, std::move(copy), false);
      }
    }
  }
  bool has_anchors() const { return store_.contains("anchor.embed"); }

  /// Trainability for ordinary joint training: everything except anchors.
  void set_joint_training() {
    for (auto& e : store_) e.trainable = e.name.rfind("anchor.", 0) != 0;
  }

  /// Trainability while learning `new_style`: shared weights and the new
  /// style's own parameters train; source and older styles' LN vectors,
  /// text projections and extension rows stay frozen.
  void set_extension_training(const std::string& new_style) {
    style(new_style);
    for (auto& e : store_) {
      const auto& n = e.name;
      if (n.rfind("anchor.", 0) == 0) {
        e.trainable = false;
      } else if (n.rfind("ln.", 0) == 0 || n.rfind("proj.text.", 0) == 0 ||
                 (n.size() > 4 && n.compare(n.size() - 4, 4, ".ext") == 0)) {
        e.trainable = n == "proj.text." + new_style || n.rfind("ln." + new_style + ".", 0) == 0 ||
                      n == "embed." + new_style + ".ext" || n == "output." + new_style + ".ext";
      } else {
        e.trainable = true;
      }
    }
  }

  /// Hyperparameters, style registry, vocabulary and extractor seed.
  KeyValueFile manifest() const {
    KeyValueFile kv;
    kv.set("format", "dln-model");
    kv.set("version", 1);
    kv.set("hidden", cfg_.hidden);
    kv.set("embed", cfg_.embed);
    kv.set("image_dim", cfg_.image_dim);
    kv.set("text_dim", cfg_.text_dim);
    kv.set("max_len", cfg_.max_len);
    kv.set("init_range", cfg_.init_range);
    kv.set("seed", cfg_.seed);
    kv.set("extractor_seed", cfg_.extractor_seed);
    kv.set("vocab", "vocab.txt");
    kv.set("vocab_size", vocab_.size());
    kv.set("checkpoint", "model.ckpt");
    std::string names;
    for (const auto& s : styles_) names += (names.empty() ? "" : ",") + s.name;
    kv.set("styles", names);
    for (const auto& s : styles_) {
      kv.set("style." + s.name + ".ln", "ln." + s.name);
      if (s.name != kSourceStyle) kv.set("style." + s.name + ".text_proj", "proj.text." + s.name);
      kv.set("style." + s.name + ".extended", s.extended ? 1 : 0);
      kv.set("style." + s.name + ".extension_size", s.extension.size());
      if (!s.extension.empty()) kv.set("style." + s.name + ".extension", s.name + ".ext.txt");
    }
    return kv;
  }

  void save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path d(dir);
    vocab_.save((d / "vocab.txt").string());
    for (const auto& s : styles_)
      if (!s.extension.empty()) write_lines((d / (s.name + ".ext.txt")).string(), s.extension);
    save_checkpoint((d / "model.ckpt").string(), store_);
    manifest().save((d / "model.manifest").string());
  }

  /// Rebuilds the structure from the manifest, then copies every checkpoint
  /// entry by name. Missing entries or shape changes raise StateError.
  static DLNModel load(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path d(dir);
    const auto kv = KeyValueFile::load((d / "model.manifest").string());
    if (kv.get("format", "") != "dln-model") throw FormatError("'" + dir + "' does not hold a model manifest");
    ModelConfig cfg;
    cfg.hidden = static_cast<std::size_t>(kv.get_int("hidden"));
    cfg.embed = static_cast<std::size_t>(kv.get_int("embed"));
    cfg.image_dim = static_cast<std::size_t>(kv.get_int("image_dim"));
    cfg.text_dim = static_cast<std::size_t>(kv.get_int("text_dim"));
    cfg.max_len = static_cast<std::size_t>(kv.get_int("max_len"));
    cfg.init_range = kv.get_double("init_range");
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
    cfg.extractor_seed = static_cast<std::uint64_t>(kv.get_int("extractor_seed"));
    auto vocab = Vocabulary::load((d / kv.get("vocab")).string());
    std::vector<std::string> names;
    for (const auto& s : split(kv.get("styles"), ','))
      if (!s.empty() && s != kSourceStyle) names.push_back(s);
    std::vector<std::string> base;
    std::vector<std::pair<std::string, Tokens>> extended;
    for (const auto& s : names) {
      if (kv.get_int("style." + s + ".extended", 0) == 0) {
        base.push_back(s);
        continue;
      }
      Tokens toks;
      if (auto ext = kv.find("style." + s + ".extension"))
        for (const auto& l : read_lines((d / *ext).string()))
          if (!l.empty()) toks.push_back(l);
      extended.emplace_back(s, toks);
    }
    if (base.empty()) throw FormatError("model manifest lists no base target style");
    DLNModel m(cfg, std::move(vocab), base);
    Rng rng(cfg.seed ^ 0xE7u);
    for (const auto& [s, toks] : extended) m.add_style(s, toks, rng);
    auto stored = load_checkpoint<T>((d / kv.get("checkpoint")).string());
    m.assign_from(stored);
    return m;
  }

  /// Copies values and trainable flags entry-by-entry; frozen entries present
  /// only in `src` (anchors) are added.
  void assign_from(const ParamStore<T>& src) {
    for (auto& e : store_)
      if (!src.contains(e.name)) throw StateError("checkpoint lacks parameter '" + e.name + "'");
    for (const auto& e : src) {
      if (!store_.contains(e.name)) {
        if (e.name.rfind("anchor.", 0) != 0) throw StateError("checkpoint has unexpected parameter '" + e.name + "'");
        Tensor<T> copy(e.tensor.shape(), std::vector<T>(e.tensor.values().begin(), e.tensor.values().end()));
        store_.add(e.name, std::move(copy), e.trainable);
        continue;
      }
      auto& dst = store_.entry(e.name);
      if (dst.tensor.shape() != e.tensor.shape())
        throw StateError("parameter '" + e.name + "' has shape " + shape_str(e.tensor.shape()) + " in checkpoint but " +
                         shape_str(dst.tensor.shape()) + " in model");
      std::copy(e.tensor.values().begin(), e.tensor.values().end(), dst.tensor.values().begin());
      dst.trainable = e.trainable;
    }
  }

 private:
  const StyleEntry* find_style(const std::string& s) const {
    for (const auto& e : styles_)
      if (e.name == s) return &e;
    return nullptr;
  }

  void check_length(const TokenIds& ids) const {
    if (ids.size() > cfg_.max_len + 1)
      throw ArgumentError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                          std::to_string(cfg_.max_len));
  }

  ModelConfig cfg_;
  Vocabulary vocab_;
  FrozenTextExtractor extractor_;
  ParamStore<T> store_;
  std::vector<StyleEntry> styles_;
};

}  // namespace dln
