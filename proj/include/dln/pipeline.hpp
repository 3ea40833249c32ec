#pragma once

// Glue shared by the command-line tool and the end-to-end checks: on-disk
// datasets, key=value run configuration, and the evaluation report.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "dln/classifier.hpp"
#include "dln/decoding.hpp"
#include "dln/features.hpp"
#include "dln/metrics.hpp"
#include "dln/training.hpp"

namespace dln {

struct DatasetFiles {
  std::size_t feature_dim = 0;
  std::vector<PairedExample> source_train;
  std::vector<Tensor<float>> test_features;
  std::vector<Tokens> test_references;
  std::vector<NounSet> test_nouns;
  std::vector<std::string> style_names;
  std::map<std::string, std::vector<Tokens>> style_corpora;
  NounLexicon nouns;
  SynonymLexicon synonyms;
};

inline std::vector<NounSet> read_noun_sets(const std::string& path) {
  std::vector<NounSet> out;
  for (const auto& line : read_lines(path)) {
    const auto toks = detail::split_list(line, ' ');
    out.emplace_back(toks.begin(), toks.end());
  }
  return out;
}

inline DatasetFiles load_dataset(const std::string& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) throw FormatError("dataset manifest not found: " + manifest_path);
  const auto m = DatasetManifest::load(manifest_path);
  DatasetFiles ds;
  ds.feature_dim = static_cast<std::size_t>(m.kv.get_int("feature_dim"));
  const auto text = read_corpus(m.path("source.text"));
  const auto feats = load_features(m.path("source.features"));
  if (text.size() != feats.size())
    throw FormatError("source split has " + std::to_string(text.size()) + " sentences but " +
                      std::to_string(feats.size()) + " feature vectors");
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (feats[i].size() != ds.feature_dim)
      throw FormatError("source feature " + std::to_string(i + 1) + " has dimension " +
                        std::to_string(feats[i].size()) + ", manifest says " + std::to_string(ds.feature_dim));
    ds.source_train.push_back({feats[i], text[i]});
  }
  ds.test_features = load_features(m.path("test.features"));
  ds.test_references = read_corpus(m.path("test.text"));
  ds.test_nouns = read_noun_sets(m.path("test.nouns"));
  if (ds.test_nouns.size() != ds.test_features.size() || ds.test_references.size() != ds.test_features.size())
    throw FormatError("test split files disagree on the number of items");
  for (const auto& s : m.styles()) {
    ds.style_names.push_back(s);
    ds.style_corpora[s] = read_corpus(m.style_path(s));
  }
  ds.nouns = NounLexicon::load(m.path("nouns"));
  ds.synonyms = SynonymLexicon::load(m.path("synonyms"));
  return ds;
}

/// Shared vocabulary over the source descriptions and the given style corpora.
inline Vocabulary joint_vocabulary(const std::vector<PairedExample>& source,
                                   const std::vector<const std::vector<Tokens>*>& corpora, std::size_t max_size) {
  std::vector<Tokens> all;
  for (const auto& ex : source) all.push_back(ex.description);
  for (const auto* c : corpora) all.insert(all.end(), c->begin(), c->end());
  return build_vocab(all, max_size);
}

// ---------------------------------------------------------------------------
// key=value configuration

inline void read_model_keys(const KeyValueFile& kv, ModelConfig& c) {
  c.hidden = static_cast<std::size_t>(kv.get_int("hidden", static_cast<long long>(c.hidden)));
  c.embed = static_cast<std::size_t>(kv.get_int("embed", static_cast<long long>(c.embed)));
  c.max_len = static_cast<std::size_t>(kv.get_int("max_len", static_cast<long long>(c.max_len)));
  c.text_dim = static_cast<std::size_t>(kv.get_int("text_dim", static_cast<long long>(c.text_dim)));
  c.init_range = kv.get_double("init_range", c.init_range);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.extractor_seed =
      static_cast<std::uint64_t>(kv.get_int("extractor_seed", static_cast<long long>(c.extractor_seed)));
}

inline void write_model_keys(KeyValueFile& kv, const ModelConfig& c) {
  kv.set("hidden", c.hidden);
  kv.set("embed", c.embed);
  kv.set("max_len", c.max_len);
  kv.set("text_dim", c.text_dim);
  kv.set("init_range", c.init_range);
  kv.set("extractor_seed", c.extractor_seed);
}

inline void read_train_keys(const KeyValueFile& kv, TrainConfig& c) {
  c.lambda = kv.get_double("lambda", c.lambda);
  c.lambda1 = kv.get_double("lambda1", c.lambda1);
  c.lambda2 = kv.get_double("lambda2", c.lambda2);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", static_cast<long long>(c.batch_size)));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  auto& o = c.optim;
  o.learning_rate = kv.get_double("learning_rate", o.learning_rate);
  o.beta1 = kv.get_double("beta1", o.beta1);
  o.beta2 = kv.get_double("beta2", o.beta2);
  o.epsilon = kv.get_double("epsilon", o.epsilon);
  o.decay_factor = kv.get_double("decay_factor", o.decay_factor);
  o.decay_interval_epochs = static_cast<int>(kv.get_int("decay_interval_epochs", o.decay_interval_epochs));
  o.clip_norm = kv.get_double("clip_norm", o.clip_norm);
  c.validate();
}

inline void write_train_keys(KeyValueFile& kv, const TrainConfig& c) {
  kv.set("seed", c.seed);
  kv.set("lambda", c.lambda);
  kv.set("lambda1", c.lambda1);
  kv.set("lambda2", c.lambda2);
  kv.set("epochs", c.epochs);
  kv.set("batch_size", c.batch_size);
  kv.set("learning_rate", c.optim.learning_rate);
  kv.set("beta1", c.optim.beta1);
  kv.set("beta2", c.optim.beta2);
  kv.set("epsilon", c.optim.epsilon);
  kv.set("decay_factor", c.optim.decay_factor);
  kv.set("decay_interval_epochs", c.optim.decay_interval_epochs);
  kv.set("clip_norm", c.optim.clip_norm);
}

// ---------------------------------------------------------------------------
// Evaluation

/// Worker count for evaluation: DLN_THREADS if set (minimum 1), otherwise
/// the hardware concurrency.
inline std::size_t eval_threads() {
  if (const char* env = std::getenv("DLN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must only
/// write to slot i of its output.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct EvalInputs {
  std::vector<Tokens> generated;
  std::vector<NounSet> reference_nouns;
  std::vector<Tokens> references;  // optional; enables BLEU
  NounLexicon nouns;
  SynonymLexicon synonyms;
  std::vector<Tokens> classifier_source;
  std::vector<Tokens> classifier_target;
  ClassifierConfig classifier;
  std::uint64_t seed = 1;  // random baseline draws
  std::size_t threads = 1;
};

struct MetricSummary {
  double f = 0, p = 0, r = 0;
  double n_p = 0, n_r = 0;  // mean numerators
  double transfer = 0;
};

struct EvalReport {
  std::size_t items = 0;
  MetricSummary model;
  MetricSummary random;
  std::vector<double> bleu;  // BLEU-1..4 when references were given
  ClassifierTrainReport classifier;

  KeyValueFile to_keyvalue() const {
    KeyValueFile kv;
    kv.set("items", items);
    auto put = [&](const std::string& p, const MetricSummary& m) {
      kv.set(p + "content.f", m.f);
      kv.set(p + "content.p", m.p);
      kv.set(p + "content.r", m.r);
      kv.set(p + "content.n_p", m.n_p);
      kv.set(p + "content.n_r", m.n_r);
      kv.set(p + "transfer_accuracy", m.transfer);
    };
    put("", model);
    for (std::size_t n = 0; n < bleu.size(); ++n) kv.set("bleu" + std::to_string(n + 1), bleu[n]);
    put("random.", random);
    kv.set("classifier.epochs", classifier.epochs);
    kv.set("classifier.train_accuracy", classifier.train_accuracy);
    return kv;
  }
};

/// Nouns of the lexicon that occur in `corpus`.
inline NounLexicon corpus_nouns(const std::vector<Tokens>& corpus, const NounLexicon& lex) {
  NounSet s;
  for (const auto& sent : corpus)
    for (const auto& t : sent)
      if (lex.contains(t)) s.insert(t);
  return NounLexicon(std::move(s));
}

namespace detail {

inline MetricSummary summarize(const std::vector<Tokens>& sentences, const std::vector<NounSet>& refs,
                               const EvalInputs& in, const StyleClassifier& clf) {
  const std::size_t n = sentences.size();
  std::vector<ContentSimilarity> cs(n);
  std::vector<double> score(n);
  parallel_for(n, in.threads, [&](std::size_t i) {
    cs[i] = content_similarity(refs[i], extract_nouns(sentences[i], in.nouns), in.synonyms);
    score[i] = clf.probability(sentences[i]);
  });
  MetricSummary m;
  for (const auto& c : cs) {
    m.f += c.f;
    m.p += c.p;
    m.r += c.r;
    m.n_p += static_cast<double>(c.n_p);
    m.n_r += static_cast<double>(c.n_r);
  }
  const double d = static_cast<double>(n);
  m.f /= d;
  m.p /= d;
  m.r /= d;
  m.n_p /= d;
  m.n_r /= d;
  m.transfer = transfer_accuracy_from_scores(score);
  return m;
}

}  // namespace detail

/// Content similarity, transfer accuracy and optional BLEU for `generated`,
/// plus the random baseline that draws as many nouns as each reference has
/// from the nouns of the target corpus.
inline EvalReport evaluate(const EvalInputs& in, const StyleClassifier& clf) {
  const std::size_t n = in.generated.size();
  if (n == 0) throw ArgumentError("evaluate: no generated sentences");
  if (in.reference_nouns.size() != n)
    throw ArgumentError("evaluate: " + std::to_string(n) + " generated sentences but " +
                        std::to_string(in.reference_nouns.size()) + " reference noun sets");
  if (!in.references.empty() && in.references.size() != n)
    throw ArgumentError("evaluate: reference count does not match generated count");
  EvalReport rep;
  rep.items = n;
  rep.model = detail::summarize(in.generated, in.reference_nouns, in, clf);
  if (!in.references.empty())
    for (int k = 1; k <= 4; ++k) rep.bleu.push_back(bleu(in.generated, in.references, k));

  const NounLexicon pool = corpus_nouns(in.classifier_target, in.nouns);
  if (pool.empty()) throw ArgumentError("evaluate: target corpus contains no lexicon nouns");
  Rng rng(in.seed);
  std::vector<Tokens> random;
  for (const auto& ref : in.reference_nouns) random.push_back(random_baseline(ref.size(), pool, rng));
  rep.random = detail::summarize(random, in.reference_nouns, in, clf);
  return rep;
}

inline EvalReport evaluate(const EvalInputs& in) {
  auto [clf, crep] = StyleClassifier::train(in.classifier_source, in.classifier_target, in.classifier);
  auto rep = evaluate(in, clf);
  rep.classifier = crep;
  return rep;
}

/// Decodes every feature vector with `style`.
template <class T>
std::vector<Tokens> generate_all(DLNModel<T>& model, const std::vector<Tensor<float>>& features,
                                 const std::string& style, std::size_t beam, std::size_t max_len = 0) {
  const auto vocab = model.style_vocab(style);
  std::vector<Tokens> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(vocab.decode(generate(model, f, style, beam, max_len).tokens));
  return out;
}

}  // namespace dln
