#pragma once

// Deterministic synthetic scenes standing in for paired image/description data
// and unpaired stylish corpora. A scene is a set of (attribute, noun) objects;
// its "image" is a sum of fixed per-noun and per-attribute embeddings plus
// Gaussian noise, and its descriptions render the objects through templates.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "dln/features.hpp"
#include "dln/init.hpp"
#include "dln/keyvalue.hpp"
#include "dln/lexicon.hpp"
#include "dln/text.hpp"

namespace dln {

inline constexpr std::string_view kObjectsSlot = "{objects}";
inline constexpr std::string_view kAttrSlot = "{attr}";
inline constexpr std::string_view kNounSlot = "{noun}";
inline constexpr std::string_view kDefaultPhrase = "a {attr} {noun}";

/// Tokens any template may use besides its own markers.
inline const std::set<std::string>& shared_template_tokens() {
  static const std::set<std::string> s{"a", "and", ",", "."};
  return s;
}

struct StyleTemplates {
  std::string name;
  std::vector<std::string> templates;
  std::set<std::string> markers;
  double synonym_rate = 0.0;
  std::string phrase{kDefaultPhrase};  // rendering of one object
};

struct SyntheticSceneSpec {
  std::uint64_t seed = 7;
  std::size_t feature_dim = 64;
  double noise_scale = 0.1;
  double attribute_weight = 0.5;
  std::vector<std::string> nouns;
  std::vector<std::string> attributes;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  StyleTemplates source;
  std::vector<StyleTemplates> styles;
  std::map<std::string, NounSet> synonyms;
  std::size_t source_train = 2000;
  std::size_t test_images = 200;
  std::size_t style_train = 2000;
  std::size_t max_len = 100;

  void validate() const;
  KeyValueFile to_keyvalue() const;
  static SyntheticSceneSpec from_keyvalue(const KeyValueFile& kv);
};

inline SyntheticSceneSpec default_scene_spec() {
  SyntheticSceneSpec s;
  s.nouns = {"dog",   "cat",  "horse", "bird",  "cup",   "table", "chair", "tree",  "car",   "boat",
             "house", "door", "flower", "lamp", "book",  "bottle", "ball", "hat",   "shirt", "bench",
             "fence", "bike", "clock", "bag",   "plate", "kite",  "road",  "cloud", "bridge", "window"};
  s.attributes = {"red", "blue", "green", "yellow", "black", "white", "small", "big", "old", "wooden"};
  s.synonyms = {{"dog", {"puppy"}}, {"cup", {"mug"}},     {"car", {"automobile"}}, {"boat", {"ship"}},
                {"house", {"cottage"}}, {"bike", {"bicycle"}}, {"hat", {"cap"}}, {"road", {"street"}}};
  s.source = {"source",
              {"there is {objects} .", "this picture shows {objects} .", "in the image we see {objects} ."},
              {"there", "is", "this", "picture", "shows", "in", "the", "image", "we", "see"},
              0.0};
  s.styles.push_back({"romance",
                      {"my darling , {objects} remind me of your sweet kiss ."},
                      {"my", "darling", "remind", "me", "of", "your", "sweet", "kiss"},
                      0.2});
  s.styles.push_back({"lyrics", {"oh baby {objects} ; yeah yeah ;"}, {"oh", "baby", "yeah", ";"}, 0.2});
  return s;
}

/// A third style used for progressive extension experiments.
inline StyleTemplates fairy_tale_style() {
  return {"fairy",
          {"once upon a time {objects} danced with elves ."},
          {"once", "upon", "time", "danced", "with", "elves"},
          0.2};
}

namespace detail {

inline std::vector<std::string> template_tokens(const std::string& tmpl) {
  std::vector<std::string> out;
  for (const auto& t : split(tmpl, ' '))
    if (!t.empty()) out.push_back(t);
  return out;
}

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s.push_back(sep);
    s += v[i];
  }
  return s;
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  for (auto& t : split(s, sep))
    if (!t.empty()) out.push_back(std::move(t));
  return out;
}

}  // namespace detail

inline void SyntheticSceneSpec::validate() const {
  if (nouns.empty()) throw SpecError("spec needs at least one noun");
  if (attributes.empty()) throw SpecError("spec needs at least one attribute");
  if (feature_dim == 0) throw SpecError("feature_dim must be positive");
  if (min_objects < 1 || min_objects > max_objects || max_objects > 4)
    throw SpecError("object counts must satisfy 1 <= min <= max <= 4");
  if (max_objects > nouns.size()) throw SpecError("max_objects exceeds the number of nouns");
  if (styles.empty()) throw SpecError("spec needs at least one target style");
  if (source_train == 0 || test_images == 0 || style_train == 0) throw SpecError("split sizes must be positive");

  std::set<std::string> content(nouns.begin(), nouns.end());
  if (content.size() != nouns.size()) throw SpecError("duplicate noun");
  for (const auto& a : attributes)
    if (!content.insert(a).second) throw SpecError("attribute '" + a + "' collides with another content token");
  for (const auto& [head, syns] : synonyms) {
    if (std::find(nouns.begin(), nouns.end(), head) == nouns.end())
      throw SpecError("synonym head '" + head + "' is not a noun");
    for (const auto& s : syns)
      if (!content.insert(s).second) throw SpecError("synonym '" + s + "' collides with another content token");
  }
  for (const auto& t : shared_template_tokens())
    if (content.count(t)) throw SpecError("content token '" + t + "' collides with a shared template token");

  std::set<std::string> names;
  std::map<std::string, std::string> owner;
  std::vector<const StyleTemplates*> all{&source};
  for (const auto& s : styles) all.push_back(&s);
  for (const auto* st : all) {
    if (st->name.empty() || !names.insert(st->name).second) throw SpecError("style names must be unique and non-empty");
    if (st->templates.empty()) throw SpecError("style '" + st->name + "' has no templates");
    if (st->synonym_rate < 0 || st->synonym_rate > 1) throw SpecError("synonym_rate must lie in [0,1]");
    for (const auto& m : st->markers) {
      if (content.count(m) || shared_template_tokens().count(m))
        throw SpecError("marker '" + m + "' of style '" + st->name + "' collides with a content token");
      auto [it, fresh] = owner.emplace(m, st->name);
      if (!fresh) throw SpecError("marker '" + m + "' shared by styles '" + it->second + "' and '" + st->name + "'");
    }
    for (const auto& tmpl : st->templates) {
      std::size_t slots = 0;
      for (const auto& tok : detail::template_tokens(tmpl)) {
        if (tok.front() == '{') {
          if (tok != kObjectsSlot) throw SpecError("template '" + tmpl + "' references unknown slot " + tok);
          ++slots;
        } else if (!st->markers.count(tok) && !shared_template_tokens().count(tok)) {
          throw SpecError("template token '" + tok + "' is not a marker of style '" + st->name + "'");
        } else if (tokenize(tok) != Tokens{tok}) {
          throw SpecError("template token '" + tok + "' is not a single normalized token");
        }
      }
      if (slots != 1) throw SpecError("template '" + tmpl + "' must contain exactly one " + std::string(kObjectsSlot));
    }
    std::size_t attr_slots = 0, noun_slots = 0;
    for (const auto& tok : detail::template_tokens(st->phrase)) {
      if (tok == kAttrSlot) ++attr_slots;
      else if (tok == kNounSlot) ++noun_slots;
      else if (tok.front() == '{') throw SpecError("phrase '" + st->phrase + "' references unknown slot " + tok);
      else if (!st->markers.count(tok) && !shared_template_tokens().count(tok))
        throw SpecError("phrase token '" + tok + "' is not a marker of style '" + st->name + "'");
    }
    if (attr_slots != 1 || noun_slots != 1)
      throw SpecError("phrase '" + st->phrase + "' must contain {attr} and {noun} exactly once");
  }
}

inline KeyValueFile SyntheticSceneSpec::to_keyvalue() const {
  KeyValueFile kv;
  kv.set("seed", seed);
  kv.set("feature_dim", feature_dim);
  kv.set("noise_scale", noise_scale);
  kv.set("attribute_weight", attribute_weight);
  kv.set("nouns", detail::join(nouns, ','));
  kv.set("attributes", detail::join(attributes, ','));
  kv.set("min_objects", min_objects);
  kv.set("max_objects", max_objects);
  kv.set("source_train", source_train);
  kv.set("test_images", test_images);
  kv.set("style_train", style_train);
  kv.set("max_len", max_len);
  auto put_style = [&](const std::string& prefix, const StyleTemplates& st) {
    kv.set(prefix + ".templates", detail::join(st.templates, '|'));
    kv.set(prefix + ".markers", detail::join({st.markers.begin(), st.markers.end()}, ','));
    kv.set(prefix + ".synonym_rate", st.synonym_rate);
    kv.set(prefix + ".phrase", st.phrase);
  };
  put_style("source", source);
  std::vector<std::string> names;
  for (const auto& s : styles) names.push_back(s.name);
  kv.set("styles", detail::join(names, ','));
  for (const auto& s : styles) put_style("style." + s.name, s);
  for (const auto& [head, syns] : synonyms) kv.set("synonym." + head, detail::join({syns.begin(), syns.end()}, ','));
  return kv;
}

inline SyntheticSceneSpec SyntheticSceneSpec::from_keyvalue(const KeyValueFile& kv) {
  SyntheticSceneSpec s = default_scene_spec();
  try {
    s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(s.seed)));
    s.feature_dim = static_cast<std::size_t>(kv.get_int("feature_dim", static_cast<long long>(s.feature_dim)));
    s.noise_scale = kv.get_double("noise_scale", s.noise_scale);
    s.attribute_weight = kv.get_double("attribute_weight", s.attribute_weight);
    if (auto v = kv.find("nouns")) s.nouns = detail::split_list(*v, ',');
    if (auto v = kv.find("attributes")) s.attributes = detail::split_list(*v, ',');
    s.min_objects = static_cast<std::size_t>(kv.get_int("min_objects", static_cast<long long>(s.min_objects)));
    s.max_objects = static_cast<std::size_t>(kv.get_int("max_objects", static_cast<long long>(s.max_objects)));
    s.source_train = static_cast<std::size_t>(kv.get_int("source_train", static_cast<long long>(s.source_train)));
    s.test_images = static_cast<std::size_t>(kv.get_int("test_images", static_cast<long long>(s.test_images)));
    s.style_train = static_cast<std::size_t>(kv.get_int("style_train", static_cast<long long>(s.style_train)));
    s.max_len = static_cast<std::size_t>(kv.get_int("max_len", static_cast<long long>(s.max_len)));
    auto get_style = [&](const std::string& prefix, StyleTemplates& st) {
      if (auto v = kv.find(prefix + ".templates")) st.templates = detail::split_list(*v, '|');
      if (auto v = kv.find(prefix + ".markers")) {
        auto m = detail::split_list(*v, ',');
        st.markers = {m.begin(), m.end()};
      }
      st.synonym_rate = kv.get_double(prefix + ".synonym_rate", st.synonym_rate);
      st.phrase = kv.get(prefix + ".phrase", st.phrase);
    };
    get_style("source", s.source);
    if (auto v = kv.find("styles")) {
      std::vector<StyleTemplates> styles;
      for (const auto& name : detail::split_list(*v, ',')) {
        StyleTemplates st{name, {}, {}, 0.0};
        for (const auto& d : s.styles)
          if (d.name == name) st = d;
        if (name == "fairy" && st.templates.empty()) st = fairy_tale_style();
        get_style("style." + name, st);
        styles.push_back(std::move(st));
      }
      s.styles = std::move(styles);
    } else {
      for (auto& st : s.styles) get_style("style." + st.name, st);
    }
    bool custom_synonyms = false;
    std::map<std::string, NounSet> syn;
    for (const auto& [k, v] : kv.entries())
      if (k.rfind("synonym.", 0) == 0) {
        custom_synonyms = true;
        auto list = detail::split_list(v, ',');
        syn[k.substr(8)] = {list.begin(), list.end()};
      }
    if (custom_synonyms || kv.has("nouns")) s.synonyms = std::move(syn);
  } catch (const FormatError& e) {
    throw SpecError(e.what());
  }
  s.validate();
  return s;
}

struct SceneObject {
  std::size_t noun;
  std::size_t attribute;
};

struct PairedExample {
  Tensor<float> features;
  Tokens description;
};

struct TestItem {
  Tensor<float> features;
  Tokens reference;  // unstylish ground-truth description
  NounSet nouns;     // ground-truth noun set
};

struct SyntheticDataset {
  std::vector<PairedExample> source_train;
  std::vector<TestItem> test;
  std::vector<std::string> style_names;
  std::map<std::string, std::vector<Tokens>> style_corpora;
  NounLexicon nouns;
  SynonymLexicon synonyms;
};

class SceneGenerator {
 public:
  explicit SceneGenerator(const SyntheticSceneSpec& spec) : spec_(spec) {
    spec_.validate();
    Rng rng(splitmix64(spec_.seed ^ 0xFEA7u));
    auto make = [&](std::size_t n) {
      std::vector<std::vector<float>> e(n, std::vector<float>(spec_.feature_dim));
      for (auto& v : e)
        for (float& x : v) x = static_cast<float>(standard_normal(rng));
      return e;
    };
    noun_emb_ = make(spec_.nouns.size());
    attr_emb_ = make(spec_.attributes.size());
  }

  std::vector<SceneObject> sample_scene(Rng& rng) const {
    const std::size_t span = spec_.max_objects - spec_.min_objects + 1;
    const std::size_t count = spec_.min_objects + uniform_index(rng, span);
    std::vector<std::size_t> idx(spec_.nouns.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<SceneObject> objs;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + uniform_index(rng, idx.size() - k);
      std::swap(idx[k], idx[j]);
      objs.push_back({idx[k], uniform_index(rng, spec_.attributes.size())});
    }
    std::sort(objs.begin(), objs.end(), [](const auto& a, const auto& b) { return a.noun < b.noun; });
    return objs;
  }

  Tensor<float> features(const std::vector<SceneObject>& scene, Rng& rng) const {
    Tensor<float> f({spec_.feature_dim});
    for (const auto& o : scene)
      for (std::size_t i = 0; i < spec_.feature_dim; ++i)
        f[i] += noun_emb_[o.noun][i] + static_cast<float>(spec_.attribute_weight) * attr_emb_[o.attribute][i];
    for (std::size_t i = 0; i < spec_.feature_dim; ++i)
      f[i] += static_cast<float>(spec_.noise_scale * standard_normal(rng));
    return f;
  }

  Tokens render(const std::vector<SceneObject>& scene, const StyleTemplates& style, Rng& rng) const {
    std::vector<Tokens> phrases;
    for (const auto& o : scene) {
      std::string noun = spec_.nouns[o.noun];
      auto syn = spec_.synonyms.find(noun);
      if (style.synonym_rate > 0 && syn != spec_.synonyms.end() && !syn->second.empty() &&
          uniform_real(rng, 0, 1) < style.synonym_rate) {
        auto it = syn->second.begin();
        std::advance(it, uniform_index(rng, syn->second.size()));
        noun = *it;
      }
      Tokens phrase;
      for (const auto& tok : detail::template_tokens(style.phrase)) {
        if (tok == kAttrSlot) phrase.push_back(spec_.attributes[o.attribute]);
        else if (tok == kNounSlot) phrase.push_back(noun);
        else phrase.push_back(tok);
      }
      phrases.push_back(std::move(phrase));
    }
    Tokens objects;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (i > 0) {
        if (i + 1 == phrases.size()) objects.push_back("and");
        else objects.push_back(",");
      }
      objects.insert(objects.end(), phrases[i].begin(), phrases[i].end());
    }
    const auto& tmpl = style.templates[uniform_index(rng, style.templates.size())];
    Tokens out;
    for (const auto& tok : detail::template_tokens(tmpl)) {
      if (tok == kObjectsSlot) out.insert(out.end(), objects.begin(), objects.end());
      else out.push_back(tok);
    }
    return out;
  }

  NounSet noun_set(const std::vector<SceneObject>& scene) const {
    NounSet s;
    for (const auto& o : scene) s.insert(spec_.nouns[o.noun]);
    return s;
  }

  const SyntheticSceneSpec& spec() const { return spec_; }

 private:
  SyntheticSceneSpec spec_;
  std::vector<std::vector<float>> noun_emb_;
  std::vector<std::vector<float>> attr_emb_;
};

inline SyntheticDataset generate_synthetic_dataset(const SyntheticSceneSpec& spec) {
  SceneGenerator gen(spec);
  SyntheticDataset ds;
  Rng rng(splitmix64(spec.seed));

  std::unordered_set<std::string> train_text;
  for (std::size_t i = 0; i < spec.source_train; ++i) {
    auto scene = gen.sample_scene(rng);
    PairedExample ex{gen.features(scene, rng), gen.render(scene, spec.source, rng)};
    train_text.insert(join_tokens(ex.description));
    ds.source_train.push_back(std::move(ex));
  }
  while (ds.test.size() < spec.test_images) {
    auto scene = gen.sample_scene(rng);
    auto feats = gen.features(scene, rng);
    auto ref = gen.render(scene, spec.source, rng);
    if (train_text.count(join_tokens(ref))) continue;  // keep splits disjoint
    ds.test.push_back({std::move(feats), std::move(ref), gen.noun_set(scene)});
  }
  for (const auto& style : spec.styles) {
    Rng srng(splitmix64(spec.seed ^ fnv1a64(style.name)));
    auto& corpus = ds.style_corpora[style.name];
    for (std::size_t i = 0; i < spec.style_train; ++i) corpus.push_back(gen.render(gen.sample_scene(srng), style, srng));
    ds.style_names.push_back(style.name);
  }

  NounSet nouns(spec.nouns.begin(), spec.nouns.end());
  for (const auto& [head, syns] : spec.synonyms) nouns.insert(syns.begin(), syns.end());
  ds.nouns = NounLexicon(std::move(nouns));
  ds.synonyms = SynonymLexicon(spec.synonyms);
  return ds;
}

/// Paths of an on-disk dataset, resolved relative to its manifest.
struct DatasetManifest {
  std::filesystem::path dir;
  KeyValueFile kv;

  static DatasetManifest load(const std::string& path) {
    DatasetManifest m{std::filesystem::path(path).parent_path(), KeyValueFile::load(path)};
    return m;
  }
  std::string path(const std::string& key) const { return (dir / kv.get(key)).string(); }
  std::vector<std::string> styles() const { return detail::split_list(kv.get("styles"), ','); }
  std::string style_path(const std::string& style) const { return path("style." + style); }
};

inline std::vector<std::string> noun_set_lines(const std::vector<TestItem>& test) {
  std::vector<std::string> lines;
  for (const auto& t : test) lines.push_back(detail::join({t.nouns.begin(), t.nouns.end()}, ' '));
  return lines;
}

/// Writes every split, the lexicons, and `dataset.manifest` under `dir`.
inline void write_dataset(const SyntheticDataset& ds, const SyntheticSceneSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path d(dir);
  auto lines = [](const auto& sentences) {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.push_back(join_tokens(s));
    return out;
  };
  std::vector<Tokens> src_text;
  std::vector<Tensor<float>> src_feats, test_feats;
  std::vector<Tokens> test_text;
  for (const auto& ex : ds.source_train) {
    src_text.push_back(ex.description);
    src_feats.push_back(ex.features);
  }
  for (const auto& t : ds.test) {
    test_text.push_back(t.reference);
    test_feats.push_back(t.features);
  }
  write_lines((d / "source.train.txt").string(), lines(src_text));
  save_features((d / "source.train.features").string(), src_feats);
  write_lines((d / "test.txt").string(), lines(test_text));
  save_features((d / "test.features").string(), test_feats);
  write_lines((d / "test.nouns").string(), noun_set_lines(ds.test));
  for (const auto& name : ds.style_names) write_lines((d / (name + ".train.txt")).string(), lines(ds.style_corpora.at(name)));
  ds.nouns.save((d / "nouns.txt").string());
  ds.synonyms.save((d / "synonyms.txt").string());

  KeyValueFile m;
  m.set("seed", spec.seed);
  m.set("feature_dim", spec.feature_dim);
  m.set("max_len", spec.max_len);
  m.set("source.text", "source.train.txt");
  m.set("source.features", "source.train.features");
  m.set("test.text", "test.txt");
  m.set("test.features", "test.features");
  m.set("test.nouns", "test.nouns");
  m.set("styles", detail::join(ds.style_names, ','));
  for (const auto& name : ds.style_names) m.set("style." + name, name + ".train.txt");
  m.set("nouns", "nouns.txt");
  m.set("synonyms", "synonyms.txt");
  m.save((d / "dataset.manifest").string());
}

}  // namespace dln
