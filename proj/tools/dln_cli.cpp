// dln: data synthesis, training, extension, generation, evaluation and
// gradient checks from the command line.
//
// Exit codes: 0 success, 1 error, 2 bad dataset spec, 3 checkpoint
// dimensions differ from the configuration, 4 unknown style.

#include <CLI11.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dln/dln.hpp"

namespace fs = std::filesystem;
using namespace dln;

namespace {

constexpr int kExitError = 1;
constexpr int kExitSpec = 2;
constexpr int kExitDims = 3;
constexpr int kExitStyle = 4;

/// A flag that, when given, overrides `key` from the config file.
struct Flag {
  std::string key;
  std::string value;
  CLI::Option* opt = nullptr;
};

struct Command {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::deque<Flag> flags;

  Flag& flag(const std::string& name, const std::string& key, const std::string& help) {
    flags.push_back({key, {}, nullptr});
    auto& f = flags.back();
    f.opt = app->add_option(name, f.value, help);
    return f;
  }

  /// Config file entries with command-line flags applied on top.
  KeyValueFile resolve() const {
    KeyValueFile kv;
    if (!config.empty()) {
      if (!fs::exists(config)) throw FormatError("config file not found: " + config);
      kv = KeyValueFile::load(config);
    }
    for (const auto& f : flags)
      if (f.opt->count() > 0) kv.set(f.key, f.value);
    return kv;
  }
};

Command make_command(CLI::App& root, const std::string& name, const std::string& help, bool needs_out = true) {
  Command c;
  c.app = root.add_subcommand(name, help);
  c.app->add_option("--config", c.config, "key=value configuration file");
  auto* out = c.app->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  return c;
}

std::string require(const KeyValueFile& kv, const std::string& key) {
  auto v = kv.find(key);
  if (!v || v->empty()) throw ArgumentError("missing required setting '" + key + "' (config key or --" + key + ")");
  return *v;
}

void require_path(const std::string& p, const std::string& what) {
  if (!fs::exists(p)) throw FormatError(what + " not found: " + p);
}

/// Refuses to write outputs into an input directory.
void check_distinct(const std::string& out, const std::string& input) {
  if (fs::exists(out) && fs::exists(input) && fs::equivalent(out, input))
    throw ArgumentError("--out must differ from the input directory '" + input + "'");
}

std::string num(double v) { return KeyValueFile::format_number(v); }

class TsvLog {
 public:
  TsvLog(const fs::path& path, const std::string& header) : os_(path) {
    if (!os_) throw FormatError("cannot write '" + path.string() + "'");
    line(header);
  }
  void line(const std::string& s) {
    os_ << s << '\n';
    os_.flush();
    std::cout << s << '\n' << std::flush;
  }

 private:
  std::ofstream os_;
};

std::vector<std::string> style_list(const KeyValueFile& kv, const DatasetFiles& ds) {
  auto styles = detail::split_list(kv.get("styles", ""), ',');
  if (styles.empty()) styles = ds.style_names;
  for (const auto& s : styles)
    if (!ds.style_corpora.count(s)) throw ArgumentError("dataset has no corpus for style '" + s + "'");
  return styles;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Command& c) {
  SyntheticSceneSpec spec;
  try {
    spec = SyntheticSceneSpec::from_keyvalue(c.resolve());
  } catch (const FormatError& e) {
    throw SpecError(e.what());
  }
  const auto ds = generate_synthetic_dataset(spec);
  write_dataset(ds, spec, c.out);
  spec.to_keyvalue().save((fs::path(c.out) / "run.config").string());
  std::cout << "wrote dataset with " << ds.source_train.size() << " source pairs, " << ds.test.size()
            << " test images and styles " << detail::join(ds.style_names, ',') << " to " << c.out << '\n';
  return 0;
}

int cmd_train(const Command& c) {
  const auto kv = c.resolve();
  const std::string dataset = require(kv, "dataset");
  require_path(dataset, "dataset manifest");
  const std::string resume = kv.get("resume", "");
  if (!resume.empty()) {
    require_path(resume, "checkpoint directory");
    check_distinct(c.out, resume);
  }
  ModelConfig mc;
  read_model_keys(kv, mc);
  TrainConfig tc;
  read_train_keys(kv, tc);
  mc.seed = tc.seed;
  const auto vocab_size = static_cast<std::size_t>(kv.get_int("vocab_size", 1000));
  const int save_interval = static_cast<int>(kv.get_int("save_interval", 0));

  const auto ds = load_dataset(dataset);
  mc.image_dim = ds.feature_dim;
  const auto styles = style_list(kv, ds);

  auto model = [&] {
    if (resume.empty()) {
      std::vector<const std::vector<Tokens>*> corpora;
      for (const auto& s : styles) corpora.push_back(&ds.style_corpora.at(s));
      return DLNModel<float>(mc, joint_vocabulary(ds.source_train, corpora, vocab_size), styles);
    }
    auto m = DLNModel<float>::load(resume);
    const auto& rc = m.config();
    if (rc.hidden != mc.hidden || rc.embed != mc.embed || rc.image_dim != mc.image_dim || rc.text_dim != mc.text_dim)
      throw DimensionMismatchError("checkpoint '" + resume + "' has hidden=" + std::to_string(rc.hidden) +
                                   " embed=" + std::to_string(rc.embed) + " image_dim=" +
                                   std::to_string(rc.image_dim) + " text_dim=" + std::to_string(rc.text_dim) +
                                   " but the configuration asks for hidden=" + std::to_string(mc.hidden) +
                                   " embed=" + std::to_string(mc.embed) + " image_dim=" +
                                   std::to_string(mc.image_dim) + " text_dim=" + std::to_string(mc.text_dim));
    for (const auto& s : styles) m.style(s);
    return m;
  }();

  fs::create_directories(c.out);
  KeyValueFile resolved;
  resolved.set("command", "train");
  resolved.set("dataset", dataset);
  resolved.set("styles", detail::join(styles, ','));
  resolved.set("resume", resume);
  resolved.set("vocab_size", vocab_size);
  resolved.set("save_interval", save_interval);
  write_model_keys(resolved, mc);
  write_train_keys(resolved, tc);
  resolved.save((fs::path(c.out) / "run.config").string());

  const auto src = prepare_source(model, ds.source_train);
  std::vector<TargetExample> tgt;
  for (const auto& s : styles) {
    auto part = prepare_target(model, s, ds.style_corpora.at(s));
    tgt.insert(tgt.end(), part.begin(), part.end());
  }
  TsvLog log(fs::path(c.out) / "train.log", "epoch\tL_S\tL_T\tL");
  train_joint(model, src, tgt, tc, [&](const EpochLog& e) {
    log.line(std::to_string(e.epoch) + '\t' + num(e.source) + '\t' + num(e.target) + '\t' + num(e.total));
    if (save_interval > 0 && e.epoch % save_interval == 0) model.save(c.out);
  });
  model.save(c.out);
  return 0;
}

int cmd_extend(const Command& c) {
  const auto kv = c.resolve();
  const std::string checkpoint = require(kv, "checkpoint");
  const std::string dataset = require(kv, "dataset");
  const std::string corpus_path = require(kv, "corpus");
  const std::string style = require(kv, "style");
  require_path(checkpoint, "checkpoint directory");
  require_path(dataset, "dataset manifest");
  require_path(corpus_path, "style corpus");
  check_distinct(c.out, checkpoint);
  TrainConfig tc;
  read_train_keys(kv, tc);
  const auto max_new = static_cast<std::size_t>(kv.get_int("max_new_vocab", 1000));

  auto model = DLNModel<float>::load(checkpoint);
  const auto ds = load_dataset(dataset);
  const auto corpus = read_corpus(corpus_path);
  if (corpus.empty()) throw ArgumentError("style corpus '" + corpus_path + "' is empty");

  fs::create_directories(c.out);
  KeyValueFile resolved;
  resolved.set("command", "extend");
  resolved.set("checkpoint", checkpoint);
  resolved.set("dataset", dataset);
  resolved.set("corpus", corpus_path);
  resolved.set("style", style);
  resolved.set("max_new_vocab", max_new);
  write_train_keys(resolved, tc);
  resolved.save((fs::path(c.out) / "run.config").string());

  const auto src = prepare_source(model, ds.source_train);
  const auto extension = extension_vocabulary(model, corpus, max_new);
  TsvLog log(fs::path(c.out) / "extend.log", "epoch\tL_S\tL_T\tR\tL");
  const auto rep = extend_to_new_style(model, style, extension, src, corpus, tc, [&](const EpochLog& e) {
    log.line(std::to_string(e.epoch) + '\t' + num(e.source) + '\t' + num(e.target) + '\t' + num(e.reg) + '\t' +
             num(e.total));
  });
  std::cout << "style " << style << " added with " << extension.size() << " new tokens; R at start "
            << num(rep.initial_reg) << '\n';
  model.save(c.out);
  return 0;
}

int cmd_generate(const Command& c) {
  const auto kv = c.resolve();
  const std::string checkpoint = require(kv, "checkpoint");
  const std::string features = require(kv, "features");
  const std::string style = kv.get("style", std::string(kSourceStyle));
  const auto beam = kv.get_int("beam", 5);
  const auto max_len = kv.get_int("max_len", 0);
  if (beam < 1) throw ArgumentError("--beam must be at least 1");
  if (max_len < 0) throw ArgumentError("--max-len must be non-negative");
  require_path(checkpoint, "checkpoint directory");
  require_path(features, "feature file");
  check_distinct(c.out, checkpoint);

  auto model = DLNModel<float>::load(checkpoint);
  if (!model.has_style(style)) throw RegistryError(model.unknown_style_message(style));
  const auto feats = load_features(features);

  fs::create_directories(c.out);
  KeyValueFile resolved;
  resolved.set("command", "generate");
  resolved.set("checkpoint", checkpoint);
  resolved.set("features", features);
  resolved.set("style", style);
  resolved.set("beam", beam);
  resolved.set("max_len", max_len);
  resolved.save((fs::path(c.out) / "run.config").string());

  std::vector<std::string> lines;
  for (const auto& s :
       generate_all(model, feats, style, static_cast<std::size_t>(beam), static_cast<std::size_t>(max_len)))
    lines.push_back(join_tokens(s));
  write_lines((fs::path(c.out) / "generated.txt").string(), lines);
  std::cout << "wrote " << lines.size() << " descriptions in style " << style << '\n';
  return 0;
}

int cmd_eval(const Command& c) {
  auto kv = c.resolve();
  const std::string generated = require(kv, "generated");
  if (auto dataset = kv.find("dataset")) {
    require_path(*dataset, "dataset manifest");
    const auto m = DatasetManifest::load(*dataset);
    auto fill = [&](const std::string& key, const std::string& manifest_key) {
      if (!kv.has(key)) kv.set(key, m.path(manifest_key));
    };
    fill("nouns", "test.nouns");
    fill("noun_lexicon", "nouns");
    fill("synonyms", "synonyms");
    fill("classifier_source", "source.text");
    fill("references", "test.text");
    if (auto style = kv.find("style")) fill("classifier_target", "style." + *style);
  }
  EvalInputs in;
  const std::vector<std::string> required{"nouns", "noun_lexicon", "classifier_source", "classifier_target"};
  for (const auto& key : required) require_path(require(kv, key), key);
  require_path(generated, "generated file");
  for (const auto* key : {"synonyms", "references"})
    if (kv.has(key) && !kv.get(key).empty()) require_path(kv.get(key), key);

  in.generated = read_corpus(generated);
  in.reference_nouns = read_noun_sets(kv.get("nouns"));
  if (kv.has("references") && !kv.get("references").empty()) in.references = read_corpus(kv.get("references"));
  in.nouns = NounLexicon::load(kv.get("noun_lexicon"));
  if (kv.has("synonyms") && !kv.get("synonyms").empty()) in.synonyms = SynonymLexicon::load(kv.get("synonyms"));
  in.classifier_source = read_corpus(kv.get("classifier_source"));
  in.classifier_target = read_corpus(kv.get("classifier_target"));
  in.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  in.classifier.seed = static_cast<std::uint64_t>(kv.get_int("classifier_seed", static_cast<long long>(in.classifier.seed)));
  in.threads = eval_threads();

  fs::create_directories(c.out);
  KeyValueFile resolved;
  resolved.set("command", "eval");
  for (const auto* key : {"generated", "nouns", "noun_lexicon", "synonyms", "classifier_source", "classifier_target",
                          "references"})
    resolved.set(key, kv.get(key, ""));
  resolved.set("seed", in.seed);
  resolved.set("classifier_seed", in.classifier.seed);
  resolved.save((fs::path(c.out) / "run.config").string());

  const auto report = evaluate(in).to_keyvalue();
  report.save((fs::path(c.out) / "eval.report").string());
  std::cout << report.str();
  return 0;
}

int cmd_gradcheck(const Command& c, bool inject_bug, bool extension) {
  const auto kv = c.resolve();
  GradcheckOptions opt;
  const std::string dims = kv.get("dims", "small");
  if (dims == "desk") {
    opt.dims.hidden = 64;
    opt.dims.embed = 32;
    opt.dims.vocab = 80;
    opt.dims.image_dim = 64;
    opt.dims.text_dim = kDefaultTextFeatureDim;
  } else if (dims != "small") {
    throw ArgumentError("--dims must be 'small' or 'desk', got '" + dims + "'");
  }
  opt.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  opt.h = kv.get_double("h", opt.h);
  opt.tol = kv.get_double("tol", opt.tol);
  opt.extension = extension;
  opt.inject_sign_flip = inject_bug;

  const auto t0 = std::chrono::steady_clock::now();
  const auto r = check_objective_gradients(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  KeyValueFile rep;
  rep.set("dims", dims);
  rep.set("objective", extension ? "extension" : "joint");
  rep.set("scalars", r.scalars_checked);
  rep.set("max_rel_error", r.max_rel_error);
  rep.set("worst_param", r.worst_param);
  rep.set("worst_index", r.worst_index);
  rep.set("worst_analytic", r.worst_analytic);
  rep.set("worst_numeric", r.worst_numeric);
  rep.set("tolerance", opt.tol);
  rep.set("result", r.passed ? "PASS" : "FAIL");
  std::cout << rep.str() << "seconds=" << num(secs) << '\n';
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    rep.save((fs::path(c.out) / "gradcheck.report").string());
  }
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stylish image description with domain layer norm"};
  app.require_subcommand(1);

  auto synth = make_command(app, "synth", "generate a synthetic dataset from a spec file");
  synth.flag("--seed", "seed", "dataset seed");
  synth.flag("--styles", "styles", "comma-separated target styles");

  auto train = make_command(app, "train", "jointly train the source and target generators");
  train.flag("--seed", "seed", "initialization and shuffling seed");
  train.flag("--dataset", "dataset", "dataset manifest");
  train.flag("--styles", "styles", "comma-separated target styles (default: all in the dataset)");
  train.flag("--epochs", "epochs", "training epochs");
  train.flag("--resume", "resume", "checkpoint directory to continue from");
  train.flag("--lambda", "lambda", "weight of the source loss");
  train.flag("--learning-rate", "learning_rate", "Adam learning rate");
  train.flag("--batch-size", "batch_size", "mini-batch size");
  train.flag("--hidden", "hidden", "LSTM hidden units");
  train.flag("--embed", "embed", "embedding and latent dimension");

  auto extend = make_command(app, "extend", "add a new target style to a trained model");
  extend.flag("--seed", "seed", "seed for new rows and shuffling");
  extend.flag("--checkpoint", "checkpoint", "base checkpoint directory");
  extend.flag("--dataset", "dataset", "dataset manifest with the source pairs");
  extend.flag("--corpus", "corpus", "corpus of the new style");
  extend.flag("--style", "style", "name of the new style");
  extend.flag("--epochs", "epochs", "training epochs");
  extend.flag("--lambda1", "lambda1", "weight of the source loss");
  extend.flag("--lambda2", "lambda2", "weight of the anchor regularizer");

  auto gen = make_command(app, "generate", "describe images in a given style");
  gen.flag("--seed", "seed", "unused; accepted for uniformity");
  gen.flag("--checkpoint", "checkpoint", "checkpoint directory");
  gen.flag("--features", "features", "image feature file");
  gen.flag("--style", "style", "style to generate in");
  gen.flag("--beam", "beam", "beam width (1 = greedy)");
  gen.flag("--max-len", "max_len", "maximum generated tokens (0 = model default)");

  auto eval = make_command(app, "eval", "score generated descriptions");
  eval.flag("--seed", "seed", "random baseline seed");
  eval.flag("--generated", "generated", "generated descriptions, one per line");
  eval.flag("--dataset", "dataset", "dataset manifest supplying default paths");
  eval.flag("--style", "style", "target style for the classifier when --dataset is used");
  eval.flag("--nouns", "nouns", "ground-truth noun sets, one line per item");
  eval.flag("--noun-lexicon", "noun_lexicon", "noun lexicon");
  eval.flag("--synonyms", "synonyms", "synonym lexicon");
  eval.flag("--classifier-source", "classifier_source", "source-style corpus for the classifier");
  eval.flag("--classifier-target", "classifier_target", "target-style corpus for the classifier");
  eval.flag("--references", "references", "reference descriptions for BLEU");

  auto grad = make_command(app, "gradcheck", "finite-difference check of the training objective", false);
  grad.flag("--seed", "seed", "parameter seed");
  grad.flag("--dims", "dims", "small or desk");
  bool inject_bug = false, extension = false;
  grad.app->add_flag("--inject-bug", inject_bug, "negate one gradient to confirm the check fails");
  grad.app->add_flag("--extension", extension, "check the style-extension objective");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  try {
    if (*synth.app) return cmd_synth(synth);
    if (*train.app) return cmd_train(train);
    if (*extend.app) return cmd_extend(extend);
    if (*gen.app) return cmd_generate(gen);
    if (*eval.app) return cmd_eval(eval);
    if (*grad.app) return cmd_gradcheck(grad, inject_bug, extension);
  } catch (const SpecError& e) {
    std::cerr << "spec error: " << e.what() << '\n';
    return kExitSpec;
  } catch (const DimensionMismatchError& e) {
    std::cerr << "dimension mismatch: " << e.what() << '\n';
    return kExitDims;
  } catch (const RegistryError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStyle;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
