#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dln/selfcheck.hpp"
#include "dln/training.hpp"
#include "test_helpers.hpp"

using namespace dln;

namespace {

Vocabulary word_vocab(std::size_t words) {
  Vocabulary v;
  for (std::size_t i = 0; i < words; ++i) v.add("w" + std::to_string(i));
  return v;
}

ModelConfig small_config(std::size_t H = 8, std::size_t E = 6) {
  ModelConfig c;
  c.hidden = H;
  c.embed = E;
  c.image_dim = 5;
  c.text_dim = 16;
  c.seed = 3;
  return c;
}

Tensor<float> random_image(std::size_t n, Rng& rng) {
  Tensor<float> t({n});
  for (auto& x : t.values()) x = static_cast<float>(standard_normal(rng));
  return t;
}

std::vector<double> grads_of(ParamStore<double>& s, const std::string& name) {
  auto g = s.get(name).grad();
  return {g.begin(), g.end()};
}

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

bool ln_grads_zero(DLNModel<double>& m, const std::string& style) {
  for (std::size_t g = 0; g < kGates; ++g)
    for (bool gain : {true, false})
      if (!all_zero(m.params().get(ln_param_name(style, g, gain)).grad())) return false;
  return true;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// Independent straight-line decoder used as an oracle.
struct OracleDecoder {
  const ParamStore<double>& s;
  std::string style;
  std::size_t H, E, V;

  std::vector<double> ln(const std::vector<double>& a, const std::string& gate) const {
    double mu = 0, var = 0;
    for (double x : a) mu += x;
    mu /= a.size();
    for (double x : a) var += (x - mu) * (x - mu);
    const double sigma = std::sqrt(var / a.size());
    const auto& g = s.get("ln." + style + "." + gate + ".g");
    const auto& b = s.get("ln." + style + "." + gate + ".b");
    std::vector<double> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = g[k] * (a[k] - mu) / (sigma + 1e-5) + b[k];
    return out;
  }

  void step(const std::vector<double>& x, std::vector<double>& h, std::vector<double>& c) const {
    std::map<std::string, std::vector<double>> act;
    for (const char* gate : {"i", "f", "o", "u"}) {
      const auto& Wx = s.get(std::string("lstm.") + gate + ".ie");
      const auto& Wh = s.get(std::string("lstm.") + gate + ".ih");
      std::vector<double> a(H, 0.0);
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t k = 0; k < E; ++k) a[r] += Wx.at(r, k) * x[k];
        for (std::size_t k = 0; k < H; ++k) a[r] += Wh.at(r, k) * h[k];
      }
      auto n = ln(a, gate);
      for (double& v : n) v = std::string(gate) == "u" ? std::tanh(v) : 1.0 / (1.0 + std::exp(-v));
      act[gate] = n;
    }
    for (std::size_t k = 0; k < H; ++k) {
      c[k] = act["f"][k] * c[k] + act["i"][k] * act["u"][k];
      h[k] = act["o"][k] * std::tanh(c[k]);
    }
  }

  double loss(const std::vector<double>& z, const TokenIds& targets) const {
    std::vector<double> h(H, 0.0), c(H, 0.0);
    step(z, h, c);
    const auto& emb = s.get("embed");
    const auto& out = s.get("output");
    double total = 0;
    TokenId in = kBos;
    for (TokenId t : targets) {
      std::vector<double> x(E);
      for (std::size_t k = 0; k < E; ++k) x[k] = emb.at(in, k);
      step(x, h, c);
      std::vector<double> logits(V, 0.0);
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t k = 0; k < H; ++k) logits[v] += out.at(k, v) * h[k];
      double z_sum = 0;
      for (double l : logits) z_sum += std::exp(l);
      total += std::log(z_sum) - logits[t];
      in = t;
    }
    return total;
  }
};

}  // namespace

TEST(Model, EncodeImage) {
  DLNModel<double> m(small_config(4, 5), word_vocab(3), {"t"});
  auto& P = m.params().get("proj.image");
  for (auto& v : P.values()) v = 0;
  for (std::size_t i = 0; i < 5; ++i) P.at(i, i) = 1;
  Tensor<float> unit({5});
  unit[2] = 1;
  EXPECT_EQ(m.encode_image(unit), (std::vector<double>{0, 0, 1, 0, 0}));
  EXPECT_EQ(m.encode_image(Tensor<float>({5})), std::vector<double>(5, 0.0));
  EXPECT_THROW(m.encode_image(Tensor<float>({4})), ShapeError);

  Rng rng(5);
  test_util::randomize(m.params(), 9);
  auto f = random_image(5, rng);
  auto z = m.encode_image(f);
  for (std::size_t r = 0; r < 5; ++r) {
    double acc = 0;
    for (std::size_t k = 0; k < 5; ++k) acc += P.at(r, k) * static_cast<double>(f[k]);
    EXPECT_NEAR(z[r], acc, 1e-12);
  }
}

TEST(Model, EncodeTarget) {
  DLNModel<double> m(small_config(), word_vocab(4), {"t"});
  const Tokens s{"w0", "w1", "w2"};
  EXPECT_EQ(m.encode_target("t", s), m.encode_target("t", s));
  EXPECT_NE(m.encode_target("t", s), m.encode_target("t", Tokens{"w2", "w1", "w0"}));
  EXPECT_THROW(m.encode_target("t", Tokens{}), ArgumentError);
  EXPECT_THROW(m.encode_target("nope", s), RegistryError);
  for (auto& v : m.params().get("proj.text.t").values()) v = 0;
  EXPECT_EQ(m.encode_target("t", s), std::vector<double>(6, 0.0));
}

TEST(Model, UniformPredictionsGiveLogVBound) {
  auto cfg = small_config();
  cfg.init_range = 1e-4;
  DLNModel<double> m(cfg, word_vocab(8), {"t"});
  ASSERT_EQ(m.vocab().size(), 12u);
  Rng rng(1);
  const TokenIds ids{4, 5, 6, 7, kEos};
  const double l = m.source_loss(random_image(5, rng), ids);
  EXPECT_NEAR(l / (5 * std::log(12.0)), 1.0, 0.02);
  const double lt = m.target_loss("t", m.text_features({"w0", "w1"}), ids);
  EXPECT_NEAR(lt / (5 * std::log(12.0)), 1.0, 0.02);
}

TEST(Model, SingleStepEqualsSoftmaxCrossEntropy) {
  DLNModel<double> m(small_config(), word_vocab(3), {"t"});
  test_util::randomize(m.params(), 4);
  Rng rng(2);
  auto img = random_image(5, rng);
  auto z = m.encode_image(img);
  auto g = m.view("source");
  std::vector<double> zero(8, 0.0);
  LSTMStepCache<double> c0, c1;
  lnlstm_forward_step<double>(z, zero, zero, g.lstm, g.ln, 1e-5, c0);
  lnlstm_forward_step<double>(g.embedding(kBos), c0.h, c0.c, g.lstm, g.ln, 1e-5, c1);
  std::vector<double> logits(g.vocab_size());
  g.logits(c1.h, logits);
  const auto ce = softmax_cross_entropy(Tensor<double>::vector(logits), 5);
  EXPECT_NEAR(m.source_loss(img, {5}), ce.loss, 1e-12);
}

TEST(Model, MatchesStraightLineOracle) {
  DLNModel<double> m(small_config(2, 2), word_vocab(1), {"t"});
  test_util::randomize(m.params(), 21, 1.0);
  Rng rng(3);
  auto img = random_image(5, rng);
  const TokenIds ids{4, kUnk, 4, kEos};
  OracleDecoder oracle{m.params(), "source", 2, 2, 5};
  EXPECT_NEAR(m.source_loss(img, ids), oracle.loss(m.encode_image(img), ids), 1e-12);
  OracleDecoder target_oracle{m.params(), "t", 2, 2, 5};
  const Tokens sent{"w0"};
  EXPECT_NEAR(m.target_loss("t", m.text_features(sent), ids),
              target_oracle.loss(m.encode_target("t", sent), ids), 1e-12);
}

TEST(Model, LossErrors) {
  DLNModel<double> m(small_config(), word_vocab(3), {"t"});
  Rng rng(2);
  auto img = random_image(5, rng);
  EXPECT_THROW(m.source_loss(img, {99}), VocabError);
  EXPECT_THROW(m.source_loss(img, {}), ArgumentError);
  EXPECT_THROW(m.target_loss("source", m.text_features({"w0"}), {4}), RegistryError);
  EXPECT_THROW(m.view("missing"), RegistryError);
  EXPECT_THROW(DLNModel<double>(small_config(), word_vocab(3), {}), ConfigError);
}

TEST(Model, ViewsShareStorage) {
  DLNModel<float> m(small_config(), word_vocab(3), {"t"});
  auto s = m.view("source");
  auto t = m.view("t");
  EXPECT_EQ(s.embed, t.embed);
  EXPECT_EQ(s.output, t.output);
  for (std::size_t g = 0; g < kGates; ++g) {
    EXPECT_EQ(s.lstm.input[g], t.lstm.input[g]);
    EXPECT_EQ(s.lstm.recurrent[g], t.lstm.recurrent[g]);
    EXPECT_NE(s.ln.gain[g], t.ln.gain[g]);
    EXPECT_NE(s.ln.shift[g], t.ln.shift[g]);
  }
  s.lstm.input[2]->values()[3] = 42.0f;
  EXPECT_EQ(t.lstm.input[2]->values()[3], 42.0f);
}

TEST(Model, GradientRoutingAtLambdaExtremes) {
  DLNModel<double> m(small_config(), word_vocab(6), {"t"});
  test_util::randomize(m.params(), 8);
  Rng rng(4);
  SourceExample se{random_image(5, rng), {4, 5, 6, kEos}};
  TargetExample te{"t", m.text_features({"w3", "w1"}), {7, 5, kEos}};
  std::vector<const SourceExample*> bs{&se};
  std::vector<const TargetExample*> bt{&te};

  m.params().zero_grad();
  objective(m, bs, bt, 1.0, 0.0, true);
  EXPECT_TRUE(ln_grads_zero(m, "t"));
  EXPECT_FALSE(ln_grads_zero(m, "source"));
  EXPECT_TRUE(all_zero(m.params().get("proj.text.t").grad()));

  m.params().zero_grad();
  objective(m, bs, bt, 0.0, 0.0, true);
  EXPECT_TRUE(ln_grads_zero(m, "source"));
  EXPECT_TRUE(all_zero(m.params().get("proj.image").grad()));
  EXPECT_FALSE(ln_grads_zero(m, "t"));

  EXPECT_THROW(objective(m, bs, bt, 1.5), ConfigError);
  EXPECT_THROW(objective(m, bs, {}, 0.5), ArgumentError);
}

TEST(Model, JointGradientIsLinearCombination) {
  DLNModel<double> m(small_config(), word_vocab(6), {"t"});
  test_util::randomize(m.params(), 12);
  Rng rng(4);
  SourceExample se{random_image(5, rng), {4, 5, 6, kEos}};
  TargetExample te{"t", m.text_features({"w3", "w1"}), {7, 5, kEos}};
  std::vector<const SourceExample*> bs{&se};
  std::vector<const TargetExample*> bt{&te};

  const std::vector<std::string> shared{"embed", "output", "lstm.i.ie", "lstm.u.ih"};
  m.params().zero_grad();
  m.source_loss(se.image, se.ids, true, 1.0);
  std::map<std::string, std::vector<double>> gs, gt;
  for (const auto& n : shared) gs[n] = grads_of(m.params(), n);
  m.params().zero_grad();
  m.target_loss("t", te.text, te.ids, true, 1.0);
  for (const auto& n : shared) gt[n] = grads_of(m.params(), n);
  m.params().zero_grad();
  objective(m, bs, bt, 0.5, 0.0, true);
  for (const auto& n : shared) {
    const auto g = grads_of(m.params(), n);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], 0.5 * (gs[n][i] + gt[n][i]), 1e-14) << n;
  }
}

TEST(Model, ObjectiveGradientsMatchFiniteDifferences) {
  GradcheckOptions opt;
  const auto rep = check_objective_gradients(opt);
  EXPECT_TRUE(rep.passed) << rep.worst_param << "[" << rep.worst_index << "] " << rep.max_rel_error;
  std::size_t ln_entries = 0;
  for (const auto& [name, err] : rep.per_param)
    if (name.rfind("ln.", 0) == 0) ++ln_entries;
  EXPECT_EQ(ln_entries, 16u);

  opt.extension = true;
  const auto ext = check_objective_gradients(opt);
  EXPECT_TRUE(ext.passed) << ext.worst_param << " " << ext.max_rel_error;

  opt.extension = false;
  opt.inject_sign_flip = true;
  EXPECT_FALSE(check_objective_gradients(opt).passed);
}

TEST(Model, OverfitsOneSentence) {
  DLNModel<float> m(small_config(16, 8), word_vocab(6), {"t"});
  const Tokens sent{"w0", "w3", "w1", "w5"};
  std::vector<TargetExample> tgt{{"t", m.text_features(sent), with_eos(m.vocab().encode(sent))}};
  Rng rng(1);
  std::vector<SourceExample> src{{random_image(5, rng), {4, kEos}}};
  TrainConfig cfg;
  cfg.optim.learning_rate = 0.01;
  AdamState<float> adam;
  std::vector<const SourceExample*> bs{&src[0]};
  std::vector<const TargetExample*> bt{&tgt[0]};
  for (int i = 0; i < 200; ++i) joint_train_step(m, bs, bt, cfg, adam, 0, 0.0, 0.0);
  const double per_token = m.target_loss("t", tgt[0].text, tgt[0].ids) / tgt[0].ids.size();
  EXPECT_LT(per_token, 0.1);
}

TEST(Model, TrainingMovesLnApartButKeepsSharedStorage) {
  auto spec = default_scene_spec();
  spec.source_train = 64;
  spec.test_images = 4;
  spec.style_train = 64;
  const auto ds = generate_synthetic_dataset(spec);
  std::vector<Tokens> all;
  for (const auto& ex : ds.source_train) all.push_back(ex.description);
  for (const auto& s : ds.style_corpora.at("romance")) all.push_back(s);
  auto cfg = small_config(12, 8);
  cfg.image_dim = spec.feature_dim;
  DLNModel<float> m(cfg, build_vocab(all, 1000), {"romance"});
  const auto* embed_before = &m.params().get("embed");
  auto src = prepare_source(m, ds.source_train);
  auto tgt = prepare_target(m, "romance", ds.style_corpora.at("romance"));
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  train_joint(m, src, tgt, tc);
  EXPECT_EQ(&m.params().get("embed"), embed_before);
  EXPECT_EQ(m.view("source").embed, m.view("romance").embed);
  bool differ = false;
  for (std::size_t g = 0; g < kGates; ++g)
    differ |= !std::equal(m.params().get(ln_param_name("source", g, true)).values().begin(),
                          m.params().get(ln_param_name("source", g, true)).values().end(),
                          m.params().get(ln_param_name("romance", g, true)).values().begin());
  EXPECT_TRUE(differ);
}

TEST(Regularizer, ZeroAtInitAndSliceSemantics) {
  DLNModel<double> m(small_config(), word_vocab(4), {"t"});
  EXPECT_THROW(regularizer_R(m), StateError);
  Rng rng(1);
  m.add_style("new", {"z0", "z1"}, rng);
  m.capture_anchors();
  EXPECT_EQ(regularizer_R(m), 0.0);
  m.params().get("embed.new.ext").values()[0] += 3.0;
  m.params().get("output.new.ext").values()[1] -= 2.0;
  EXPECT_EQ(regularizer_R(m), 0.0);
  m.params().get("output").values()[5] += 0.25;
  EXPECT_NEAR(regularizer_R(m), 0.25, 1e-15);
  m.params().get("proj.image").values()[0] -= 0.5;
  EXPECT_NEAR(regularizer_R(m), 0.75, 1e-15);

  m.params().zero_grad();
  regularizer_R(m, true, 2.0);
  EXPECT_NEAR(m.params().get("output").grad()[5], 2.0, 1e-15);
  EXPECT_NEAR(m.params().get("proj.image").grad()[0], -2.0, 1e-15);
  EXPECT_EQ(m.params().get("embed").grad()[0], 0.0);  // zero subgradient at the anchor
}

TEST(Extension, RegistryAndVocabularyErrors) {
  DLNModel<double> m(small_config(), word_vocab(4), {"t"});
  Rng rng(1);
  EXPECT_THROW(m.add_style("t", {}, rng), RegistryError);
  EXPECT_THROW(m.add_style("x", {"w1"}, rng), VocabError);
  EXPECT_THROW(m.add_style("y", {"q", "q"}, rng), VocabError);
  EXPECT_THROW(m.add_style("bad name", {}, rng), RegistryError);
  m.add_style("z", {"q"}, rng);
  EXPECT_EQ(m.style_vocab("z").id("q"), 8u);
  EXPECT_EQ(m.view("z").vocab_size(), 9u);
  EXPECT_EQ(m.view("t").vocab_size(), 8u);
}

namespace {

struct ExtensionFixture {
  SyntheticDataset ds;
  std::vector<SourceExample> src;
  std::vector<Tokens> fairy;

  static SyntheticSceneSpec spec() {
    auto s = default_scene_spec();
    s.styles.push_back(fairy_tale_style());
    s.source_train = 48;
    s.test_images = 4;
    s.style_train = 48;
    return s;
  }

  DLNModel<double> base_model() {
    ds = generate_synthetic_dataset(spec());
    std::vector<Tokens> all;
    for (const auto& ex : ds.source_train) all.push_back(ex.description);
    for (const auto& s : ds.style_corpora.at("romance")) all.push_back(s);
    auto cfg = small_config(8, 6);
    cfg.image_dim = spec().feature_dim;
    DLNModel<double> m(cfg, build_vocab(all, 1000), {"romance"});
    src = prepare_source(m, ds.source_train);
    fairy = ds.style_corpora.at("fairy");
    return m;
  }
};

double overlap_drift(DLNModel<double>& m) {
  double sq = 0;
  for (const char* n : {"embed", "output", "proj.image"}) {
    const auto& a = m.params().get(std::string("anchor.") + n);
    const auto& c = m.params().get(n);
    for (std::size_t i = 0; i < c.size(); ++i) sq += (c[i] - a[i]) * (c[i] - a[i]);
  }
  return std::sqrt(sq);
}

}  // namespace

TEST(Extension, ZeroStepsLeavesOldStylesUnchanged) {
  ExtensionFixture fx;
  auto m = fx.base_model();
  test_util::randomize(m.params(), 5, 0.3);
  const auto& img = fx.src[0];
  const double before = m.source_loss(img.image, img.ids);
  const auto t = prepare_target(m, "romance", {fx.ds.style_corpora.at("romance")[0]});
  const double before_t = m.target_loss("romance", t[0].text, t[0].ids);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto ext = extension_vocabulary(m, fx.fairy, 100);
  EXPECT_FALSE(ext.empty());
  const auto rep = extend_to_new_style(m, "fairy", ext, fx.src, fx.fairy, cfg);
  EXPECT_EQ(rep.initial_reg, 0.0);
  EXPECT_EQ(m.source_loss(img.image, img.ids), before);
  EXPECT_EQ(m.target_loss("romance", t[0].text, t[0].ids), before_t);
  EXPECT_TRUE(m.has_style("fairy"));
  EXPECT_NE(m.manifest().get("styles").find("fairy"), std::string::npos);
}

TEST(Extension, FreezesSourceLayerNormAndRegularizerBindsWeights) {
  ExtensionFixture fx;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;

  auto run = [&](double lambda2, std::vector<double>* src_ln) {
    auto m = fx.base_model();
    if (src_ln)
      for (std::size_t g = 0; g < kGates; ++g)
        for (double v : m.params().get(ln_param_name("source", g, true)).values()) src_ln->push_back(v);
    auto c = cfg;
    c.lambda2 = lambda2;
    extend_to_new_style(m, "fairy", extension_vocabulary(m, fx.fairy, 100), fx.src, fx.fairy, c);
    return m;
  };
  std::vector<double> ln_before;
  auto reg = run(0.1, &ln_before);
  std::vector<double> ln_after;
  for (std::size_t g = 0; g < kGates; ++g)
    for (double v : reg.params().get(ln_param_name("source", g, true)).values()) ln_after.push_back(v);
  EXPECT_EQ(ln_before, ln_after);

  auto free = run(0.0, nullptr);
  EXPECT_LT(overlap_drift(reg), overlap_drift(free));
  EXPECT_LT(regularizer_R(reg), regularizer_R(free));
}

TEST(Extension, LambdaTwoZeroMatchesJointObjective) {
  ExtensionFixture fx;
  auto m = fx.base_model();
  Rng rng(2);
  m.add_style("fairy", extension_vocabulary(m, fx.fairy, 100), rng);
  m.capture_anchors();
  test_util::randomize(m.params(), 17, 0.3);
  const auto tgt = prepare_target(m, "fairy", fx.fairy);
  std::vector<const SourceExample*> bs{&fx.src[0], &fx.src[1]};
  std::vector<const TargetExample*> bt{&tgt[0], &tgt[1], &tgt[2]};
  const double ext = objective(m, bs, bt, 0.2, 0.0).total;
  const double joint = objective(m, bs, bt, 0.2).total;
  EXPECT_NEAR(ext, joint, 1e-10);
  EXPECT_GT(objective(m, bs, bt, 0.2, 0.1).total, joint);
}

TEST(ModelIO, SaveLoadRoundTrip) {
  namespace fs = std::filesystem;
  ExtensionFixture fx;
  auto m0 = fx.base_model();
  DLNModel<float> m(m0.config(), m0.vocab(), {"romance"});
  Rng rng(3);
  m.add_style("fairy", {"elves", "wizard"}, rng);
  m.capture_anchors();
  const auto dir = fs::temp_directory_path() / "dln_model_io";
  fs::remove_all(dir);
  m.save(dir.string());
  auto back = DLNModel<float>::load(dir.string());
  EXPECT_EQ(back.styles(), m.styles());
  EXPECT_EQ(back.style_vocab("fairy"), m.style_vocab("fairy"));
  const auto dir2 = fs::temp_directory_path() / "dln_model_io2";
  fs::remove_all(dir2);
  back.save(dir2.string());
  EXPECT_EQ(slurp(dir / "model.ckpt"), slurp(dir2 / "model.ckpt"));
  EXPECT_EQ(slurp(dir / "model.manifest"), slurp(dir2 / "model.manifest"));

  DLNModel<float> other(small_config(), m.vocab(), {"romance"});
  const auto stored = load_checkpoint<float>((dir / "model.ckpt").string());
  EXPECT_THROW(other.assign_from(stored), StateError);
}
