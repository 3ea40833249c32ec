#pragma once

// Finite-difference verification of the full training objectives on a small
// randomly initialized model. Shared by the gradcheck command and the tests.

#include <string>
#include <vector>

#include "dln/gradcheck.hpp"
#include "dln/training.hpp"

namespace dln {

struct GradcheckDims {
  std::size_t hidden = 8;
  std::size_t embed = 6;
  std::size_t vocab = 12;  // including the four specials
  std::size_t length = 5;  // predictions per sentence, EOS included
  std::size_t image_dim = 7;
  std::size_t text_dim = 9;
  std::size_t batch = 2;
};

struct GradcheckOptions {
  GradcheckDims dims;
  std::uint64_t seed = 1;
  double lambda = 0.5;
  double h = 1e-5;
  double tol = 1e-4;
  bool extension = false;   // check λ1·L_S + (1−λ1)·L_T + λ2·R on an extended model instead
  bool inject_sign_flip = false;  // harness self-test: negate one trainable LN gain gradient
};

namespace detail {

inline std::vector<Tokens> random_sentences(const Vocabulary& v, std::size_t count, std::size_t words, Rng& rng) {
  std::vector<Tokens> out;
  for (std::size_t i = 0; i < count; ++i) {
    Tokens s;
    for (std::size_t k = 0; k < words; ++k) s.push_back(v.token(kNumSpecials + uniform_index(rng, v.size() - kNumSpecials)));
    out.push_back(s);
  }
  return out;
}

}  // namespace detail

/// Builds a small model, randomizes every parameter (LN vectors included),
/// and compares analytic against central-difference gradients in double precision.
inline GradCheckReport check_objective_gradients(const GradcheckOptions& opt) {
  const auto& d = opt.dims;
  if (d.vocab <= kNumSpecials + 1 || d.length == 0 || d.batch == 0)
    throw ArgumentError("gradcheck dims too small");
  Vocabulary vocab;
  for (std::size_t i = kNumSpecials; i < d.vocab; ++i) vocab.add("w" + std::to_string(i - kNumSpecials));
  ModelConfig mc;
  mc.hidden = d.hidden;
  mc.embed = d.embed;
  mc.image_dim = d.image_dim;
  mc.text_dim = d.text_dim;
  mc.seed = opt.seed;
  DLNModel<double> model(mc, vocab, {"target"});
  Rng rng(splitmix64(opt.seed));
  const std::size_t words = d.length - 1;

  std::vector<SourceExample> src;
  for (const auto& s : detail::random_sentences(vocab, d.batch, words, rng)) {
    Tensor<float> img({d.image_dim});
    for (auto& x : img.values()) x = static_cast<float>(standard_normal(rng));
    src.push_back({img, with_eos(vocab.encode(s))});
  }
  std::string style = "target";
  Tokens extension;
  if (opt.extension) {
    style = "extra";
    extension = {"x0", "x1"};
    Rng srng(opt.seed + 7);
    model.add_style(style, extension, srng);
  }
  const auto style_vocab = model.style_vocab(style);
  std::vector<TargetExample> tgt;
  for (const auto& s : detail::random_sentences(style_vocab, d.batch, words, rng))
    tgt.push_back({style, model.text_features(s), with_eos(style_vocab.encode(s))});

  for (auto& e : model.params())
    for (double& v : e.tensor.values()) v = uniform_real(rng, -0.5, 0.5);
  for (std::size_t g = 0; g < kGates; ++g)
    for (const auto& st : model.styles())
      for (double& v : model.params().get(ln_param_name(st, g, true)).values()) v = 1.0 + uniform_real(rng, -0.3, 0.3);

  double lambda2 = 0.0;
  double lambda = opt.lambda;
  if (opt.extension) {
    model.capture_anchors();
    model.set_extension_training(style);
    // Move away from the anchors so R is differentiable at the check point.
    for (const char* n : {"embed", "output", "proj.image"})
      for (double& v : model.params().get(n).values()) v += uniform_real(rng, -0.05, 0.05);
    lambda2 = 0.1;
    lambda = 0.2;
  } else {
    model.set_joint_training();
  }

  std::vector<const SourceExample*> bs;
  std::vector<const TargetExample*> bt;
  for (const auto& e : src) bs.push_back(&e);
  for (const auto& e : tgt) bt.push_back(&e);
  const std::string flipped = ln_param_name(opt.extension ? style : std::string(kSourceStyle), 0, true);
  const std::function<double(bool)> loss = [&](bool backward) {
    const double l = objective(model, bs, bt, lambda, lambda2, backward).total;
    if (backward && opt.inject_sign_flip)
      for (double& g : model.params().get(flipped).grad()) g = -g;
    return l;
  };
  return finite_difference_check<double>(loss, model.params(), opt.h, opt.tol);
}

}  // namespace dln
