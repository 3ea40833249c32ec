#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dln/errors.hpp"
#include "dln/init.hpp"
#include "dln/tensor.hpp"
#include "dln/text.hpp"

namespace dln {

inline constexpr std::size_t kDefaultTextFeatureDim = 128;
inline constexpr std::uint64_t kDefaultExtractorSeed = 0x5EEDF00Dull;

/// Training-free sentence featurizer: every unigram and bigram is hashed to a
/// fixed pseudo-random direction in R^F, and a sentence is the sum of its
/// n-gram directions scaled by 1/sqrt(#n-grams). Bigrams make it sensitive to
/// word order. Operates on token strings, so it is independent of any vocabulary.
class FrozenTextExtractor {
 public:
  explicit FrozenTextExtractor(std::size_t dim = kDefaultTextFeatureDim, std::uint64_t seed = kDefaultExtractorSeed)
      : dim_(dim), seed_(seed) {
    if (dim == 0) throw ArgumentError("text feature dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  Tensor<float> operator()(const Tokens& tokens) const {
    if (tokens.empty()) throw ArgumentError("cannot featurize an empty sentence");
    std::vector<double> acc(dim_, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      add_direction(fnv1a64(tokens[i]), acc);
      ++n;
      if (i + 1 < tokens.size()) {
        std::uint64_t h = fnv1a64(tokens[i]);
        h = fnv1a64("\x1f", h);
        add_direction(fnv1a64(tokens[i + 1], h), acc);
        ++n;
      }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    Tensor<float> out({dim_});
    for (std::size_t k = 0; k < dim_; ++k) out[k] = static_cast<float>(acc[k] * scale);
    return out;
  }

 private:
  void add_direction(std::uint64_t key, std::vector<double>& acc) const {
    std::uint64_t state = splitmix64(seed_ ^ key);
    for (std::size_t k = 0; k < dim_; ++k) {
      state = splitmix64(state);
      acc[k] += 2.0 * unit_uniform(state) - 1.0;
    }
  }

  std::size_t dim_;
  std::uint64_t seed_;
};

}  // namespace dln
