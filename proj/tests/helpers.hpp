#pragma once

#include <random>

#include "eeggsl/tensor.hpp"

namespace testutil {

inline eeggsl::Tensor randn(eeggsl::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  eeggsl::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(scale * eeggsl::standard_normal(rng));
  return t;
}

inline eeggsl::Tensor uniform(eeggsl::Shape shape, std::mt19937_64& rng, double lo, double hi) {
  eeggsl::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(lo + (hi - lo) * eeggsl::uniform01(rng));
  return t;
}

/// Weighted sum with fixed random weights, so every output coordinate
/// carries a distinct gradient.
inline eeggsl::Tensor probe(const eeggsl::Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  eeggsl::Tensor w = randn(y.shape(), rng);
  return eeggsl::ops::sum(eeggsl::ops::mul(y, w));
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace testutil
