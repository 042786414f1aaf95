#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "a3net/data.hpp"
#include "a3net/rng.hpp"
#include "a3net/tensor.hpp"

namespace testing_support {

inline a3net::Tensor random_tensor(const a3net::Shape& shape, a3net::Rng& rng, double lo = -1.0, double hi = 1.0) {
  a3net::Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// 0/1 mask of shape [rows, n] with the given prefix lengths.
inline a3net::Tensor prefix_mask(const std::vector<std::size_t>& lengths, std::size_t n) {
  a3net::Tensor m({lengths.size(), n});
  for (std::size_t r = 0; r < lengths.size(); ++r) {
    for (std::size_t i = 0; i < lengths[r]; ++i) m[r * n + i] = 1.0;
  }
  return m;
}

// Two examples over three characters plus PAD and UNK (V = 5). Passage
// lengths 3 and 2, question lengths 2 and 1, so padding is exercised.
inline std::vector<a3net::Example> tiny_examples() {
  return {{"t0", {"ab", "c"}, {"ca", "b", "abc"}, 1, 2, "b abc"}, {"t1", {"bb"}, {"a", "cb"}, 1, 1, "cb"}};
}

}  // namespace testing_support
