#pragma once

#include "dsnet/ops.hpp"

namespace dsnet {

struct LossConfig {
  double lambda = 0.5;  // weight of the reconstruction term, in [0,1]
};

inline void validate(const LossConfig& cfg) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) {
    throw DataError("lambda must lie in [0,1], got " +
                    std::to_string(cfg.lambda));
  }
}

/// L = lambda * RE + (1 - lambda) * CE.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& re, const Tensor<S>& ce,
                     const LossConfig& cfg) {
  validate(cfg);
  const S lam = static_cast<S>(cfg.lambda);
  return add(scale(re, lam), scale(ce, S(1) - lam));
}

}  // namespace dsnet
