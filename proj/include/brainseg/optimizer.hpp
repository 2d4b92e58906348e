#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "brainseg/net_config.hpp"

namespace brainseg::nn {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor<float>> m, v;
};

/// One bias-corrected Adam update of every tensor named in `grads`:
///   p -= lr * m_hat / (sqrt(v_hat) + eps).
/// Throws ShapeMismatch when a gradient does not match its parameter.
void optimizer_step(NetParams<float> &params, const Gradients<float> &grads, AdamState &state,
                    const AdamHyper &hyper = {});

} // namespace brainseg::nn
