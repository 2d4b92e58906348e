#include "brainseg/optimizer.hpp"

#include <cmath>

#include "brainseg/error.hpp"

namespace brainseg::nn {

void optimizer_step(NetParams<float> &params, const Gradients<float> &grads, AdamState &state,
                    const AdamHyper &hyper) {
  for (const auto &[name, g] : grads) {
    const auto &p = params.at(name);
    if (p.shape() != g.shape())
      raise(Errc::ShapeMismatch, "gradient for " + name + " has shape " + shape_string(g.shape()) + ", parameter " +
                                     shape_string(p.shape()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto &[name, g] : grads) {
    auto &p = params.at(name);
    auto &m = state.m.try_emplace(name, Tensor<float>(p.shape())).first->second;
    auto &v = state.v.try_emplace(name, Tensor<float>(p.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - hyper.lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps));
    }
  }
  ++params.version;
}

} // namespace brainseg::nn
