#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "brainseg/tensor.hpp"

namespace brainseg::nn {

using Stride = std::array<int, 3>;

struct NetConfig {
  int n_scales = 4;
  int units_per_scale = 2;
  int base_filters = 16;
  int n_classes = 4; // background, CSF, GM, WM
  double leakiness = 0.1;
  // One entry per scale; empty means (1,1,1) at the first scale and (2,2,2) after.
  std::vector<Stride> strides;
  int kernel_size = 3;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;

  // Filters at 0-based scale j: base_filters * 2^j.
  int filters(int scale) const { return base_filters << scale; }
  Stride stride(int scale) const;
  // Product of all strides per axis; input extents must be multiples of this.
  Stride total_stride() const;

  // Throws InvalidArgument.
  void validate() const;
};

enum class ParamRole { Kernel, Bias, Gamma, Beta, RunningMean, RunningVar };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role;
  std::size_t fan_in = 0, fan_out = 0; // kernels only

  bool trainable() const { return role != ParamRole::RunningMean && role != ParamRole::RunningVar; }
};

/// Every tensor the forward graph reads, in graph order.
std::vector<ParamSpec> param_specs(const NetConfig &cfg);

// Parameter names shared by the graph builder and the spec list.
namespace names {
std::string init_conv();
std::string down_conv(int scale);
std::string unit_prefix(int scale, int unit);
std::string score_conv(int scale);
} // namespace names

/// Named tensor collection holding kernels, biases, and batch-norm state.
/// `version` increases on every optimizer update so that stale forward caches
/// can be detected.
template <typename T> struct NetParams {
  std::map<std::string, Tensor<T>> tensors;
  std::uint64_t version = 0;

  bool contains(const std::string &name) const { return tensors.count(name) != 0; }
  Tensor<T> &at(const std::string &name);
  const Tensor<T> &at(const std::string &name) const;

  template <typename U> NetParams<U> cast() const {
    NetParams<U> out;
    out.version = version;
    for (const auto &[k, v] : tensors) out.tensors.emplace(k, v.template cast<U>());
    return out;
  }
};

template <typename T> using Gradients = std::map<std::string, Tensor<T>>;

} // namespace brainseg::nn
