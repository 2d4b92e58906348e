#pragma once

#include <vector>

#include "brainseg/net_config.hpp"
#include "brainseg/tensor.hpp"

// Forward and backward kernels for channels-last 5D feature maps.
namespace brainseg::nn::layers {

/// Same-padded 3D convolution: output extent ceil(in / stride), taps centred
/// on in = out * stride. `kernel` has shape (k, k, k, cin, cout).
template <typename T>
Tensor<T> conv3d(const Tensor<T> &x, const Tensor<T> &kernel, const Tensor<T> &bias, const Stride &stride);

template <typename T>
void conv3d_backward(const Tensor<T> &x, const Tensor<T> &kernel, const Stride &stride, const Tensor<T> &dout,
                     Tensor<T> *dx, Tensor<T> &dkernel, Tensor<T> &dbias);

struct BnStats {
  std::vector<double> mean, inv_std, var;
};

/// Batch norm followed by leaky ReLU. With `batch_stats` the per-channel
/// statistics are taken over batch and spatial axes and written to `stats`;
/// otherwise running_mean / running_var are used.
template <typename T>
Tensor<T> bn_lrelu(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, const Tensor<T> &running_mean,
                   const Tensor<T> &running_var, double eps, double leakiness, bool batch_stats, BnStats &stats);

// Backward through the batch-statistics path. `y` is the forward output; its
// sign gives the activation branch.
template <typename T>
void bn_lrelu_backward(const Tensor<T> &x, const Tensor<T> &y, const Tensor<T> &gamma, const BnStats &stats,
                       double leakiness, const Tensor<T> &dy, Tensor<T> &dx, Tensor<T> &dgamma, Tensor<T> &dbeta);

/// Linear resize by an integer factor in {1, 2} per spatial axis, sampling at
/// voxel centres (align-corners false) with edge clamping.
template <typename T> Tensor<T> upsample(const Tensor<T> &x, const Stride &factor);
template <typename T> Tensor<T> upsample_backward(const Tensor<T> &dout, const Stride &factor, const Shape &in_shape);

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);

/// Softmax over the channel axis.
template <typename T> Tensor<T> softmax(const Tensor<T> &logits);

} // namespace brainseg::nn::layers
