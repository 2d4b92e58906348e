#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainseg/layers.hpp"
#include "brainseg/net_config.hpp"
#include "brainseg/tensor.hpp"
#include "brainseg/volume.hpp"

namespace brainseg::nn {

enum class Mode { Train, Infer };

/// Per-voxel integer class ids laid out like a feature map without the channel
/// axis: (batch, d0, d1, d2).
struct LabelMap {
  Shape shape; // rank 4
  std::vector<std::int32_t> data;
};

// ---------------------------------------------------------------------------
// Parameters

struct InitSpec {
  enum class Kind { Uniform, FromCheckpoint } kind = Kind::Uniform;
  std::filesystem::path checkpoint;

  static InitSpec uniform() { return {}; }
  static InitSpec from_checkpoint(std::filesystem::path p) { return {Kind::FromCheckpoint, std::move(p)}; }
};

/// Uniform: kernels ~ U(-b, b) with b = sqrt(6 / (fan_in + fan_out)), biases 0,
/// gamma 1, beta 0, running mean 0 and variance 1. FromCheckpoint: exact copy;
/// throws BadCheckpoint for a missing tensor and ShapeMismatch for a wrong shape.
NetParams<float> init_params(const NetConfig &cfg, std::uint64_t seed, const InitSpec &init = {});

/// Checks that `params` holds exactly the tensors the graph for `cfg` needs.
template <typename T> void check_params(const NetParams<T> &params, const NetConfig &cfg);

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

enum class OpKind { Conv, BnAct, Add, Upsample };

struct Op {
  OpKind kind;
  std::string param; // prefix of the parameter tensors
  Stride stride{1, 1, 1};
  int in = -1, in2 = -1, out = -1;
  layers::BnStats stats;
};

} // namespace detail

/// Everything backward needs: the op tape and the retained activations.
template <typename T> struct ForwardCache {
  Mode mode = Mode::Infer;
  std::uint64_t params_version = 0;
  NetConfig cfg;
  std::vector<detail::Op> tape;
  std::vector<Tensor<T>> nodes;
  int logits_node = -1;
  bool consumed = false;
};

template <typename T> struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> probs;
  ForwardCache<T> cache;
};

/// Runs the encoder/decoder. Train mode normalizes with batch statistics and
/// folds them into the running statistics with cfg.bn_momentum; Infer mode
/// uses the running statistics and keeps no activations.
/// Throws IndivisibleShape and ChannelMismatch.
template <typename T>
ForwardResult<T> forward(NetParams<T> &params, const NetConfig &cfg, const Tensor<T> &x, Mode mode);

// Infer-only overload for shared, immutable parameters.
template <typename T> ForwardResult<T> infer(const NetParams<T> &params, const NetConfig &cfg, const Tensor<T> &x);

struct LossValue {
  double value = 0.0;
  std::vector<double> per_voxel;
};

/// Mean over voxels of -sum_c y_c log(p_c), probabilities clamped at 1e-12.
template <typename T> LossValue loss(const Tensor<T> &probs, const LabelMap &labels, bool keep_per_voxel = false);
// Soft or one-hot targets with the same shape as probs.
template <typename T> LossValue loss(const Tensor<T> &probs, const Tensor<T> &targets, bool keep_per_voxel = false);

/// d loss / d logits = (probs - onehot) / N.
template <typename T> Tensor<T> loss_gradient_logits(const Tensor<T> &probs, const LabelMap &labels);

/// Reverse-mode gradients of loss(forward(x), labels) for every trainable tensor.
/// Throws StaleCache unless `cache` came from a Train-mode forward over the
/// current parameter version and has not been consumed.
template <typename T>
Gradients<T> backward(const NetParams<T> &params, ForwardCache<T> &cache, const LabelMap &labels);

// ---------------------------------------------------------------------------
// Whole-volume prediction

struct Prediction {
  Volume labels;
  std::vector<Volume> probabilities; // one per class, empty unless requested
};

/// Zero-pads symmetrically to a multiple of the total stride, runs Infer mode,
/// crops back, and takes the per-voxel argmax (ties go to the lower class).
Prediction predict_volume(const NetParams<float> &params, const NetConfig &cfg, const Volume &v,
                          bool keep_probabilities = false);

/// Padding applied before inference: {before, after} per axis.
std::array<std::array<std::size_t, 2>, 3> prediction_padding(const Index3 &dims, const NetConfig &cfg);

// Volume <-> tensor helpers.
Tensor<float> to_tensor(const Volume &v);
LabelMap to_label_map(const Volume &labels);

} // namespace brainseg::nn
