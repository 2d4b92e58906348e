#include "brainseg/neuronet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "brainseg/checkpoint.hpp"
#include "brainseg/error.hpp"

namespace brainseg::nn {

using detail::Op;
using detail::OpKind;

// ---------------------------------------------------------------------------
// Parameters

template <typename T> void check_params(const NetParams<T> &params, const NetConfig &cfg) {
  for (const auto &spec : param_specs(cfg)) {
    const auto it = params.tensors.find(spec.name);
    if (it == params.tensors.end()) raise(Errc::BadCheckpoint, "missing parameter tensor " + spec.name);
    if (it->second.shape() != spec.shape)
      raise(Errc::ShapeMismatch, spec.name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                                     shape_string(spec.shape));
  }
}

NetParams<float> init_params(const NetConfig &cfg, std::uint64_t seed, const InitSpec &init) {
  if (init.kind == InitSpec::Kind::FromCheckpoint) {
    Checkpoint ckpt = load_checkpoint(init.checkpoint);
    check_params(ckpt.params, cfg);
    NetParams<float> out;
    for (const auto &spec : param_specs(cfg)) out.tensors.emplace(spec.name, ckpt.params.tensors.at(spec.name));
    return out;
  }
  std::mt19937_64 rng(seed);
  NetParams<float> params;
  for (const auto &spec : param_specs(cfg)) {
    Tensor<float> t(spec.shape);
    switch (spec.role) {
    case ParamRole::Kernel: {
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto &w : t.data()) w = static_cast<float>(dist(rng));
      break;
    }
    case ParamRole::Gamma:
    case ParamRole::RunningVar:
      t.fill(1.0f);
      break;
    case ParamRole::Bias:
    case ParamRole::Beta:
    case ParamRole::RunningMean:
      break;
    }
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename T> class GraphBuilder {
public:
  GraphBuilder(const NetParams<T> &params, NetParams<T> *running, const NetConfig &cfg, ForwardCache<T> &cache)
      : params_(params), running_(running), cfg_(cfg), cache_(cache), train_(cache.mode == Mode::Train) {}

  int input(const Tensor<T> &x) { return push(x); }

  int conv(const std::string &name, int in, const Stride &stride = {1, 1, 1}) {
    Tensor<T> y = layers::conv3d(node(in), params_.at(name + "/kernel"), params_.at(name + "/bias"), stride);
    const int out = push(std::move(y));
    record(Op{OpKind::Conv, name, stride, in, -1, out, {}});
    return out;
  }

  int bn_act(const std::string &name, int in) {
    layers::BnStats stats;
    Tensor<T> y = layers::bn_lrelu(node(in), params_.at(name + "/gamma"), params_.at(name + "/beta"),
                                   params_.at(name + "/running_mean"), params_.at(name + "/running_var"),
                                   cfg_.bn_epsilon, cfg_.leakiness, train_, stats);
    if (train_ && running_) {
      auto &rm = running_->at(name + "/running_mean");
      auto &rv = running_->at(name + "/running_var");
      const double mom = cfg_.bn_momentum;
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = static_cast<T>(mom * rm[c] + (1.0 - mom) * stats.mean[c]);
        rv[c] = static_cast<T>(mom * rv[c] + (1.0 - mom) * stats.var[c]);
      }
    }
    const int out = push(std::move(y));
    record(Op{OpKind::BnAct, name, {1, 1, 1}, in, -1, out, std::move(stats)});
    return out;
  }

  int add(int a, int b) {
    const int out = push(layers::add(node(a), node(b)));
    record(Op{OpKind::Add, {}, {1, 1, 1}, a, b, out, {}});
    return out;
  }

  int upsample(int in, const Stride &factor) {
    const int out = push(layers::upsample(node(in), factor));
    record(Op{OpKind::Upsample, {}, factor, in, -1, out, {}});
    return out;
  }

  // Infer mode drops activations as soon as the graph no longer needs them.
  void release(int id) {
    if (!train_) cache_.nodes[id] = Tensor<T>();
  }

  const Tensor<T> &node(int id) const { return cache_.nodes[id]; }

private:
  int push(Tensor<T> t) {
    cache_.nodes.push_back(std::move(t));
    return static_cast<int>(cache_.nodes.size()) - 1;
  }
  void record(Op op) {
    if (train_) cache_.tape.push_back(std::move(op));
  }

  const NetParams<T> &params_;
  NetParams<T> *running_;
  const NetConfig &cfg_;
  ForwardCache<T> &cache_;
  bool train_;
};

template <typename T> void check_input(const NetConfig &cfg, const Tensor<T> &x) {
  if (x.rank() != 5) raise(Errc::ShapeMismatch, "network input must be (batch, d0, d1, d2, channels)");
  if (x.channels() != 1) raise(Errc::ChannelMismatch, "network input must have one channel");
  const Stride total = cfg.total_stride();
  for (int a = 0; a < 3; ++a)
    if (x.dim(a + 1) % static_cast<std::size_t>(total[a]) != 0)
      raise(Errc::IndivisibleShape, "input extent " + std::to_string(x.dim(a + 1)) + " on axis " + std::to_string(a) +
                                        " is not a multiple of " + std::to_string(total[a]));
}

template <typename T>
ForwardResult<T> run_forward(const NetParams<T> &params, NetParams<T> *running, const NetConfig &cfg,
                             const Tensor<T> &x, Mode mode) {
  cfg.validate();
  check_input(cfg, x);
  ForwardResult<T> result;
  ForwardCache<T> &cache = result.cache;
  cache.mode = mode;
  cache.params_version = params.version;
  cache.cfg = cfg;
  GraphBuilder<T> g(params, running, cfg, cache);

  const int x0 = g.input(x);
  int h = g.conv(names::init_conv(), x0);
  g.release(x0);
  std::vector<int> scale_out(static_cast<std::size_t>(cfg.n_scales));
  for (int j = 0; j < cfg.n_scales; ++j) {
    const int down = g.conv(names::down_conv(j), h, cfg.stride(j));
    if (j == 0) g.release(h); // later h values are scale outputs the decoder still needs
    int cur = down;
    for (int u = 0; u < cfg.units_per_scale; ++u) {
      const std::string p = names::unit_prefix(j, u);
      const int a1 = g.bn_act(p + "/bn1", cur);
      const int c1 = g.conv(p + "/conv1", a1);
      g.release(a1);
      const int a2 = g.bn_act(p + "/bn2", c1);
      g.release(c1);
      const int c2 = g.conv(p + "/conv2", a2);
      g.release(a2);
      const bool project = params.contains(p + "/proj/kernel");
      const int skip = project ? g.conv(p + "/proj", cur) : cur;
      const int sum = g.add(c2, skip);
      g.release(c2);
      if (project) g.release(skip);
      g.release(cur);
      cur = sum;
    }
    scale_out[j] = cur;
    h = cur;
  }

  int score = g.conv(names::score_conv(cfg.n_scales - 1), scale_out.back());
  g.release(scale_out.back());
  for (int j = cfg.n_scales - 2; j >= 0; --j) {
    const int up = g.upsample(score, cfg.stride(j + 1));
    g.release(score);
    const int skip = g.conv(names::score_conv(j), scale_out[j]);
    g.release(scale_out[j]);
    score = g.add(up, skip);
    g.release(up);
    g.release(skip);
  }
  if (cfg.stride(0) != Stride{1, 1, 1}) {
    const int up = g.upsample(score, cfg.stride(0));
    g.release(score);
    score = up;
  }
  cache.logits_node = score;
  result.logits = cache.nodes[score];
  result.probs = layers::softmax(result.logits);
  if (mode == Mode::Infer) cache.nodes.clear();
  return result;
}

} // namespace

template <typename T>
ForwardResult<T> forward(NetParams<T> &params, const NetConfig &cfg, const Tensor<T> &x, Mode mode) {
  return run_forward(params, mode == Mode::Train ? &params : nullptr, cfg, x, mode);
}

template <typename T> ForwardResult<T> infer(const NetParams<T> &params, const NetConfig &cfg, const Tensor<T> &x) {
  return run_forward(params, static_cast<NetParams<T> *>(nullptr), cfg, x, Mode::Infer);
}

// ---------------------------------------------------------------------------
// Loss

namespace {

template <typename T> void check_labels(const Tensor<T> &probs, const LabelMap &labels) {
  if (probs.rank() != 5 || labels.shape.size() != 4 ||
      !std::equal(labels.shape.begin(), labels.shape.end(), probs.shape().begin()))
    raise(Errc::ShapeMismatch, "labels " + shape_string(labels.shape) + " do not match probabilities " +
                                   shape_string(probs.shape()));
  if (labels.data.size() != shape_size(labels.shape)) raise(Errc::ShapeMismatch, "label data length mismatch");
  const auto c = static_cast<std::int32_t>(probs.channels());
  for (auto l : labels.data)
    if (l < 0 || l >= c) raise(Errc::InvalidArgument, "label " + std::to_string(l) + " outside the class range");
}

constexpr double kProbFloor = 1e-12;

} // namespace

template <typename T> LossValue loss(const Tensor<T> &probs, const LabelMap &labels, bool keep_per_voxel) {
  check_labels(probs, labels);
  const std::size_t c = probs.channels();
  const std::size_t n = probs.size() / c;
  LossValue out;
  if (keep_per_voxel) out.per_voxel.resize(n);
  double sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    const double p = std::max(static_cast<double>(probs[v * c + labels.data[v]]), kProbFloor);
    const double l = -std::log(p);
    sum += l;
    if (keep_per_voxel) out.per_voxel[v] = l;
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

template <typename T> LossValue loss(const Tensor<T> &probs, const Tensor<T> &targets, bool keep_per_voxel) {
  if (probs.shape() != targets.shape())
    raise(Errc::ShapeMismatch, "targets " + shape_string(targets.shape()) + " do not match probabilities " +
                                   shape_string(probs.shape()));
  const std::size_t c = probs.channels();
  const std::size_t n = probs.size() / c;
  LossValue out;
  if (keep_per_voxel) out.per_voxel.resize(n);
  double sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    double l = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double y = targets[v * c + ch];
      if (y != 0.0) l -= y * std::log(std::max(static_cast<double>(probs[v * c + ch]), kProbFloor));
    }
    sum += l;
    if (keep_per_voxel) out.per_voxel[v] = l;
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

template <typename T> Tensor<T> loss_gradient_logits(const Tensor<T> &probs, const LabelMap &labels) {
  check_labels(probs, labels);
  const std::size_t c = probs.channels();
  const std::size_t n = probs.size() / c;
  Tensor<T> g(probs.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double y = static_cast<std::size_t>(labels.data[v]) == ch ? 1.0 : 0.0;
      g[v * c + ch] = static_cast<T>((probs[v * c + ch] - y) * inv_n);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

template <typename T> void accumulate(Tensor<T> &into, Tensor<T> &&delta) {
  if (into.empty()) {
    into = std::move(delta);
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += delta[i];
}

} // namespace

template <typename T>
Gradients<T> backward(const NetParams<T> &params, ForwardCache<T> &cache, const LabelMap &labels) {
  if (cache.mode != Mode::Train) raise(Errc::StaleCache, "backward requires a Train-mode forward cache");
  if (cache.consumed) raise(Errc::StaleCache, "forward cache was already used by backward");
  if (cache.params_version != params.version)
    raise(Errc::StaleCache, "parameters changed since the forward pass");
  cache.consumed = true;

  const Tensor<T> probs = layers::softmax(cache.nodes[cache.logits_node]);
  std::vector<Tensor<T>> grad(cache.nodes.size());
  grad[cache.logits_node] = loss_gradient_logits(probs, labels);

  Gradients<T> out;
  for (auto it = cache.tape.rbegin(); it != cache.tape.rend(); ++it) {
    const Op &op = *it;
    Tensor<T> d = std::move(grad[op.out]);
    if (d.empty()) continue;
    switch (op.kind) {
    case OpKind::Conv: {
      Tensor<T> dx, dw, db;
      // The network input needs no gradient.
      layers::conv3d_backward(cache.nodes[op.in], params.at(op.param + "/kernel"), op.stride, d,
                              op.in == 0 ? nullptr : &dx, dw, db);
      accumulate(out[op.param + "/kernel"], std::move(dw));
      accumulate(out[op.param + "/bias"], std::move(db));
      if (op.in != 0) accumulate(grad[op.in], std::move(dx));
      break;
    }
    case OpKind::BnAct: {
      Tensor<T> dx, dg, db;
      layers::bn_lrelu_backward(cache.nodes[op.in], cache.nodes[op.out], params.at(op.param + "/gamma"), op.stats,
                                cache.cfg.leakiness, d, dx, dg, db);
      accumulate(out[op.param + "/gamma"], std::move(dg));
      accumulate(out[op.param + "/beta"], std::move(db));
      accumulate(grad[op.in], std::move(dx));
      break;
    }
    case OpKind::Add: {
      Tensor<T> copy = d;
      accumulate(grad[op.in], std::move(copy));
      accumulate(grad[op.in2], std::move(d));
      break;
    }
    case OpKind::Upsample:
      accumulate(grad[op.in], layers::upsample_backward(d, op.stride, cache.nodes[op.in].shape()));
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Volume helpers and whole-volume prediction

Tensor<float> to_tensor(const Volume &v) {
  const Index3 &d = v.dims();
  Tensor<float> t({1, d[0], d[1], d[2], 1});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

LabelMap to_label_map(const Volume &labels) {
  const Index3 &d = labels.dims();
  LabelMap m{{1, d[0], d[1], d[2]}, std::vector<std::int32_t>(labels.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) m.data[i] = static_cast<std::int32_t>(labels[i]);
  return m;
}

std::array<std::array<std::size_t, 2>, 3> prediction_padding(const Index3 &dims, const NetConfig &cfg) {
  const Stride total = cfg.total_stride();
  std::array<std::array<std::size_t, 2>, 3> pad{};
  for (int a = 0; a < 3; ++a) {
    const auto m = static_cast<std::size_t>(total[a]);
    const std::size_t padded = (dims[a] + m - 1) / m * m;
    const std::size_t extra = padded - dims[a];
    pad[a] = {extra / 2, extra - extra / 2};
  }
  return pad;
}

Prediction predict_volume(const NetParams<float> &params, const NetConfig &cfg, const Volume &v,
                          bool keep_probabilities) {
  const Index3 &d = v.dims();
  const auto pad = prediction_padding(d, cfg);
  Index3 pd{};
  for (int a = 0; a < 3; ++a) pd[a] = d[a] + pad[a][0] + pad[a][1];
  Tensor<float> x({1, pd[0], pd[1], pd[2], 1});
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t k = 0; k < d[2]; ++k)
        x[((i + pad[0][0]) * pd[1] + (j + pad[1][0])) * pd[2] + (k + pad[2][0])] = static_cast<float>(v.at(i, j, k));

  const ForwardResult<float> fwd = infer(params, cfg, x);
  const std::size_t c = static_cast<std::size_t>(cfg.n_classes);
  std::vector<double> labels(v.size());
  std::vector<std::vector<double>> probs(keep_probabilities ? c : 0, std::vector<double>(v.size()));
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t k = 0; k < d[2]; ++k) {
        const std::size_t src = ((i + pad[0][0]) * pd[1] + (j + pad[1][0])) * pd[2] + (k + pad[2][0]);
        const float *p = fwd.probs.ptr() + src * c;
        std::size_t best = 0;
        for (std::size_t ch = 1; ch < c; ++ch)
          if (p[ch] > p[best]) best = ch;
        const std::size_t dst = v.index(i, j, k);
        labels[dst] = static_cast<double>(best);
        for (std::size_t ch = 0; ch < probs.size(); ++ch) probs[ch][dst] = p[ch];
      }
  Prediction out;
  out.labels = v.with_data(std::move(labels), VolumeKind::Label);
  for (auto &p : probs) out.probabilities.push_back(v.with_data(std::move(p), VolumeKind::Intensity));
  return out;
}

#define BRAINSEG_INSTANTIATE(T)                                                                                    \
  template void check_params(const NetParams<T> &, const NetConfig &);                                             \
  template ForwardResult<T> forward(NetParams<T> &, const NetConfig &, const Tensor<T> &, Mode);                   \
  template ForwardResult<T> infer(const NetParams<T> &, const NetConfig &, const Tensor<T> &);                     \
  template LossValue loss(const Tensor<T> &, const LabelMap &, bool);                                              \
  template LossValue loss(const Tensor<T> &, const Tensor<T> &, bool);                                             \
  template Tensor<T> loss_gradient_logits(const Tensor<T> &, const LabelMap &);                                    \
  template Gradients<T> backward(const NetParams<T> &, ForwardCache<T> &, const LabelMap &);

BRAINSEG_INSTANTIATE(float)
BRAINSEG_INSTANTIATE(double)

#undef BRAINSEG_INSTANTIATE

} // namespace brainseg::nn
