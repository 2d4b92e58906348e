#include "brainseg/train.hpp"

#include <cstdio>
#include <fstream>

#include "brainseg/checkpoint.hpp"
#include "brainseg/error.hpp"

namespace brainseg::nn {

Batch make_batch(const std::vector<sampler::Patch> &patches) {
  if (patches.empty()) raise(Errc::InvalidArgument, "empty batch");
  const Index3 s = patches.front().size;
  const std::size_t n = s[0] * s[1] * s[2];
  Batch b;
  b.x = Tensor<float>({patches.size(), s[0], s[1], s[2], 1});
  b.labels.shape = {patches.size(), s[0], s[1], s[2]};
  b.labels.data.resize(patches.size() * n);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].size != s) raise(Errc::ShapeMismatch, "patches in a batch differ in size");
    std::copy(patches[i].intensities.begin(), patches[i].intensities.end(), b.x.ptr() + i * n);
    std::copy(patches[i].labels.begin(), patches[i].labels.end(), b.labels.data.begin() + i * n);
  }
  return b;
}

PatchBatchSource::PatchBatchSource(sampler::PatchStream &stream, int batch_size)
    : stream_(stream), batch_size_(batch_size) {
  if (batch_size < 1) raise(Errc::InvalidArgument, "batch size must be >= 1");
}

Batch PatchBatchSource::next() {
  std::vector<sampler::Patch> patches;
  for (int i = 0; i < batch_size_; ++i) patches.push_back(stream_.next());
  return make_batch(patches);
}

std::vector<double> train(NetParams<float> &params, AdamState &state, const NetConfig &cfg, BatchSource &data,
                          int steps, const TrainOptions &opts) {
  if (steps < 0) raise(Errc::InvalidArgument, "steps must be >= 0");
  cfg.validate();
  check_params(params, cfg);
  const bool checkpoints = !opts.checkpoint_path.empty();
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  for (int step = 1; step <= steps; ++step) {
    const Batch batch = data.next();
    auto fwd = forward(params, cfg, batch.x, Mode::Train);
    const double l = loss(fwd.probs, batch.labels).value;
    const auto grads = backward(params, fwd.cache, batch.labels);
    optimizer_step(params, grads, state, opts.adam);
    losses.push_back(l);
    if (opts.on_step) opts.on_step(step, l);
    if (checkpoints && opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0 && step != steps)
      save_checkpoint(params, &state, opts.checkpoint_path);
  }
  if (checkpoints) save_checkpoint(params, &state, opts.checkpoint_path);
  return losses;
}

void write_loss_trace(const std::vector<double> &losses, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) raise(Errc::IoError, "cannot write " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, losses[i]);
    out << buf;
  }
  if (!out) raise(Errc::IoError, "failed writing " + path.string());
}

} // namespace brainseg::nn
