#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "brainseg/neuronet.hpp"
#include "brainseg/optimizer.hpp"
#include "brainseg/sampler.hpp"

namespace brainseg::nn {

struct Batch {
  Tensor<float> x; // (B, d0, d1, d2, 1)
  LabelMap labels; // (B, d0, d1, d2)
};

class BatchSource {
public:
  virtual ~BatchSource() = default;
  virtual Batch next() = 0;
};

/// Stacks `batch_size` consecutive patches of a PatchStream.
class PatchBatchSource : public BatchSource {
public:
  PatchBatchSource(sampler::PatchStream &stream, int batch_size = 1);
  Batch next() override;

private:
  sampler::PatchStream &stream_;
  int batch_size_;
};

Batch make_batch(const std::vector<sampler::Patch> &patches);

struct TrainOptions {
  AdamHyper adam;
  int checkpoint_every = 500; // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path; // empty disables checkpoints
  std::function<void(int step, double loss)> on_step;
};

/// Runs `steps` Adam updates on batches from `data`. Returns the loss of each
/// step. A checkpoint (params and optimizer state) is written every
/// `checkpoint_every` steps and once more at completion.
std::vector<double> train(NetParams<float> &params, AdamState &state, const NetConfig &cfg, BatchSource &data,
                          int steps, const TrainOptions &opts = {});

// CSV "step,loss", steps numbered from 1.
void write_loss_trace(const std::vector<double> &losses, const std::filesystem::path &path);

} // namespace brainseg::nn
