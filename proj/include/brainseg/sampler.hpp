#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "brainseg/volume.hpp"

namespace brainseg::sampler {

enum class SamplingMode { Uniform, ClassBalanced };

struct PatchSpec {
  Index3 size{32, 32, 32};
  int count = 200;
  SamplingMode mode = SamplingMode::Uniform;
  std::uint64_t seed = 0;
  int n_classes = 4; // cycle length for ClassBalanced
};

struct Patch {
  Index3 size{};
  Index3 origin{}; // corner voxel in the source volume
  std::string source_id;
  std::vector<float> intensities;   // row-major over size
  std::vector<std::int32_t> labels; // row-major over size
};

/// Seeded generator of patch corners for one volume. Uniform draws each corner
/// uniformly from all corners that keep the patch inside the volume.
/// ClassBalanced targets class (draw index mod n_classes) and draws uniformly
/// among corners whose patch holds at least one voxel of that class, falling
/// back to Uniform when the class is absent.
class OriginSampler {
public:
  // Throws SizeExceedsVolume; `labels` must outlive the sampler.
  OriginSampler(const Volume &labels, const PatchSpec &spec);

  Index3 next();
  std::uint64_t drawn() const { return drawn_; }

private:
  const std::vector<std::uint32_t> &corners_with(int cls);
  Index3 uniform();

  const Volume &labels_;
  PatchSpec spec_;
  Index3 corner_extent_{};
  std::mt19937_64 rng_;
  std::uint64_t drawn_ = 0;
  std::map<int, std::vector<std::uint32_t>> corners_; // flat corner indices per class
};

// Pure gather of the sub-blocks at `origin`.
Patch extract_patch(const Volume &image, const Volume &labels, const Index3 &origin, const Index3 &size,
                    const std::string &source_id = {});

/// `spec.count` patches from one volume pair. Throws DimMismatch and
/// SizeExceedsVolume.
std::vector<Patch> sample_patches(const Volume &image, const Volume &labels, const PatchSpec &spec,
                                  const std::string &source_id = {});

struct PatchSource {
  std::string id;
  std::shared_ptr<const Volume> image;
  std::shared_ptr<const Volume> labels;
};

/// Training stream over several volumes. `spec.count` corners are drawn up
/// front and split round-robin across the sources; patches are extracted on
/// demand, cycling through the pool in a freshly shuffled order each pass.
class PatchStream {
public:
  PatchStream(std::vector<PatchSource> sources, const PatchSpec &spec);

  Patch next();
  std::size_t pool_size() const { return pool_.size(); }

  struct Entry {
    std::size_t source;
    Index3 origin;
  };
  const std::vector<Entry> &pool() const { return pool_; }

private:
  void reshuffle();

  std::vector<PatchSource> sources_;
  PatchSpec spec_;
  std::vector<Entry> pool_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

} // namespace brainseg::sampler
