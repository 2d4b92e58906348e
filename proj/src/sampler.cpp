#include "brainseg/sampler.hpp"

#include <algorithm>
#include <numeric>

#include "brainseg/error.hpp"

namespace brainseg::sampler {

namespace {

void check_fit(const Index3 &dims, const PatchSpec &spec) {
  if (spec.count < 1) raise(Errc::InvalidArgument, "patch count must be >= 1");
  for (int a = 0; a < 3; ++a) {
    if (spec.size[a] < 1) raise(Errc::InvalidArgument, "patch size must be positive");
    if (spec.size[a] > dims[a])
      raise(Errc::SizeExceedsVolume, "patch extent " + std::to_string(spec.size[a]) + " exceeds volume extent " +
                                         std::to_string(dims[a]) + " on axis " + std::to_string(a));
  }
}

} // namespace

OriginSampler::OriginSampler(const Volume &labels, const PatchSpec &spec)
    : labels_(labels), spec_(spec), rng_(spec.seed) {
  check_fit(labels.dims(), spec);
  for (int a = 0; a < 3; ++a) corner_extent_[a] = labels.dims()[a] - spec.size[a] + 1;
}

Index3 OriginSampler::uniform() {
  Index3 o{};
  for (int a = 0; a < 3; ++a) {
    std::uniform_int_distribution<std::size_t> pick(0, corner_extent_[a] - 1);
    o[a] = pick(rng_);
  }
  return o;
}

const std::vector<std::uint32_t> &OriginSampler::corners_with(int cls) {
  const auto it = corners_.find(cls);
  if (it != corners_.end()) return it->second;

  // Summed-volume table of the class mask, (d+1)^3 with a zero border.
  const Index3 &d = labels_.dims();
  const std::size_t s1 = d[1] + 1, s2 = d[2] + 1;
  std::vector<std::uint32_t> sat((d[0] + 1) * s1 * s2, 0);
  auto at = [&](std::size_t i, std::size_t j, std::size_t k) -> std::uint32_t & { return sat[(i * s1 + j) * s2 + k]; };
  for (std::size_t i = 1; i <= d[0]; ++i)
    for (std::size_t j = 1; j <= d[1]; ++j)
      for (std::size_t k = 1; k <= d[2]; ++k) {
        const std::uint32_t m = static_cast<int>(labels_.at(i - 1, j - 1, k - 1)) == cls ? 1u : 0u;
        at(i, j, k) = m + at(i - 1, j, k) + at(i, j - 1, k) + at(i, j, k - 1) - at(i - 1, j - 1, k) -
                      at(i - 1, j, k - 1) - at(i, j - 1, k - 1) + at(i - 1, j - 1, k - 1);
      }
  std::vector<std::uint32_t> list;
  const Index3 &s = spec_.size;
  for (std::size_t i = 0; i < corner_extent_[0]; ++i)
    for (std::size_t j = 0; j < corner_extent_[1]; ++j)
      for (std::size_t k = 0; k < corner_extent_[2]; ++k) {
        const std::int64_t box = static_cast<std::int64_t>(at(i + s[0], j + s[1], k + s[2])) - at(i, j + s[1], k + s[2]) -
                                 at(i + s[0], j, k + s[2]) - at(i + s[0], j + s[1], k) + at(i, j, k + s[2]) +
                                 at(i, j + s[1], k) + at(i + s[0], j, k) - at(i, j, k);
        if (box > 0) list.push_back(static_cast<std::uint32_t>((i * corner_extent_[1] + j) * corner_extent_[2] + k));
      }
  return corners_.emplace(cls, std::move(list)).first->second;
}

Index3 OriginSampler::next() {
  const std::uint64_t n = drawn_++;
  if (spec_.mode == SamplingMode::Uniform) return uniform();
  const int target = static_cast<int>(n % static_cast<std::uint64_t>(std::max(1, spec_.n_classes)));
  const auto &list = corners_with(target);
  if (list.empty()) return uniform();
  std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
  const std::size_t flat = list[pick(rng_)];
  return {flat / (corner_extent_[1] * corner_extent_[2]), (flat / corner_extent_[2]) % corner_extent_[1],
          flat % corner_extent_[2]};
}

Patch extract_patch(const Volume &image, const Volume &labels, const Index3 &origin, const Index3 &size,
                    const std::string &source_id) {
  if (!image.grid().same_shape(labels.grid())) raise(Errc::DimMismatch, "image and label grids differ");
  for (int a = 0; a < 3; ++a)
    if (origin[a] + size[a] > image.dims()[a]) raise(Errc::SizeExceedsVolume, "patch leaves the volume");
  Patch p;
  p.size = size;
  p.origin = origin;
  p.source_id = source_id;
  const std::size_t n = size[0] * size[1] * size[2];
  p.intensities.resize(n);
  p.labels.resize(n);
  std::size_t dst = 0;
  for (std::size_t i = 0; i < size[0]; ++i)
    for (std::size_t j = 0; j < size[1]; ++j)
      for (std::size_t k = 0; k < size[2]; ++k, ++dst) {
        const std::size_t src = image.index(origin[0] + i, origin[1] + j, origin[2] + k);
        p.intensities[dst] = static_cast<float>(image[src]);
        p.labels[dst] = static_cast<std::int32_t>(labels[src]);
      }
  return p;
}

std::vector<Patch> sample_patches(const Volume &image, const Volume &labels, const PatchSpec &spec,
                                  const std::string &source_id) {
  if (!image.grid().same_shape(labels.grid())) raise(Errc::DimMismatch, "image and label grids differ");
  OriginSampler sampler(labels, spec);
  std::vector<Patch> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) out.push_back(extract_patch(image, labels, sampler.next(), spec.size, source_id));
  return out;
}

PatchStream::PatchStream(std::vector<PatchSource> sources, const PatchSpec &spec)
    : sources_(std::move(sources)), spec_(spec), rng_(spec.seed) {
  if (sources_.empty()) raise(Errc::InvalidArgument, "patch stream needs at least one source");
  if (spec.count < 1) raise(Errc::InvalidArgument, "patch count must be >= 1");
  std::vector<OriginSampler> samplers;
  samplers.reserve(sources_.size());
  for (std::size_t s = 0; s < sources_.size(); ++s) {
    const auto &src = sources_[s];
    if (!src.image->grid().same_shape(src.labels->grid()))
      raise(Errc::DimMismatch, "image and label grids differ for " + src.id);
    PatchSpec per = spec;
    per.seed = spec.seed + 0x9E3779B97F4A7C15ull * (s + 1);
    samplers.emplace_back(*src.labels, per);
  }
  for (int i = 0; i < spec.count; ++i) {
    const std::size_t s = static_cast<std::size_t>(i) % sources_.size();
    pool_.push_back({s, samplers[s].next()});
  }
  order_.resize(pool_.size());
  reshuffle();
}

void PatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order_[i - 1], order_[pick(rng_)]);
  }
  cursor_ = 0;
}

Patch PatchStream::next() {
  if (cursor_ == order_.size()) reshuffle();
  const Entry &e = pool_[order_[cursor_++]];
  const auto &src = sources_[e.source];
  return extract_patch(*src.image, *src.labels, e.origin, spec_.size, src.id);
}

} // namespace brainseg::sampler
