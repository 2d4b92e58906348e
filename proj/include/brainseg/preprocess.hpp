#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "brainseg/volume.hpp"

namespace brainseg::preprocess {

inline constexpr double kEpsilon = 1e-12;

/// Zero-mean, unit-variance standardization using the population mean and
/// standard deviation of every voxel, background included.
/// Throws SigmaZero for a constant volume.
Volume standardize(const Volume &v);

/// Affine rescale to [0, 1]; the extremal voxels land exactly on 0 and 1.
/// Throws ZeroRange for a constant volume.
Volume rescale_minmax(const Volume &v);

struct AheParams {
  Index3 grid{8, 8, 8};
  double clip_limit = 0.01; // fraction of the block's voxel count
  int bins = 256;
  bool foreground_only = true; // foreground means intensity > 0
};

/// Contrast-limited adaptive histogram equalization over a 3D block grid.
/// Input values must lie in [0, 1]. Each block contributes a clipped-CDF
/// mapping; a voxel's output trilinearly blends the mappings of the eight
/// block centres around it. Blocks without foreground fall back to the
/// whole-volume mapping.
Volume adaptive_hist_eq(const Volume &v, const AheParams &params = {});

/// 0, 64 points evenly spaced over [1, 99], and 100.
std::vector<double> default_percentiles();

/// Empirical quantiles with linear interpolation between order statistics.
/// Throws DegenerateHistogram when all considered voxels share one value.
std::vector<double> compute_landmarks(const Volume &v, std::span<const double> percentiles, bool foreground_only);

/// Monotone piecewise-linear intensity map through (source[i] -> target[i]),
/// extended linearly past both ends.
class LandmarkMap {
public:
  // Drops pairs that would break strict monotonicity in either vector.
  // Throws DegenerateHistogram if fewer than two pairs survive and
  // InvalidArgument on length mismatch.
  static LandmarkMap build(std::span<const double> source, std::span<const double> target,
                           std::span<const double> percentiles);

  double operator()(double x) const;

  const std::vector<double> &source() const { return source_; }
  const std::vector<double> &target() const { return target_; }
  const std::vector<double> &percentiles() const { return percentiles_; }

private:
  std::vector<double> source_, target_, percentiles_;
};

/// Applies `map` to every voxel. With preserve_background, voxels <= 0 stay 0
/// and mapped foreground values are clamped at 0, which keeps the map weakly
/// monotone over the whole volume.
Volume match_histogram(const Volume &moving, const LandmarkMap &map, bool preserve_background = false);

struct ClassStats {
  int label = 0;
  std::uint64_t count = 0;
  double fraction = 0.0;
  double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
  std::vector<std::uint64_t> histogram; // 256 bins over the volume range rescaled to [0, 1]
};

struct TissueStats {
  std::uint64_t total = 0;
  double range_min = 0.0, range_max = 0.0;
  std::vector<ClassStats> classes; // ascending label order
};

inline constexpr int kStatsBins = 256;

/// Per-class intensity statistics used to pick a reference volume.
/// Throws DimMismatch when grids differ.
TissueStats tissue_stats(const Volume &v, const Volume &labels);

std::string to_table(const TissueStats &stats);
std::string to_json(const TissueStats &stats);

} // namespace brainseg::preprocess
