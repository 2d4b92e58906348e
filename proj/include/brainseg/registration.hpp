#pragma once

#include <cstdint>
#include <vector>

#include "brainseg/rigid_transform.hpp"
#include "brainseg/volume.hpp"

namespace brainseg::reg {

enum class Metric { MeanSquares, MutualInformation };

struct RegistrationConfig {
  Metric metric = Metric::MutualInformation;
  int mi_bins = 32;
  std::vector<int> shrink_factors{4, 2, 1};
  std::vector<double> smoothing_sigmas_mm{2.0, 1.0, 0.0};
  // Initial step length per level, in units of that level's smallest voxel size.
  double step_size = 1.0;
  // A level stops once the step shrinks below min_step (same units).
  double min_step = 1e-3;
  int max_iterations = 200;
  double tolerance = 1e-6;
  double sampling_fraction = 0.1;
  std::uint64_t seed = 0;

  // Throws InvalidArgument.
  void validate() const;
};

struct RegistrationResult {
  RigidTransform transform;
  double metric = 0.0;          // at the finest level
  double identity_metric = 0.0; // identity transform on the same samples
  int iterations = 0;
};

/// Rigid registration of `moving` onto `fixed` by multi-resolution gradient
/// descent with central-difference gradients. The returned transform maps
/// fixed-space mm to moving-space mm and rotates about the fixed grid centre.
/// Throws DegenerateInput and NoOverlap.
RegistrationResult register_rigid(const Volume &moving, const Volume &fixed, const RegistrationConfig &cfg = {});

/// Dissimilarity (lower is better) of `moving` pulled through `t` against every
/// voxel of `fixed`: mean squared difference, or negative mutual information.
double evaluate_metric(const Volume &moving, const Volume &fixed, const RigidTransform &t,
                       Metric metric, int mi_bins = 32);

/// Separable Gaussian smoothing with sigma in mm; sigma 0 is the identity.
Volume smooth_gaussian(const Volume &v, double sigma_mm);
/// Keeps every `factor`-th voxel along each axis and scales the affine to match.
Volume subsample(const Volume &v, int factor);

} // namespace brainseg::reg
