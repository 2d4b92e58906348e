#pragma once

#include "brainseg/rigid_transform.hpp"
#include "brainseg/volume.hpp"

namespace brainseg::reg {

enum class Interpolation { Trilinear, NearestNeighbor };

/// Pulls `v` onto `target`: each target voxel's world point goes through `t`
/// into the space of `v`, then through the inverse of v's affine to a
/// continuous voxel index. Samples outside `v` take `default_value`.
/// Label volumes require NearestNeighbor. Throws SingularAffine.
Volume resample(const Volume &v, const RigidTransform &t, const Grid &target, Interpolation mode,
                double default_value = 0.0);

// Continuous-index samplers; nullopt outside the volume.
std::optional<double> sample_trilinear(const Volume &v, const Vec3 &index);
std::optional<double> sample_nearest(const Volume &v, const Vec3 &index);

} // namespace brainseg::reg
