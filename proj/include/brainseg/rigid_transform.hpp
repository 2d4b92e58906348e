#pragma once

#include <filesystem>

#include "brainseg/volume.hpp"

namespace brainseg::reg {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Six-parameter rigid map from fixed-space mm to moving-space mm:
///   q = R (p - center) + center + translation,   R = Rz(a) * Ry(b) * Rx(c)
/// with (a, b, c) = euler_zyx (intrinsic Z-Y-X, radians).
struct RigidTransform {
  Vec3 euler_zyx{};
  Vec3 translation{};
  Vec3 center{};

  static RigidTransform identity(const Vec3 &center = {}) { return RigidTransform{{}, {}, center}; }
  // Euler angles are recovered from `rotation`, which must be a proper rotation.
  static RigidTransform from_rotation(const Mat3 &rotation, const Vec3 &translation, const Vec3 &center);

  Mat3 rotation() const;
  Mat4 matrix() const;
  Vec3 operator()(const Vec3 &p) const;
};

Mat3 rotation_zyx(const Vec3 &euler_zyx);
Vec3 euler_from_rotation(const Mat3 &r);

RigidTransform invert(const RigidTransform &t);
// (outer ∘ inner)(p) = outer(inner(p)), expressed about inner.center.
RigidTransform compose(const RigidTransform &outer, const RigidTransform &inner);
// Angle in radians of the rotation R_a^T R_b.
double rotation_angle_between(const RigidTransform &a, const RigidTransform &b);

/// Line-oriented text: a "rigid-v1" version line, a comment stating the
/// convention, then euler_zyx_rad / translation_mm / center_mm with three
/// values each at 17 significant digits.
void save_transform(const RigidTransform &t, const std::filesystem::path &path);
RigidTransform load_transform(const std::filesystem::path &path);

} // namespace brainseg::reg
