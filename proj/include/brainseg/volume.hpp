#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace brainseg {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<std::size_t, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

Mat4 identity4();
Mat4 diagonal4(const Vec3 &scale);
Mat4 operator*(const Mat4 &a, const Mat4 &b);
Vec3 apply(const Mat4 &m, const Vec3 &p);
// Inverse of a matrix whose last row is (0,0,0,1); empty when the linear block is singular.
std::optional<Mat4> invert_affine(const Mat4 &m);

enum class VolumeKind { Intensity, Label };

/// Sampling lattice of a volume: extent, voxel size in mm, and the
/// voxel-index to world-mm mapping.
struct Grid {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Mat4 affine = identity4();

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  bool same_shape(const Grid &other) const { return dims == other.dims; }
  // World coordinate of the grid's geometric center.
  Vec3 world_center() const;

  static Grid axis_aligned(const Index3 &dims, const Vec3 &spacing);
};

/// Dense 3D scalar volume, row-major over (d0, d1, d2) so that d2 varies fastest.
/// The index triple (i0, i1, i2) is the NIfTI (i, j, k) voxel index.
class Volume {
public:
  Volume() = default;
  // Throws Error(DimMismatch / InvalidArgument / LabelOutOfRange) on invariant violations.
  Volume(Grid grid, std::vector<double> data, VolumeKind kind = VolumeKind::Intensity);

  static Volume filled(const Grid &grid, double value, VolumeKind kind = VolumeKind::Intensity);

  const Grid &grid() const { return grid_; }
  const Index3 &dims() const { return grid_.dims; }
  const Vec3 &spacing() const { return grid_.spacing; }
  const Mat4 &affine() const { return grid_.affine; }
  VolumeKind kind() const { return kind_; }
  bool is_label() const { return kind_ == VolumeKind::Label; }

  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * grid_.dims[1] + j) * grid_.dims[2] + k;
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  // Same grid, new values.
  Volume with_data(std::vector<double> data, VolumeKind kind) const;
  Volume with_data(std::vector<double> data) const { return with_data(std::move(data), kind_); }

private:
  Grid grid_;
  std::vector<double> data_;
  VolumeKind kind_ = VolumeKind::Intensity;
};

} // namespace brainseg
