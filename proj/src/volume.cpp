#include "brainseg/volume.hpp"

#include <cmath>
#include <string>

#include "brainseg/error.hpp"

namespace brainseg {

Mat4 identity4() { return diagonal4({1.0, 1.0, 1.0}); }

Mat4 diagonal4(const Vec3 &scale) {
  Mat4 m{};
  for (int i = 0; i < 3; ++i) m[i][i] = scale[i];
  m[3][3] = 1.0;
  return m;
}

Mat4 operator*(const Mat4 &a, const Mat4 &b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

Vec3 apply(const Mat4 &m, const Vec3 &p) {
  Vec3 q{};
  for (int i = 0; i < 3; ++i) q[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
  return q;
}

std::optional<Mat4> invert_affine(const Mat4 &m) {
  const double a = m[0][0], b = m[0][1], c = m[0][2];
  const double d = m[1][0], e = m[1][1], f = m[1][2];
  const double g = m[2][0], h = m[2][1], i = m[2][2];
  const double co00 = e * i - f * h, co01 = f * g - d * i, co02 = d * h - e * g;
  const double det = a * co00 + b * co01 + c * co02;
  double scale = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s) scale = std::max(scale, std::abs(m[r][s]));
  if (!(std::abs(det) > 1e-12 * scale * scale * scale) || !std::isfinite(det)) return std::nullopt;
  const double inv = 1.0 / det;
  Mat4 r{};
  r[0][0] = co00 * inv;
  r[0][1] = (c * h - b * i) * inv;
  r[0][2] = (b * f - c * e) * inv;
  r[1][0] = co01 * inv;
  r[1][1] = (a * i - c * g) * inv;
  r[1][2] = (c * d - a * f) * inv;
  r[2][0] = co02 * inv;
  r[2][1] = (b * g - a * h) * inv;
  r[2][2] = (a * e - b * d) * inv;
  for (int row = 0; row < 3; ++row)
    r[row][3] = -(r[row][0] * m[0][3] + r[row][1] * m[1][3] + r[row][2] * m[2][3]);
  r[3][3] = 1.0;
  return r;
}

Vec3 Grid::world_center() const {
  Vec3 idx{};
  for (int a = 0; a < 3; ++a) idx[a] = 0.5 * static_cast<double>(dims[a] - 1);
  return brainseg::apply(affine, idx);
}

Grid Grid::axis_aligned(const Index3 &dims, const Vec3 &spacing) {
  return Grid{dims, spacing, diagonal4(spacing)};
}

namespace {

void validate(const Grid &grid, std::size_t n, VolumeKind kind, const std::vector<double> &data) {
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[a] == 0) raise(Errc::DimMismatch, "volume dimension " + std::to_string(a) + " is zero");
    if (!(grid.spacing[a] > 0.0)) raise(Errc::InvalidArgument, "voxel spacing must be positive");
  }
  if (n != grid.voxel_count())
    raise(Errc::DimMismatch, "data length " + std::to_string(n) + " does not match dims product " +
                                 std::to_string(grid.voxel_count()));
  const auto &row = grid.affine[3];
  if (row[0] != 0.0 || row[1] != 0.0 || row[2] != 0.0 || row[3] != 1.0)
    raise(Errc::InvalidArgument, "affine last row must be (0,0,0,1)");
  if (kind == VolumeKind::Label) {
    for (double v : data)
      if (!(v >= 0.0) || std::floor(v) != v)
        raise(Errc::LabelOutOfRange, "label volume holds non-integer or negative value " + std::to_string(v));
  }
}

} // namespace

Volume::Volume(Grid grid, std::vector<double> data, VolumeKind kind)
    : grid_(grid), data_(std::move(data)), kind_(kind) {
  validate(grid_, data_.size(), kind_, data_);
}

Volume Volume::filled(const Grid &grid, double value, VolumeKind kind) {
  return Volume(grid, std::vector<double>(grid.voxel_count(), value), kind);
}

Volume Volume::with_data(std::vector<double> data, VolumeKind kind) const {
  return Volume(grid_, std::move(data), kind);
}

} // namespace brainseg
