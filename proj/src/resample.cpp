#include "brainseg/resample.hpp"

#include <algorithm>
#include <cmath>

#include "brainseg/error.hpp"
#include "brainseg/parallel.hpp"

namespace brainseg::reg {

namespace {

// Indices within this distance of an integer are treated as exact, so identity
// mappings reproduce their input bit-for-bit.
constexpr double kSnap = 1e-6;

double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) < kSnap ? r : x;
}

} // namespace

std::optional<double> sample_trilinear(const Volume &v, const Vec3 &index) {
  const Index3 &d = v.dims();
  std::array<std::size_t, 3> lo{}, hi{};
  std::array<double, 3> w{};
  for (int a = 0; a < 3; ++a) {
    const double x = snap(index[a]);
    const double last = static_cast<double>(d[a] - 1);
    if (x < 0.0 || x > last) return std::nullopt;
    const double f = std::floor(x);
    lo[a] = static_cast<std::size_t>(f);
    hi[a] = std::min(lo[a] + 1, d[a] - 1);
    w[a] = x - f;
  }
  double acc = 0.0, vmin = 0.0, vmax = 0.0;
  bool first = true;
  for (int i = 0; i < 2; ++i) {
    const double wi = i ? w[0] : 1.0 - w[0];
    if (wi == 0.0) continue;
    for (int j = 0; j < 2; ++j) {
      const double wj = j ? w[1] : 1.0 - w[1];
      if (wj == 0.0) continue;
      for (int k = 0; k < 2; ++k) {
        const double wk = k ? w[2] : 1.0 - w[2];
        if (wk == 0.0) continue;
        const double s = v.at(i ? hi[0] : lo[0], j ? hi[1] : lo[1], k ? hi[2] : lo[2]);
        if (first) {
          vmin = vmax = s;
          first = false;
        }
        vmin = std::min(vmin, s);
        vmax = std::max(vmax, s);
        acc += wi * wj * wk * s;
      }
    }
  }
  return std::clamp(acc, vmin, vmax);
}

std::optional<double> sample_nearest(const Volume &v, const Vec3 &index) {
  const Index3 &d = v.dims();
  std::array<std::size_t, 3> n{};
  for (int a = 0; a < 3; ++a) {
    // Half-up rounding; a voxel owns [i - 0.5, i + 0.5).
    const double r = std::floor(snap(index[a]) + 0.5);
    if (r < 0.0 || r >= static_cast<double>(d[a])) return std::nullopt;
    n[a] = static_cast<std::size_t>(r);
  }
  return v.at(n[0], n[1], n[2]);
}

Volume resample(const Volume &v, const RigidTransform &t, const Grid &target, Interpolation mode,
                double default_value) {
  if (v.is_label() && mode != Interpolation::NearestNeighbor)
    raise(Errc::InvalidArgument, "label volumes must be resampled with nearest-neighbour interpolation");
  const auto moving_inv = invert_affine(v.affine());
  if (!moving_inv) raise(Errc::SingularAffine, "moving volume affine is not invertible");
  const Mat4 m = *moving_inv * t.matrix() * target.affine;

  std::vector<double> out(target.voxel_count());
  const Index3 &d = target.dims;
  parallel_for(d[0], [&](std::size_t i_begin, std::size_t i_end) {
    for (std::size_t i = i_begin; i < i_end; ++i)
      for (std::size_t j = 0; j < d[1]; ++j)
        for (std::size_t k = 0; k < d[2]; ++k) {
          const Vec3 idx = brainseg::apply(m, {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)});
          const auto s = mode == Interpolation::Trilinear ? sample_trilinear(v, idx) : sample_nearest(v, idx);
          out[(i * d[1] + j) * d[2] + k] = s.value_or(default_value);
        }
  });
  return Volume(target, std::move(out), v.kind());
}

} // namespace brainseg::reg
