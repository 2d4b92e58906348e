#include "brainseg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "brainseg/error.hpp"
#include "brainseg/resample.hpp"

namespace brainseg::reg {

void RegistrationConfig::validate() const {
  if (shrink_factors.empty()) raise(Errc::InvalidArgument, "at least one pyramid level is required");
  if (smoothing_sigmas_mm.size() != shrink_factors.size())
    raise(Errc::InvalidArgument, "one smoothing sigma per pyramid level is required");
  for (int s : shrink_factors)
    if (s < 1) raise(Errc::InvalidArgument, "shrink factors must be >= 1");
  for (double s : smoothing_sigmas_mm)
    if (s < 0.0) raise(Errc::InvalidArgument, "smoothing sigmas must be >= 0");
  if (!(sampling_fraction > 0.0 && sampling_fraction <= 1.0))
    raise(Errc::InvalidArgument, "sampling fraction must lie in (0, 1]");
  if (metric == Metric::MutualInformation && mi_bins < 2) raise(Errc::InvalidArgument, "mi_bins must be >= 2");
  if (!(step_size > 0.0) || !(min_step > 0.0) || max_iterations < 0 || tolerance < 0.0)
    raise(Errc::InvalidArgument, "invalid optimizer settings");
}

Volume smooth_gaussian(const Volume &v, double sigma_mm) {
  if (sigma_mm <= 0.0) return v;
  const Index3 d = v.dims();
  std::vector<double> cur(v.data().begin(), v.data().end());
  std::vector<double> next(cur.size());
  const std::size_t stride[3] = {d[1] * d[2], d[2], 1};
  for (int a = 0; a < 3; ++a) {
    const double sigma = sigma_mm / v.spacing()[a];
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    if (radius < 1 || d[a] == 1) continue;
    std::vector<double> kernel(2 * radius + 1);
    for (int t = -radius; t <= radius; ++t) kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
    const long n = static_cast<long>(d[a]);
    for (std::size_t flat = 0; flat < cur.size(); ++flat) {
      const long pos = static_cast<long>((flat / stride[a]) % d[a]);
      const std::size_t base = flat - static_cast<std::size_t>(pos) * stride[a];
      double acc = 0.0, wsum = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const long q = pos + t;
        if (q < 0 || q >= n) continue; // renormalized truncation at the border
        acc += kernel[t + radius] * cur[base + static_cast<std::size_t>(q) * stride[a]];
        wsum += kernel[t + radius];
      }
      next[flat] = acc / wsum;
    }
    std::swap(cur, next);
  }
  return v.with_data(std::move(cur));
}

Volume subsample(const Volume &v, int factor) {
  if (factor <= 1) return v;
  const auto f = static_cast<std::size_t>(factor);
  const Index3 &d = v.dims();
  Grid g;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = (d[a] + f - 1) / f;
    g.spacing[a] = v.spacing()[a] * static_cast<double>(f);
  }
  g.affine = v.affine() * diagonal4({double(f), double(f), double(f)});
  std::vector<double> out(g.voxel_count());
  for (std::size_t i = 0; i < g.dims[0]; ++i)
    for (std::size_t j = 0; j < g.dims[1]; ++j)
      for (std::size_t k = 0; k < g.dims[2]; ++k)
        out[(i * g.dims[1] + j) * g.dims[2] + k] = v.at(i * f, j * f, k * f);
  return Volume(g, std::move(out), v.kind());
}

namespace {

struct Sample {
  Vec3 world;
  double value;
};

class MetricEvaluator {
public:
  MetricEvaluator(const Volume &moving, const Volume &fixed, std::vector<Sample> samples, Metric metric, int bins)
      : moving_(moving), samples_(std::move(samples)), metric_(metric), bins_(bins) {
    const auto inv = invert_affine(moving.affine());
    if (!inv) raise(Errc::SingularAffine, "moving volume affine is not invertible");
    moving_inv_ = *inv;
    const auto md = moving.data();
    const auto [mlo, mhi] = std::minmax_element(md.begin(), md.end());
    mmin_ = *mlo;
    mmax_ = *mhi;
    const auto fd = fixed.data();
    const auto [flo, fhi] = std::minmax_element(fd.begin(), fd.end());
    fmin_ = *flo;
    fmax_ = *fhi;
  }

  // Fraction of samples that land inside the moving volume under t.
  double overlap(const RigidTransform &t) const {
    const Mat4 m = moving_inv_ * t.matrix();
    std::size_t inside = 0;
    for (const auto &s : samples_)
      if (sample_trilinear(moving_, brainseg::apply(m, s.world))) ++inside;
    return samples_.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(samples_.size());
  }

  double operator()(const RigidTransform &t) const {
    const Mat4 m = moving_inv_ * t.matrix();
    if (metric_ == Metric::MeanSquares) {
      double acc = 0.0;
      std::size_t n = 0;
      for (const auto &s : samples_) {
        const auto mv = sample_trilinear(moving_, brainseg::apply(m, s.world));
        if (!mv) continue;
        const double diff = *mv - s.value;
        acc += diff * diff;
        ++n;
      }
      return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::infinity();
    }
    return negative_mutual_information(m);
  }

private:
  double negative_mutual_information(const Mat4 &m) const {
    const int b = bins_;
    std::vector<double> joint(static_cast<std::size_t>(b * b), 0.0);
    const double fscale = fmax_ > fmin_ ? (b - 1) / (fmax_ - fmin_) : 0.0;
    const double mscale = mmax_ > mmin_ ? (b - 1) / (mmax_ - mmin_) : 0.0;
    for (const auto &s : samples_) {
      // Points mapped outside the moving volume read as its background so that
      // the sample set, and with it the fixed marginal, does not depend on t.
      const double mv = sample_trilinear(moving_, brainseg::apply(m, s.world)).value_or(mmin_);
      // Linear Parzen window: each sample spreads over the 2x2 neighbouring bins.
      const double fx = std::clamp((s.value - fmin_) * fscale, 0.0, double(b - 1));
      const double mx = std::clamp((mv - mmin_) * mscale, 0.0, double(b - 1));
      const int f0 = std::min(static_cast<int>(fx), b - 2);
      const int m0 = std::min(static_cast<int>(mx), b - 2);
      const double fw = fx - f0, mw = mx - m0;
      joint[f0 * b + m0] += (1 - fw) * (1 - mw);
      joint[f0 * b + m0 + 1] += (1 - fw) * mw;
      joint[(f0 + 1) * b + m0] += fw * (1 - mw);
      joint[(f0 + 1) * b + m0 + 1] += fw * mw;
    }
    const double total = static_cast<double>(samples_.size());
    if (total == 0.0) return std::numeric_limits<double>::infinity();
    std::vector<double> pf(b, 0.0), pm(b, 0.0);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) {
        const double p = joint[i * b + j] / total;
        pf[i] += p;
        pm[j] += p;
      }
    double mi = 0.0;
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) {
        const double p = joint[i * b + j] / total;
        if (p > 0.0) mi += p * std::log(p / (pf[i] * pm[j]));
      }
    return -mi;
  }

  const Volume &moving_;
  std::vector<Sample> samples_;
  Metric metric_;
  int bins_;
  Mat4 moving_inv_{};
  double mmin_ = 0, mmax_ = 0, fmin_ = 0, fmax_ = 0;
};

std::vector<Sample> all_samples(const Volume &fixed) {
  std::vector<Sample> out;
  out.reserve(fixed.size());
  const Index3 &d = fixed.dims();
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t k = 0; k < d[2]; ++k)
        out.push_back({brainseg::apply(fixed.affine(), {double(i), double(j), double(k)}), fixed.at(i, j, k)});
  return out;
}

// A random subset of voxels, each moved by a uniform offset of up to half a
// voxel per axis; the fixed value is interpolated at the moved point.
std::vector<Sample> draw_samples(const Volume &fixed, double fraction, std::mt19937_64 &rng) {
  const std::size_t n = fixed.size();
  const auto want = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * double(n))), 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < want; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(want);
  std::sort(idx.begin(), idx.end());
  const Index3 &d = fixed.dims();
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  std::vector<Sample> out;
  out.reserve(want);
  for (std::size_t flat : idx) {
    const std::size_t ijk[3] = {flat / (d[1] * d[2]), (flat / d[2]) % d[1], flat % d[2]};
    Vec3 p{};
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(double(ijk[a]) + jitter(rng), 0.0, double(d[a] - 1));
    out.push_back({brainseg::apply(fixed.affine(), p), sample_trilinear(fixed, p).value_or(fixed[flat])});
  }
  return out;
}

Vec3 centre_of_mass(const Volume &v) {
  const auto d = v.data();
  const double lo = *std::min_element(d.begin(), d.end());
  Vec3 acc{};
  double wsum = 0.0;
  const Index3 &n = v.dims();
  for (std::size_t i = 0; i < n[0]; ++i)
    for (std::size_t j = 0; j < n[1]; ++j)
      for (std::size_t k = 0; k < n[2]; ++k) {
        const double w = v.at(i, j, k) - lo;
        acc[0] += w * double(i);
        acc[1] += w * double(j);
        acc[2] += w * double(k);
        wsum += w;
      }
  if (wsum <= 0.0) return v.grid().world_center();
  for (double &x : acc) x /= wsum;
  return brainseg::apply(v.affine(), acc);
}

bool is_constant(const Volume &v) {
  const auto d = v.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  return !(*hi - *lo > 0.0);
}

// Scaled parameters: rotations are multiplied by `radius` so that one unit of
// any coordinate moves the volume boundary by about one millimetre.
struct ParamScaling {
  double radius;
  std::array<double, 6> to_vector(const RigidTransform &t) const {
    return {t.euler_zyx[0] * radius, t.euler_zyx[1] * radius, t.euler_zyx[2] * radius,
            t.translation[0], t.translation[1], t.translation[2]};
  }
  RigidTransform from_vector(const std::array<double, 6> &u, const Vec3 &center) const {
    return RigidTransform{{u[0] / radius, u[1] / radius, u[2] / radius}, {u[3], u[4], u[5]}, center};
  }
};

} // namespace

double evaluate_metric(const Volume &moving, const Volume &fixed, const RigidTransform &t, Metric metric,
                       int mi_bins) {
  const MetricEvaluator eval(moving, fixed, all_samples(fixed), metric, mi_bins);
  return eval(t);
}

RegistrationResult register_rigid(const Volume &moving, const Volume &fixed, const RegistrationConfig &cfg) {
  cfg.validate();
  if (moving.is_label() || fixed.is_label())
    raise(Errc::InvalidArgument, "registration requires intensity volumes");
  if (is_constant(moving) || is_constant(fixed)) raise(Errc::DegenerateInput, "cannot register a constant volume");

  const Vec3 center = fixed.grid().world_center();
  double radius = 0.0;
  for (int a = 0; a < 3; ++a) {
    Vec3 corner{};
    corner[a] = static_cast<double>(fixed.dims()[a] - 1);
    Vec3 origin = brainseg::apply(fixed.affine(), {0, 0, 0});
    Vec3 end = brainseg::apply(fixed.affine(), corner);
    double len = 0.0;
    for (int c = 0; c < 3; ++c) len += (end[c] - origin[c]) * (end[c] - origin[c]);
    radius = std::max(radius, 0.5 * std::sqrt(len));
  }
  radius = std::max(radius, 1.0);
  const ParamScaling scaling{radius};

  // Translation-only start that aligns intensity centroids.
  const Vec3 com_fixed = centre_of_mass(fixed), com_moving = centre_of_mass(moving);
  RigidTransform moments = RigidTransform::identity(center);
  for (int a = 0; a < 3; ++a) moments.translation[a] = com_moving[a] - com_fixed[a];

  std::mt19937_64 rng(cfg.seed);
  RigidTransform current = RigidTransform::identity(center);
  RegistrationResult result;
  const std::size_t levels = cfg.shrink_factors.size();
  for (std::size_t level = 0; level < levels; ++level) {
    const int shrink = cfg.shrink_factors[level];
    const double sigma = cfg.smoothing_sigmas_mm[level];
    const Volume fixed_l = subsample(smooth_gaussian(fixed, sigma), shrink);
    const Volume moving_l = subsample(smooth_gaussian(moving, sigma), shrink);
    const MetricEvaluator metric(moving_l, fixed_l, draw_samples(fixed_l, cfg.sampling_fraction, rng), cfg.metric,
                                 cfg.mi_bins);
    const double min_spacing = *std::min_element(fixed_l.spacing().begin(), fixed_l.spacing().end());

    // Never start a level worse than the identity or the centroid alignment.
    const RigidTransform identity = RigidTransform::identity(center);
    double value = metric(current);
    const double identity_value = metric(identity);
    if (identity_value < value) {
      current = identity;
      value = identity_value;
    }
    const double moments_value = metric(moments);
    if (moments_value < value) {
      current = moments;
      value = moments_value;
    }
    if (level == 0 && metric.overlap(identity) < 0.01)
      raise(Errc::NoOverlap, "fewer than 1% of fixed samples map inside the moving volume");

    const std::array<double, 6> h{1e-3, 1e-3, 1e-3, 0.1 * min_spacing, 0.1 * min_spacing, 0.1 * min_spacing};
    double step = cfg.step_size * min_spacing;
    const double min_step = cfg.min_step * min_spacing;
    std::array<double, 6> grad{};
    bool have_grad = false;
    for (int it = 0; it < cfg.max_iterations && step >= min_step; ++it) {
      ++result.iterations;
      if (!have_grad) {
        // Central differences in native parameters, then chain to scaled ones.
        for (int p = 0; p < 6; ++p) {
          RigidTransform plus = current, minus = current;
          if (p < 3) {
            plus.euler_zyx[p] += h[p];
            minus.euler_zyx[p] -= h[p];
          } else {
            plus.translation[p - 3] += h[p];
            minus.translation[p - 3] -= h[p];
          }
          const double g = (metric(plus) - metric(minus)) / (2.0 * h[p]);
          grad[p] = p < 3 ? g / radius : g;
          if (!std::isfinite(grad[p])) grad[p] = 0.0;
        }
        have_grad = true;
      }
      double norm = 0.0;
      for (double g : grad) norm += g * g;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      auto u = scaling.to_vector(current);
      for (int p = 0; p < 6; ++p) u[p] -= step * grad[p] / norm;
      const RigidTransform candidate = scaling.from_vector(u, center);
      const double candidate_value = metric(candidate);
      if (candidate_value < value) {
        const double improvement = (value - candidate_value) / std::max(std::abs(value), 1e-30);
        current = candidate;
        value = candidate_value;
        have_grad = false;
        if (improvement < cfg.tolerance) break;
      } else {
        step *= 0.5;
      }
    }
    if (level + 1 == levels) {
      result.metric = value;
      result.identity_metric = identity_value;
    }
  }
  result.transform = current;
  return result;
}

} // namespace brainseg::reg
