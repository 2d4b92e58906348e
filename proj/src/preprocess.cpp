#include "brainseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "brainseg/error.hpp"
#include "brainseg/parallel.hpp"
#include "json.hpp"

namespace brainseg::preprocess {

namespace {

void require_intensity(const Volume &v, const char *op) {
  if (v.is_label()) raise(Errc::InvalidArgument, std::string(op) + " requires an intensity volume");
}

} // namespace

Volume standardize(const Volume &v) {
  require_intensity(v, "standardize");
  const auto data = v.data();
  const double n = static_cast<double>(data.size());
  double sum = 0.0;
  for (double x : data) sum += x;
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : data) ss += (x - mean) * (x - mean);
  const double sigma = std::sqrt(ss / n);
  if (!(sigma > kEpsilon)) raise(Errc::SigmaZero, "volume has zero standard deviation");
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = (data[i] - mean) / sigma;
  return v.with_data(std::move(out));
}

Volume rescale_minmax(const Volume &v) {
  require_intensity(v, "rescale_minmax");
  const auto data = v.data();
  const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi - lo > kEpsilon)) raise(Errc::ZeroRange, "volume intensity range is empty");
  const double range = hi - lo;
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = (data[i] - lo) / range;
  return v.with_data(std::move(out));
}

// ---------------------------------------------------------------------------
// Adaptive histogram equalization

namespace {

struct BlockMapping {
  std::vector<double> cdf;  // cdf[k] = mass of bins 0..k
  std::vector<double> mass; // normalized clipped histogram
};

BlockMapping make_mapping(std::vector<double> hist, double clip_limit) {
  const auto bins = hist.size();
  double count = 0.0;
  for (double h : hist) count += h;
  if (clip_limit < 1.0) {
    const double limit = clip_limit * count;
    double excess = 0.0;
    for (double &h : hist) {
      if (h > limit) {
        excess += h - limit;
        h = limit;
      }
    }
    const double share = excess / static_cast<double>(bins);
    for (double &h : hist) h += share;
  }
  BlockMapping m;
  m.cdf.resize(bins);
  m.mass.resize(bins);
  double run = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    m.mass[k] = hist[k] / count;
    run += hist[k];
    m.cdf[k] = run / count;
  }
  m.cdf.back() = 1.0;
  return m;
}

// Piecewise-linear CDF: linear inside each bin.
double map_value(const BlockMapping &m, double v) {
  const int bins = static_cast<int>(m.cdf.size());
  const double t = std::clamp(v, 0.0, 1.0) * bins;
  const int k = std::min(static_cast<int>(t), bins - 1);
  const double below = k > 0 ? m.cdf[k - 1] : 0.0;
  return std::min(1.0, below + (t - k) * m.mass[k]);
}

int bin_of(double v, int bins) {
  return std::min(static_cast<int>(std::clamp(v, 0.0, 1.0) * bins), bins - 1);
}

struct AxisBlend {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w; // weight of hi
};

AxisBlend axis_blend(std::size_t n, std::size_t g, std::vector<std::size_t> &start) {
  start.resize(g + 1);
  for (std::size_t b = 0; b <= g; ++b) start[b] = b * n / g;
  std::vector<double> centre(g);
  for (std::size_t b = 0; b < g; ++b) centre[b] = 0.5 * static_cast<double>(start[b] + start[b + 1] - 1);
  AxisBlend a;
  a.lo.resize(n);
  a.hi.resize(n);
  a.w.resize(n);
  for (std::size_t x = 0; x < n; ++x) {
    const double p = static_cast<double>(x);
    if (p <= centre.front()) {
      a.lo[x] = a.hi[x] = 0;
      a.w[x] = 0.0;
    } else if (p >= centre.back()) {
      a.lo[x] = a.hi[x] = g - 1;
      a.w[x] = 0.0;
    } else {
      std::size_t b = 0;
      while (b + 1 < g && centre[b + 1] <= p) ++b;
      a.lo[x] = b;
      a.hi[x] = b + 1;
      a.w[x] = (p - centre[b]) / (centre[b + 1] - centre[b]);
    }
  }
  return a;
}

} // namespace

Volume adaptive_hist_eq(const Volume &v, const AheParams &params) {
  require_intensity(v, "adaptive_hist_eq");
  if (params.bins < 2) raise(Errc::InvalidArgument, "bins must be at least 2");
  if (!(params.clip_limit > 0.0 && params.clip_limit <= 1.0))
    raise(Errc::InvalidArgument, "clip_limit must lie in (0, 1]");
  for (std::size_t g : params.grid)
    if (g < 1) raise(Errc::InvalidArgument, "grid components must be >= 1");
  for (double x : v.data())
    if (x < -1e-9 || x > 1.0 + 1e-9) raise(Errc::InvalidArgument, "adaptive_hist_eq expects values in [0, 1]");

  const Index3 dims = v.dims();
  const int bins = params.bins;
  const bool fg = params.foreground_only;
  Index3 g{};
  std::array<std::vector<std::size_t>, 3> start;
  std::array<AxisBlend, 3> blend;
  for (int a = 0; a < 3; ++a) {
    g[a] = std::min(params.grid[a], dims[a]);
    blend[a] = axis_blend(dims[a], g[a], start[a]);
  }

  const std::size_t nblocks = g[0] * g[1] * g[2];
  std::vector<std::vector<double>> hist(nblocks, std::vector<double>(bins, 0.0));
  std::vector<double> global(bins, 0.0);
  for (std::size_t b0 = 0; b0 < g[0]; ++b0)
    for (std::size_t b1 = 0; b1 < g[1]; ++b1)
      for (std::size_t b2 = 0; b2 < g[2]; ++b2) {
        auto &h = hist[(b0 * g[1] + b1) * g[2] + b2];
        for (std::size_t i = start[0][b0]; i < start[0][b0 + 1]; ++i)
          for (std::size_t j = start[1][b1]; j < start[1][b1 + 1]; ++j)
            for (std::size_t k = start[2][b2]; k < start[2][b2 + 1]; ++k) {
              const double x = v.at(i, j, k);
              if (fg && !(x > 0.0)) continue;
              const int bin = bin_of(x, bins);
              h[bin] += 1.0;
              global[bin] += 1.0;
            }
      }

  double global_count = 0.0;
  for (double c : global) global_count += c;
  if (global_count == 0.0) return v.with_data(std::vector<double>(v.size(), 0.0));
  const BlockMapping global_map = make_mapping(global, params.clip_limit);

  std::vector<BlockMapping> maps(nblocks);
  for (std::size_t b = 0; b < nblocks; ++b) {
    double c = 0.0;
    for (double x : hist[b]) c += x;
    // Empty block: fall back to the whole-volume mapping.
    maps[b] = c > 0.0 ? make_mapping(std::move(hist[b]), params.clip_limit) : global_map;
  }

  std::vector<double> out(v.size());
  parallel_for(dims[0], [&](std::size_t i_begin, std::size_t i_end) {
    for (std::size_t i = i_begin; i < i_end; ++i)
      for (std::size_t j = 0; j < dims[1]; ++j)
        for (std::size_t k = 0; k < dims[2]; ++k) {
          const std::size_t idx = v.index(i, j, k);
          const double x = v[idx];
          if (fg && !(x > 0.0)) {
            out[idx] = 0.0;
            continue;
          }
          const std::size_t bi[2] = {blend[0].lo[i], blend[0].hi[i]};
          const std::size_t bj[2] = {blend[1].lo[j], blend[1].hi[j]};
          const std::size_t bk[2] = {blend[2].lo[k], blend[2].hi[k]};
          const double wi[2] = {1.0 - blend[0].w[i], blend[0].w[i]};
          const double wj[2] = {1.0 - blend[1].w[j], blend[1].w[j]};
          const double wk[2] = {1.0 - blend[2].w[k], blend[2].w[k]};
          double acc = 0.0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int c = 0; c < 2; ++c) {
                const double w = wi[a] * wj[b] * wk[c];
                if (w == 0.0) continue;
                acc += w * map_value(maps[(bi[a] * g[1] + bj[b]) * g[2] + bk[c]], x);
              }
          out[idx] = std::clamp(acc, 0.0, 1.0);
        }
  });
  return v.with_data(std::move(out));
}

// ---------------------------------------------------------------------------
// Landmarks and matching

std::vector<double> default_percentiles() {
  std::vector<double> p;
  p.reserve(66);
  p.push_back(0.0);
  for (int i = 0; i < 64; ++i) p.push_back(1.0 + 98.0 * i / 63.0);
  p.push_back(100.0);
  return p;
}

std::vector<double> compute_landmarks(const Volume &v, std::span<const double> percentiles, bool foreground_only) {
  require_intensity(v, "compute_landmarks");
  for (std::size_t i = 0; i < percentiles.size(); ++i) {
    if (percentiles[i] < 0.0 || percentiles[i] > 100.0)
      raise(Errc::InvalidArgument, "percentiles must lie in [0, 100]");
    if (i > 0 && percentiles[i] < percentiles[i - 1]) raise(Errc::InvalidArgument, "percentiles must ascend");
  }
  std::vector<double> values;
  values.reserve(v.size());
  for (double x : v.data())
    if (!foreground_only || x > 0.0) values.push_back(x);
  if (values.empty()) raise(Errc::DegenerateHistogram, "no foreground voxels");
  std::sort(values.begin(), values.end());
  if (values.front() == values.back()) raise(Errc::DegenerateHistogram, "all considered voxels are equal");

  const double last = static_cast<double>(values.size() - 1);
  std::vector<double> out;
  out.reserve(percentiles.size());
  for (double p : percentiles) {
    const double pos = p / 100.0 * last;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out.push_back(values[lo] + frac * (values[hi] - values[lo]));
  }
  return out;
}

LandmarkMap LandmarkMap::build(std::span<const double> source, std::span<const double> target,
                               std::span<const double> percentiles) {
  if (source.size() != target.size() || source.size() != percentiles.size())
    raise(Errc::InvalidArgument, "landmark vectors differ in length");
  LandmarkMap m;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (!m.source_.empty() && (source[i] <= m.source_.back() || target[i] <= m.target_.back())) continue;
    m.source_.push_back(source[i]);
    m.target_.push_back(target[i]);
    m.percentiles_.push_back(percentiles[i]);
  }
  if (m.source_.size() < 2) raise(Errc::DegenerateHistogram, "fewer than two distinct landmarks");
  return m;
}

double LandmarkMap::operator()(double x) const {
  const std::size_t n = source_.size();
  std::size_t seg;
  if (x <= source_.front())
    seg = 0;
  else if (x >= source_.back())
    seg = n - 2;
  else
    seg = static_cast<std::size_t>(std::upper_bound(source_.begin(), source_.end(), x) - source_.begin()) - 1;
  const double slope = (target_[seg + 1] - target_[seg]) / (source_[seg + 1] - source_[seg]);
  return target_[seg] + slope * (x - source_[seg]);
}

Volume match_histogram(const Volume &moving, const LandmarkMap &map, bool preserve_background) {
  require_intensity(moving, "match_histogram");
  const auto data = moving.data();
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (preserve_background)
      out[i] = data[i] > 0.0 ? std::max(0.0, map(data[i])) : 0.0;
    else
      out[i] = map(data[i]);
  }
  return moving.with_data(std::move(out));
}

// ---------------------------------------------------------------------------
// Tissue statistics

TissueStats tissue_stats(const Volume &v, const Volume &labels) {
  if (!v.grid().same_shape(labels.grid())) raise(Errc::DimMismatch, "intensity and label grids differ");
  if (!labels.is_label()) raise(Errc::InvalidArgument, "tissue_stats requires a label volume");
  const auto data = v.data();
  const auto lab = labels.data();
  TissueStats s;
  s.total = data.size();
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  s.range_min = *lo;
  s.range_max = *hi;
  const double range = s.range_max - s.range_min;

  struct Acc {
    std::uint64_t count = 0;
    double sum = 0.0, min = 0.0, max = 0.0;
    std::vector<std::uint64_t> hist = std::vector<std::uint64_t>(kStatsBins, 0);
  };
  std::map<int, Acc> acc;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto &a = acc[static_cast<int>(lab[i])];
    const double x = data[i];
    if (a.count == 0) a.min = a.max = x;
    a.min = std::min(a.min, x);
    a.max = std::max(a.max, x);
    a.sum += x;
    ++a.count;
    const double t = range > 0.0 ? (x - s.range_min) / range : 0.0;
    ++a.hist[bin_of(t, kStatsBins)];
  }
  std::map<int, double> ss;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int c = static_cast<int>(lab[i]);
    const auto &a = acc[c];
    const double d = data[i] - a.sum / static_cast<double>(a.count);
    ss[c] += d * d;
  }
  for (auto &[label, a] : acc) {
    ClassStats c;
    c.label = label;
    c.count = a.count;
    c.fraction = static_cast<double>(a.count) / static_cast<double>(s.total);
    c.min = a.min;
    c.max = a.max;
    c.mean = a.sum / static_cast<double>(a.count);
    c.std = std::sqrt(ss[label] / static_cast<double>(a.count));
    c.histogram = std::move(a.hist);
    s.classes.push_back(std::move(c));
  }
  return s;
}

std::string to_table(const TissueStats &stats) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %12s %10s %12s %12s %12s %12s\n", "class", "count", "fraction", "min", "max",
                "mean", "std");
  os << line;
  for (const auto &c : stats.classes) {
    std::snprintf(line, sizeof line, "%-6d %12llu %10.6f %12.6g %12.6g %12.6g %12.6g\n", c.label,
                  static_cast<unsigned long long>(c.count), c.fraction, c.min, c.max, c.mean, c.std);
    os << line;
  }
  return os.str();
}

std::string to_json(const TissueStats &stats) {
  nlohmann::json doc;
  doc["total_voxels"] = stats.total;
  doc["intensity_range"] = {stats.range_min, stats.range_max};
  doc["histogram_bins"] = kStatsBins;
  auto &classes = doc["classes"] = nlohmann::json::array();
  for (const auto &c : stats.classes) {
    classes.push_back({{"class", c.label},
                       {"count", c.count},
                       {"fraction", c.fraction},
                       {"min", c.min},
                       {"max", c.max},
                       {"mean", c.mean},
                       {"std", c.std},
                       {"histogram", c.histogram}});
  }
  return doc.dump(2);
}

} // namespace brainseg::preprocess
