#include "testkit.hpp"

#include <cmath>

#include "brainseg/registration.hpp"

namespace testkit {

using namespace brainseg;

double tissue_intensity(int label) {
  switch (label) {
  case 1: return 0.25;
  case 2: return 0.55;
  case 3: return 0.85;
  default: return 0.0;
  }
}

Phantom make_phantom(const Index3 &dims, const Vec3 &spacing, double noise, std::uint64_t seed, double smooth) {
  const Grid grid = Grid::axis_aligned(dims, spacing);
  std::vector<double> labels(grid.voxel_count()), image(grid.voxel_count());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Normalized coordinates in [-1, 1] along each axis. The GM and WM shells
  // are folded by an angular ripple so that rotations change the image.
  const std::array<Vec3, 3> radii{{{0.85, 0.75, 0.65}, {0.72, 0.62, 0.52}, {0.52, 0.40, 0.34}}};
  const std::array<double, 3> ripple{0.0, 0.10, 0.14};
  const std::array<Vec3, 3> pockets{{{0.22, -0.12, 0.08}, {-0.35, 0.25, -0.05}, {0.05, 0.42, 0.30}}};
  const std::array<double, 3> pocket_r{0.14, 0.10, 0.09};
  std::size_t n = 0;
  for (std::size_t i = 0; i < dims[0]; ++i)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t k = 0; k < dims[2]; ++k, ++n) {
        const Vec3 u{(i + 0.5) / dims[0] * 2 - 1, (j + 0.5) / dims[1] * 2 - 1, (k + 0.5) / dims[2] * 2 - 1};
        const double phi = std::atan2(u[1], u[0]);
        const double theta = std::atan2(std::hypot(u[0], u[1]), u[2]);
        const double fold = std::sin(4 * phi + 1.0) * std::sin(3 * theta + 0.5);
        int label = 0;
        for (int s = 0; s < 3; ++s) {
          double r = 0;
          for (int a = 0; a < 3; ++a) r += (u[a] / radii[s][a]) * (u[a] / radii[s][a]);
          if (std::sqrt(r) <= 1.0 + ripple[s] * fold) label = s + 1;
        }
        for (int p = 0; p < 3; ++p) {
          double d = 0;
          for (int a = 0; a < 3; ++a) d += (u[a] - pockets[p][a]) * (u[a] - pockets[p][a]);
          if (label > 0 && std::sqrt(d) <= pocket_r[p]) label = 1;
        }
        labels[n] = label;
        image[n] = tissue_intensity(label);
      }
  Volume img(grid, std::move(image));
  if (smooth > 0) img = reg::smooth_gaussian(img, smooth * spacing[0]);
  if (noise > 0) {
    std::vector<double> noisy(img.data().begin(), img.data().end());
    for (auto &x : noisy) x += noise * gauss(rng);
    img = img.with_data(std::move(noisy));
  }
  return {std::move(img), Volume(grid, std::move(labels), VolumeKind::Label)};
}

Volume random_volume(std::mt19937_64 &rng, const Index3 &max_dims) {
  Index3 dims;
  Vec3 spacing;
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::uniform_int_distribution<std::size_t>(1, max_dims[a])(rng);
    spacing[a] = std::uniform_real_distribution<double>(0.3, 3.0)(rng);
  }
  Grid grid = Grid::axis_aligned(dims, spacing);
  std::uniform_real_distribution<double> offset(-100.0, 100.0);
  for (int a = 0; a < 3; ++a) grid.affine[a][3] = offset(rng);
  std::uniform_real_distribution<float> value(-1000.0f, 1000.0f);
  std::vector<double> data(grid.voxel_count());
  for (auto &x : data) x = value(rng); // float-representable by construction
  return Volume(grid, std::move(data));
}

Volume random_labels(std::mt19937_64 &rng, const Index3 &dims, int n_classes) {
  std::uniform_int_distribution<int> pick(0, n_classes - 1);
  std::vector<double> data(dims[0] * dims[1] * dims[2]);
  for (auto &x : data) x = pick(rng);
  return Volume(Grid::axis_aligned(dims, {1, 1, 1}), std::move(data), VolumeKind::Label);
}

std::filesystem::path scratch_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("brainseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::filesystem::path data_dir() { return BRAINSEG_TEST_DATA; }

std::filesystem::path config_dir() { return BRAINSEG_CONFIG_DIR; }

} // namespace testkit

#include "brainseg/dice.hpp"
#include "brainseg/neuronet.hpp"
#include "brainseg/train.hpp"

namespace testkit {

nn::NetConfig tiny_config() {
  nn::NetConfig cfg;
  cfg.n_scales = 2;
  cfg.units_per_scale = 1;
  cfg.base_filters = 4;
  cfg.bn_momentum = 0.9;
  return cfg;
}

namespace {

class FixedBatch : public nn::BatchSource {
public:
  explicit FixedBatch(nn::Batch b) : batch_(std::move(b)) {}
  nn::Batch next() override { return batch_; }

private:
  nn::Batch batch_;
};

} // namespace

OverfitRun run_overfit(int steps, std::uint64_t seed, const nn::AdamHyper &adam) {
  const auto ph = make_phantom({32, 32, 32}, {1, 1, 1}, 0.02, seed);
  const auto cfg = tiny_config();
  auto params = nn::init_params(cfg, seed);
  FixedBatch data({nn::to_tensor(ph.image), nn::to_label_map(ph.labels)});
  nn::AdamState state;
  nn::TrainOptions opts;
  opts.adam = adam;
  OverfitRun run;
  run.losses = nn::train(params, state, cfg, data, steps, opts);
  run.prediction = nn::predict_volume(params, cfg, ph.image).labels;
  for (int c = 0; c < 4; ++c) run.dice[c] = eval::dice(run.prediction, ph.labels, c);
  return run;
}

} // namespace testkit

#include "brainseg/nifti.hpp"
#include "brainseg/resample.hpp"

namespace testkit {

void write_subject(const std::filesystem::path &root, const std::string &id, const Index3 &dims,
                   const Vec3 &spacing, double gain, double offset, std::uint64_t seed, double rotation_deg,
                   const Vec3 &shift_mm) {
  const auto ph = make_phantom(dims, spacing, 0.02, seed, 0.5);
  std::vector<double> img(ph.image.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = ph.labels[i] > 0 ? std::max(0.0, gain * ph.image[i] + offset) : 0.0;
  Volume image = ph.image.with_data(std::move(img));
  Volume labels = ph.labels;
  if (rotation_deg != 0.0 || shift_mm != Vec3{0, 0, 0}) {
    const reg::RigidTransform pose{{rotation_deg * M_PI / 180.0, 0, 0}, shift_mm, image.grid().world_center()};
    image = reg::resample(image, pose, image.grid(), reg::Interpolation::Trilinear);
    labels = reg::resample(labels, pose, labels.grid(), reg::Interpolation::NearestNeighbor);
  }
  const auto dir = root / id;
  std::filesystem::create_directories(dir);
  volio::write_volume(image, dir / (id + "_ana_strip.nii.gz"));
  volio::write_volume(labels, dir / (id + "_segTRI_ana.nii.gz"));
}

nn::NetParams<float> threshold_network(const nn::NetConfig &cfg, const std::array<double, 3> &thresholds,
                                       double sharpness) {
  auto params = nn::init_params(cfg, 0);
  for (const auto &spec : nn::param_specs(cfg))
    if (spec.role == nn::ParamRole::Kernel || spec.role == nn::ParamRole::Bias) params.at(spec.name).fill(0.0f);
  const std::size_t k = static_cast<std::size_t>(cfg.kernel_size), c = k / 2;
  const std::size_t centre = (c * k + c) * k + c;
  auto pass_channel0 = [&](const std::string &kernel) {
    auto &t = params.at(kernel);
    const std::size_t cin = t.dim(3), cout = t.dim(4);
    t[centre * cin * cout] = 1.0f; // in 0 -> out 0
  };
  pass_channel0(nn::names::init_conv() + "/kernel");
  pass_channel0(nn::names::down_conv(0) + "/kernel");
  // Upper envelope of the lines s * (c x - sum_{j<c} t_j) switches class at each threshold.
  auto &score = params.at(nn::names::score_conv(0) + "/kernel");
  auto &bias = params.at(nn::names::score_conv(0) + "/bias");
  double intercept = 0.0;
  for (int cls = 0; cls < cfg.n_classes && cls < 4; ++cls) {
    if (cls > 0) intercept -= thresholds[cls - 1];
    score[cls] = static_cast<float>(sharpness * cls);
    bias[cls] = static_cast<float>(sharpness * intercept);
  }
  return params;
}

} // namespace testkit
