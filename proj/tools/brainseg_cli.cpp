// brainseg: preprocessing, training, prediction and evaluation front end.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "brainseg/error.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/parallel.hpp"
#include "brainseg/pipeline.hpp"
#include "brainseg/preprocess.hpp"
#include "brainseg/registration.hpp"
#include "brainseg/resample.hpp"

namespace {

using namespace brainseg;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

int exit_code_for(Errc code) {
  switch (code) {
  case Errc::ConfigError:
  case Errc::InvalidArgument:
  case Errc::UnknownId:
  case Errc::IdMismatch:
    return kValidation;
  default:
    return kRuntime;
  }
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

cli::RunConfig load(const Globals &g) {
  if (g.config.empty()) raise(Errc::ConfigError, "--config is required for this command");
  auto cfg = cli::load_run_config(g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.patches.seed = *g.seed;
    cfg.preprocess.registration.seed = *g.seed;
  }
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

fs::path out_dir(const Globals &g) { return g.out.empty() ? fs::path(".") : fs::path(g.out); }

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) raise(Errc::IoError, "cannot write " + path.string());
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Brain MRI tissue segmentation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  auto *pre = app.add_subcommand("preprocess", "Run the configured preprocessing pipeline");

  auto *train = app.add_subcommand("train", "Train the network on the training split");
  std::string init_override;
  train->add_option("--init", init_override, "Warm-start checkpoint (overrides the config)");
  int steps_override = -1;
  train->add_option("--steps", steps_override, "Training steps (overrides the config)");

  auto *predict = app.add_subcommand("predict", "Predict label maps");
  std::vector<std::string> predict_ids;
  std::string predict_ckpt;
  bool keep_probs = false;
  predict->add_option("--ids", predict_ids, "Volume ids (default: validation split)");
  predict->add_option("--checkpoint", predict_ckpt, "Checkpoint (default: the run's model)");
  predict->add_flag("--probabilities", keep_probs, "Also write per-class probability maps");

  auto *evaluate = app.add_subcommand("evaluate", "Dice report for a split");
  std::string split = "validation", pred_dir, truth_dir, space;
  evaluate->add_option("--split", split, "train, validation or test")->capture_default_str();
  evaluate->add_option("--pred", pred_dir, "Prediction directory");
  evaluate->add_option("--truth", truth_dir, "Ground-truth directory (<id>.nii.gz)");
  evaluate->add_option("--space", space, "native or template")->check(CLI::IsMember({"native", "template"}));

  auto *stats = app.add_subcommand("stats", "Per-tissue intensity statistics");
  std::string stats_image, stats_labels;
  stats->add_option("--image", stats_image, "Intensity volume")->required();
  stats->add_option("--labels", stats_labels, "Label volume")->required();

  auto *registration = app.add_subcommand("register", "Rigidly register a moving volume to a fixed one");
  std::string moving, fixed, transform_out, resampled_out;
  std::string metric = "mutual_information";
  registration->add_option("--moving", moving, "Moving volume")->required();
  registration->add_option("--fixed", fixed, "Fixed volume (template)")->required();
  registration->add_option("--transform", transform_out, "Output transform file")->required();
  registration->add_option("--resampled", resampled_out, "Optional moving volume resampled onto the fixed grid");
  registration->add_option("--metric", metric, "mutual_information or mean_squares")
      ->check(CLI::IsMember({"mutual_information", "mean_squares"}));

  auto *transform = app.add_subcommand("transform", "Apply or invert a saved transform");
  std::string t_input, t_file, t_grid, t_output, t_save_inverse;
  bool t_invert = false, t_nearest = false;
  transform->add_option("--input", t_input, "Volume to resample");
  transform->add_option("--transform", t_file, "Transform file")->required();
  transform->add_option("--grid", t_grid, "Volume whose grid receives the output");
  transform->add_option("--output", t_output, "Output volume");
  transform->add_flag("--invert", t_invert, "Use the inverse transform");
  transform->add_flag("--nearest", t_nearest, "Nearest-neighbour interpolation (labels)");
  transform->add_option("--save-inverse", t_save_inverse, "Write the inverse transform to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    set_num_threads(g.threads);
    if (pre->parsed()) {
      const auto cfg = load(g);
      const auto m = cli::cmd_preprocess(cfg);
      for (const auto &v : m.volumes)
        std::cout << v.id << ": " << (v.ok ? "ok" : "FAILED " + v.error) << '\n';
      std::cout << "manifest: " << cli::Layout{cfg.output_dir}.manifest("preprocess").string() << '\n';
      return m.ok() ? kOk : kRuntime;
    }
    if (train->parsed()) {
      auto cfg = load(g);
      if (!init_override.empty()) cfg.training.init_checkpoint = init_override;
      if (steps_override >= 0) cfg.training.steps = steps_override;
      const auto r = cli::cmd_train(cfg);
      if (!r.losses.empty()) std::printf("final loss %.6f after %zu steps\n", r.losses.back(), r.losses.size());
      std::cout << "checkpoint: " << r.checkpoint.string() << "\nloss trace: " << r.loss_trace.string() << '\n';
      return kOk;
    }
    if (predict->parsed()) {
      const auto cfg = load(g);
      cli::PredictOptions opts;
      opts.ids = predict_ids;
      if (!predict_ckpt.empty()) opts.checkpoint = predict_ckpt;
      opts.keep_probabilities = keep_probs;
      const auto m = cli::cmd_predict(cfg, opts);
      for (const auto &v : m.volumes)
        for (const auto &f : v.outputs) std::cout << v.id << ": " << f.path << '\n';
      return kOk;
    }
    if (evaluate->parsed()) {
      const auto cfg = load(g);
      cli::EvaluateOptions opts;
      opts.split = split;
      if (!pred_dir.empty()) opts.pred_dir = pred_dir;
      if (!truth_dir.empty()) opts.truth_dir = truth_dir;
      if (!space.empty()) opts.native_space = space == "native";
      const auto report = cli::cmd_evaluate(cfg, opts);
      std::cout << eval::to_table(report);
      return kOk;
    }
    if (stats->parsed()) {
      const auto image = volio::read_volume(stats_image);
      const auto labels = volio::read_volume(stats_labels, VolumeKind::Label);
      const auto s = preprocess::tissue_stats(image, labels);
      std::cout << preprocess::to_table(s);
      if (!g.out.empty()) {
        write_text(out_dir(g) / "tissue_stats.txt", preprocess::to_table(s));
        write_text(out_dir(g) / "tissue_stats.json", preprocess::to_json(s));
      }
      return kOk;
    }
    if (registration->parsed()) {
      reg::RegistrationConfig rc;
      if (!g.config.empty()) rc = load(g).preprocess.registration;
      if (g.seed) rc.seed = *g.seed;
      rc.metric = metric == "mean_squares" ? reg::Metric::MeanSquares : reg::Metric::MutualInformation;
      const auto mv = volio::read_volume(moving);
      const auto fx = volio::read_volume(fixed);
      const auto result = reg::register_rigid(mv, fx, rc);
      reg::save_transform(result.transform, transform_out);
      if (!resampled_out.empty())
        volio::write_volume(reg::resample(mv, result.transform, fx.grid(), reg::Interpolation::Trilinear),
                            resampled_out);
      const auto &t = result.transform;
      std::printf("euler_zyx_rad %.6f %.6f %.6f\ntranslation_mm %.4f %.4f %.4f\nmetric %.6f (identity %.6f)\n",
                  t.euler_zyx[0], t.euler_zyx[1], t.euler_zyx[2], t.translation[0], t.translation[1],
                  t.translation[2], result.metric, result.identity_metric);
      return kOk;
    }
    if (transform->parsed()) {
      auto t = reg::load_transform(t_file);
      if (t_invert) t = reg::invert(t);
      if (!t_save_inverse.empty()) reg::save_transform(reg::invert(t), t_save_inverse);
      if (!t_input.empty()) {
        if (t_grid.empty() || t_output.empty())
          raise(Errc::InvalidArgument, "--input needs --grid and --output");
        const auto in = volio::read_volume(t_input, t_nearest ? std::optional(VolumeKind::Label) : std::nullopt);
        const auto grid = volio::read_volume(t_grid).grid();
        volio::write_volume(
            reg::resample(in, t, grid, t_nearest ? reg::Interpolation::NearestNeighbor : reg::Interpolation::Trilinear),
            t_output);
      }
      return kOk;
    }
  } catch (const Error &e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kValidation;
}
