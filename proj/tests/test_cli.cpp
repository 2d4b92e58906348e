#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "brainseg/checkpoint.hpp"
#include "brainseg/dice.hpp"
#include "brainseg/digest.hpp"
#include "brainseg/error.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/pipeline.hpp"
#include "brainseg/preprocess.hpp"
#include "brainseg/registration.hpp"
#include "testkit.hpp"

using namespace brainseg;
using namespace brainseg::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Errc code_of(const std::function<void()> &f, std::string *message = nullptr) {
  try {
    f();
  } catch (const Error &e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("no error raised");
  return Errc::IoError;
}

json read_json(const fs::path &p) {
  std::ifstream in(p);
  return json::parse(in);
}

json shipped(const std::string &name) { return read_json(testkit::config_dir() / name); }

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the command-line binary; returns its exit status.
int run_cli(const std::string &args, const fs::path &log) {
  const std::string cmd = std::string("\"") + BRAINSEG_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path &dir, const json &j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

// Small P1/P2 run over synthetic subjects with the tiny network.
json small_run(const fs::path &data, const fs::path &out, const std::string &pipeline) {
  json j = shipped("smoke.json");
  j["name"] = "small";
  j["dataset_root"] = data.string();
  j["output_dir"] = out.string();
  j["pipeline"] = pipeline;
  j["splits"] = {{"train", {"S01", "S02"}}, {"validation", {"S03", "S04"}}, {"test", json::array()}};
  j["reference"] = "S01";
  j["template"] = (data / "template.nii.gz").string();
  j["patches"]["size"] = {16, 16, 16};
  return j;
}

void write_subjects(const fs::path &data, const Index3 &dims, const Vec3 &spacing) {
  const double gains[] = {1.0, 0.8, 1.3, 1.1};
  const double offsets[] = {0.0, 0.05, -0.02, 0.1};
  for (int s = 0; s < 4; ++s) {
    char id[8];
    std::snprintf(id, sizeof id, "S%02d", s + 1);
    testkit::write_subject(data, id, dims, spacing, gains[s], offsets[s], 100 + s);
  }
  const auto tpl = testkit::make_phantom({40, 40, 40}, {1, 1, 1}, 0.0, 1, 0.5);
  volio::write_volume(tpl.image, data / "template.nii.gz");
}

// Midpoints between consecutive class means of a volume.
std::array<double, 3> class_thresholds(const Volume &image, const Volume &labels) {
  const auto stats = preprocess::tissue_stats(image, labels);
  std::array<double, 4> mean{};
  for (const auto &c : stats.classes) mean[c.label] = c.mean;
  return {(mean[0] + mean[1]) / 2, (mean[1] + mean[2]) / 2, (mean[2] + mean[3]) / 2};
}

void check_manifest(const fs::path &path) {
  REQUIRE(fs::exists(path));
  const auto m = read_json(path);
  std::size_t n = 0;
  auto verify = [&](const json &files) {
    for (const auto &f : files) {
      const fs::path p = f.at("path").get<std::string>();
      REQUIRE_MESSAGE(fs::exists(p), p.string());
      CHECK_MESSAGE(sha256_file(p) == f.at("sha256").get<std::string>(), p.string());
      ++n;
    }
  };
  for (const auto &v : m.at("volumes")) {
    verify(v.at("sources"));
    verify(v.at("outputs"));
  }
  verify(m.at("files"));
  CHECK(n > 0);
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("shipped model configurations") {
  struct Row {
    const char *file;
    int steps;
    std::size_t patch;
    int samples;
    bool pretrained;
    Pipeline pipeline;
  };
  const Row rows[] = {{"model_1.1.json", 1000, 128, 200, true, Pipeline::P1},
                      {"model_1.2.json", 5000, 128, 400, true, Pipeline::P1},
                      {"model_2.1.json", 4000, 32, 200, false, Pipeline::P2},
                      {"model_2.2.json", 4000, 64, 200, false, Pipeline::P2},
                      {"model_2.3.json", 4000, 128, 50, false, Pipeline::P2},
                      {"model_2.4.json", 2000, 128, 50, true, Pipeline::P2},
                      {"model_2.5.json", 4000, 128, 50, true, Pipeline::P2}};
  for (const auto &row : rows) {
    CAPTURE(row.file);
    const auto cfg = load_run_config(testkit::config_dir() / row.file);
    CHECK(cfg.training.steps == row.steps);
    CHECK(cfg.patches.size == Index3{row.patch, row.patch, row.patch});
    CHECK(cfg.patches.count == row.samples);
    CHECK(cfg.training.init_checkpoint.has_value() == row.pretrained);
    CHECK(cfg.pipeline == row.pipeline);
    CHECK(cfg.network.filters(3) == 128);
    CHECK(cfg.reference == "IBSR_07");
  }
  // Within a pipeline family the files differ only in the four varied fields.
  auto normalized = [](json j) {
    for (const char *k : {"name", "output_dir"}) j.erase(k);
    j["training"].erase("steps");
    j["training"].erase("init");
    j["patches"].erase("size");
    j["patches"].erase("count");
    return j;
  };
  CHECK(normalized(shipped("model_1.1.json")) == normalized(shipped("model_1.2.json")));
  for (const char *f : {"model_2.2.json", "model_2.3.json", "model_2.4.json", "model_2.5.json"})
    CHECK(normalized(shipped("model_2.1.json")) == normalized(shipped(f)));
}

TEST_CASE("default IBSR18 splits") {
  const auto s = default_splits();
  CHECK(s.train == std::vector<std::string>{"IBSR_01", "IBSR_03", "IBSR_04", "IBSR_06", "IBSR_07", "IBSR_08",
                                            "IBSR_09", "IBSR_16", "IBSR_18"});
  CHECK(s.validation == std::vector<std::string>{"IBSR_11", "IBSR_12", "IBSR_13", "IBSR_14", "IBSR_17"});
  CHECK(s.test == std::vector<std::string>{"IBSR_02", "IBSR_10", "IBSR_15"});
  const auto all = s.all();
  CHECK(std::set<std::string>(all.begin(), all.end()).size() == all.size());
  CHECK(std::find(s.train.begin(), s.train.end(), kDefaultReference) != s.train.end());
}

TEST_CASE("configuration errors are caught before any work") {
  json j = shipped("model_2.5.json");
  const auto reparse = [](const json &doc) { return code_of([&] { parse_run_config(doc.dump()); }); };

  json overlap = j;
  overlap["splits"]["test"].push_back("IBSR_01");
  CHECK(reparse(overlap) == Errc::ConfigError);

  json no_ref = j;
  no_ref["reference"] = "IBSR_99";
  CHECK(reparse(no_ref) == Errc::ConfigError);

  json no_template = j;
  no_template["template"] = "";
  CHECK(reparse(no_template) == Errc::ConfigError);

  json unknown = j;
  unknown["training"]["stpes"] = 10;
  std::string msg;
  CHECK(code_of([&] { parse_run_config(unknown.dump()); }, &msg) == Errc::ConfigError);
  CHECK(msg.find("stpes") != std::string::npos);

  json odd_patch = j;
  odd_patch["patches"]["size"] = {100, 128, 128};
  CHECK(reparse(odd_patch) == Errc::ConfigError);

  CHECK(code_of([] { parse_run_config("{ not json"); }) == Errc::ConfigError);

  // Inputs are checked up front: nothing is written for a missing dataset.
  const auto dir = testkit::scratch_dir("cli_missing");
  j["dataset_root"] = (dir / "nowhere").string();
  j["output_dir"] = (dir / "out").string();
  const auto cfg = parse_run_config(j.dump());
  CHECK(code_of([&] { cmd_preprocess(cfg); }, &msg) == Errc::ConfigError);
  CHECK(msg.find("IBSR_07_ana_strip.nii.gz") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("P1 preprocessing standardizes every volume") {
  const auto dir = testkit::scratch_dir("cli_p1");
  const auto data = dir / "data";
  write_subjects(data, {24, 20, 28}, {1.0, 1.2, 0.9});
  json j = small_run(data, dir / "run", "P1");
  j["splits"] = {{"train", {"S01", "S02"}}, {"validation", {"S03"}}, {"test", json::array()}};
  const auto cfg = parse_run_config(j.dump());
  const auto m = cmd_preprocess(cfg);
  CHECK(m.ok());
  REQUIRE(m.volumes.size() == 3);
  const Layout out{cfg.output_dir};
  for (const auto &id : {"S01", "S02", "S03"}) {
    const Volume v = volio::read_volume(out.preprocessed_image(id));
    const Volume native = volio::read_volume(cfg.image_path(id));
    CHECK(v.dims() == native.dims());
    double mean = 0, sq = 0;
    for (double x : v.data()) mean += x;
    mean /= double(v.size());
    for (double x : v.data()) sq += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(sq / double(v.size())) - 1.0) < 1e-6);
    CHECK(fs::exists(out.preprocessed_label(id)));
  }
  check_manifest(out.manifest("preprocess"));
}

TEST_CASE("P2 preprocessing against an identity-posed template") {
  const auto dir = testkit::scratch_dir("cli_p2");
  const auto data = dir / "data";
  write_subjects(data, {40, 40, 40}, {1, 1, 1});
  const auto cfg = parse_run_config(small_run(data, dir / "run", "P2").dump());
  const auto m = cmd_preprocess(cfg);
  REQUIRE(m.ok());
  CHECK(m.volumes.front().id == "S01"); // reference first
  const Layout out{cfg.output_dir};
  const auto percentiles = preprocess::default_percentiles();
  const Volume ref = volio::read_volume(out.preprocessed_image("S01"));
  const auto ref_lm = preprocess::compute_landmarks(ref, percentiles, true);
  for (const auto &id : {"S01", "S02", "S03", "S04"}) {
    CAPTURE(id);
    const auto t = reg::load_transform(out.transform(id));
    CHECK(reg::rotation_angle_between(t, reg::RigidTransform::identity(t.center)) < 1.0 * M_PI / 180);
    CHECK(std::hypot(t.translation[0], t.translation[1], t.translation[2]) < 1.0);
    const Volume v = volio::read_volume(out.preprocessed_image(id));
    CHECK(v.dims() == Index3{40, 40, 40});
    if (std::string(id) == "S01") continue;
    const auto lm = preprocess::compute_landmarks(v, percentiles, true);
    int off = 0;
    for (std::size_t i = 1; i + 1 < lm.size(); ++i) {
      const double gap = std::max(ref_lm[i + 1] - ref_lm[i], ref_lm[i] - ref_lm[i - 1]);
      off += std::abs(lm[i] - ref_lm[i]) > gap;
    }
    CHECK(off == 0);
  }
  check_manifest(out.manifest("preprocess"));

  // Prediction needs the saved transform to return to native space.
  const auto params = testkit::threshold_network(cfg.network, {0.1, 0.4, 0.7});
  nn::save_checkpoint(params, nullptr, dir / "threshold.nnl");
  fs::remove(out.transform("S04"));
  std::string msg;
  CHECK(code_of([&] { cmd_predict(cfg, {{"S04"}, dir / "threshold.nnl", false}); }, &msg) == Errc::MissingTransform);
  CHECK(msg.find("S04") != std::string::npos);
}

TEST_CASE("native-space prediction agrees with template-space prediction") {
  const auto dir = testkit::scratch_dir("cli_native");
  const auto data = dir / "data";
  // Anisotropic, slightly rotated subjects so that the pull-back is a real resampling.
  testkit::write_subject(data, "S01", {40, 32, 40}, {1.0, 1.25, 1.0}, 1.0, 0.0, 7, 3.0, {1.0, 0.0, 0.0});
  testkit::write_subject(data, "S02", {40, 32, 40}, {1.0, 1.25, 1.0}, 0.9, 0.05, 8, -2.0, {0.0, 1.0, 0.0});
  const auto tpl = testkit::make_phantom({40, 40, 40}, {1, 1, 1}, 0.0, 1, 0.5);
  volio::write_volume(tpl.image, data / "template.nii.gz");
  json j = small_run(data, dir / "run", "P2");
  j["splits"] = {{"train", {"S01"}}, {"validation", {"S02"}}, {"test", json::array()}};
  const auto cfg = parse_run_config(j.dump());
  REQUIRE(cmd_preprocess(cfg).ok());
  const Layout out{cfg.output_dir};

  const auto thresholds = class_thresholds(volio::read_volume(out.preprocessed_image("S01")),
                                           volio::read_volume(out.preprocessed_label("S01"), VolumeKind::Label));
  nn::save_checkpoint(testkit::threshold_network(cfg.network, thresholds), nullptr, dir / "threshold.nnl");
  cmd_predict(cfg, {{"S01", "S02"}, dir / "threshold.nnl", false});

  for (const auto &id : {"S01", "S02"}) {
    CAPTURE(id);
    const Volume native_truth = volio::read_volume(cfg.label_path(id), VolumeKind::Label);
    const Volume native_pred = volio::read_volume(out.prediction(id, true), VolumeKind::Label);
    const Volume tpl_truth = volio::read_volume(out.preprocessed_label(id), VolumeKind::Label);
    const Volume tpl_pred = volio::read_volume(out.prediction(id, false), VolumeKind::Label);
    CHECK(native_pred.dims() == native_truth.dims());
    CHECK(tpl_pred.dims() == Index3{40, 40, 40});
    for (int c = 1; c < 4; ++c) {
      const double dn = eval::dice(native_pred, native_truth, c), dt = eval::dice(tpl_pred, tpl_truth, c);
      MESSAGE(id, " class ", c, " native ", dn, " template ", dt);
      CHECK(dt > 0.7);
      CHECK(std::abs(dn - dt) <= 0.02);
    }
  }
}

TEST_CASE("train, predict and evaluate on P1") {
  const auto dir = testkit::scratch_dir("cli_train");
  const auto data = dir / "data";
  write_subjects(data, {24, 24, 24}, {1, 1, 1});
  json j = small_run(data, dir / "run", "P1");
  const auto cfg = parse_run_config(j.dump());
  REQUIRE(cmd_preprocess(cfg).ok());
  const Layout out{cfg.output_dir};

  // Zero steps: the checkpoint is the initialization.
  const auto r = cmd_train(cfg);
  CHECK(r.losses.empty());
  CHECK(nn::load_checkpoint(r.checkpoint).params.tensors == nn::init_params(cfg.network, cfg.seed).tensors);
  CHECK(slurp(r.loss_trace) == "step,loss\n");
  check_manifest(out.manifest("train"));

  std::string msg;
  CHECK(code_of([&] { cmd_predict(cfg, {{"S09"}, std::nullopt, false}); }, &msg) == Errc::UnknownId);
  CHECK(msg.find("S09") != std::string::npos);

  // A checkpoint for another architecture is rejected.
  nn::NetConfig other = cfg.network;
  other.base_filters = 8;
  nn::save_checkpoint(nn::init_params(other, 1), nullptr, dir / "other.nnl");
  CHECK(code_of([&] { cmd_predict(cfg, {{"S03"}, dir / "other.nnl", false}); }) == Errc::ShapeMismatch);

  const auto m = cmd_predict(cfg, {});
  REQUIRE(m.volumes.size() == 2);
  for (const auto &id : {"S03", "S04"}) {
    const Volume p = volio::read_volume(out.prediction(id, true), VolumeKind::Label);
    CHECK(p.dims() == Index3{24, 24, 24});
  }
  check_manifest(out.manifest("predict"));

  const auto report = cmd_evaluate(cfg, {});
  CHECK(report.ids() == std::vector<std::string>{"S03", "S04"});
  CHECK(report.classes == std::vector<int>{1, 2, 3});
  const auto table = slurp(out.report("validation", "txt"));
  for (const char *col : {"CSF", "GM", "WM", "mean±std"}) CHECK(table.find(col) != std::string::npos);
  CHECK(read_json(out.report("validation", "json")).at("ids") == json({"S03", "S04"}));
}

TEST_CASE("evaluation pairs files by id") {
  const auto dir = testkit::scratch_dir("cli_eval");
  const auto data = dir / "data";
  write_subjects(data, {12, 12, 12}, {1, 1, 1});
  const auto cfg = parse_run_config(small_run(data, dir / "run", "P1").dump());
  const auto truth_dir = dir / "truth", pred_dir = dir / "pred";
  fs::create_directories(truth_dir);
  fs::create_directories(pred_dir);
  for (const auto &id : {"S03", "S04"}) {
    fs::copy_file(cfg.label_path(id), truth_dir / (std::string(id) + ".nii.gz"));
    fs::copy_file(cfg.label_path(id), pred_dir / (std::string(id) + ".nii.gz"));
  }
  const auto report = cmd_evaluate(cfg, {"validation", pred_dir, truth_dir, std::nullopt});
  for (const auto &v : report.volumes)
    for (const auto &[c, d] : v.dsc) CHECK(d == 1.0);

  // A file under another id never pairs by position.
  fs::rename(pred_dir / "S04.nii.gz", pred_dir / "S05.nii.gz");
  std::string msg;
  CHECK(code_of([&] { cmd_evaluate(cfg, {"validation", pred_dir, truth_dir, std::nullopt}); }, &msg) ==
        Errc::IdMismatch);
  CHECK(msg.find("S04") != std::string::npos);
}

TEST_CASE("overfit configuration reaches the Dice target" * doctest::timeout(900)) {
  const auto dir = testkit::scratch_dir("cli_overfit");
  const auto data = dir / "data";
  // The same unblurred phantom as the library-level overfit run.
  const auto ph = testkit::make_phantom({32, 32, 32}, {1, 1, 1}, 0.02, 1);
  fs::create_directories(data / "PH_01");
  volio::write_volume(ph.image, data / "PH_01" / "PH_01_ana_strip.nii.gz");
  volio::write_volume(ph.labels, data / "PH_01" / "PH_01_segTRI_ana.nii.gz");
  json j = shipped("overfit.json");
  j["dataset_root"] = data.string();
  j["output_dir"] = (dir / "run").string();
  const auto cfg = parse_run_config(j.dump());
  REQUIRE(cmd_preprocess(cfg).ok());
  const auto r = cmd_train(cfg);
  CHECK(r.losses.size() == 300);
  cmd_predict(cfg, {{"PH_01"}, std::nullopt, false});
  const auto report = cmd_evaluate(cfg, {"train", std::nullopt, std::nullopt, std::nullopt});
  for (int c = 1; c < 4; ++c) {
    MESSAGE(eval::class_name(c), " ", report.volumes.at(0).dsc.at(c));
    CHECK(report.volumes.at(0).dsc.at(c) >= 0.95);
  }
}

TEST_CASE("model 2.3 configuration loads and writes its initial checkpoint") {
  const auto dir = testkit::scratch_dir("cli_model23");
  json j = shipped("model_2.3.json");
  j["output_dir"] = (dir / "run").string();
  j["splits"] = {{"train", {"IBSR_07", "IBSR_01"}}, {"validation", json::array()}, {"test", json::array()}};
  j["training"]["steps"] = 0;
  const auto cfg = parse_run_config(j.dump());
  CHECK(cfg.patches.size == Index3{128, 128, 128});
  CHECK(cfg.patches.count == 50);
  // Training starts from preprocessed volumes; large enough for 128^3 patches.
  const Layout out{cfg.output_dir};
  fs::create_directories(out.preprocessed_image("x").parent_path());
  fs::create_directories(out.preprocessed_label("x").parent_path());
  for (const auto &id : {"IBSR_07", "IBSR_01"}) {
    const auto ph = testkit::make_phantom({136, 128, 130});
    volio::write_volume(ph.image, out.preprocessed_image(id));
    volio::write_volume(ph.labels, out.preprocessed_label(id));
  }
  const auto r = cmd_train(cfg);
  const auto ckpt = nn::load_checkpoint(r.checkpoint);
  CHECK_NOTHROW(nn::check_params(ckpt.params, cfg.network));
}

TEST_CASE("command-line binary") {
  const auto dir = testkit::scratch_dir("cli_binary");
  const auto data = dir / "data";
  write_subjects(data, {16, 16, 16}, {1, 1, 1});
  const auto log = dir / "log.txt";
  const auto config = write_config(dir, small_run(data, dir / "run", "P1"));
  const std::string c = "--config \"" + config.string() + "\"";

  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("frobnicate", log) == 1);
  CHECK(run_cli("--config /nonexistent.json preprocess", log) == 1);
  CHECK(run_cli(c + " preprocess", log) == 0);
  CHECK(run_cli(c + " train", log) == 0);
  CHECK(run_cli(c + " predict --ids S77", log) == 1);
  CHECK(slurp(log).find("S77") != std::string::npos);
  CHECK(run_cli(c + " predict", log) == 0);
  CHECK(run_cli(c + " evaluate --split validation", log) == 0);
  const auto table = slurp(log);
  CHECK(table.find("CSF") != std::string::npos);
  CHECK(table.find("S03") != std::string::npos);

  // Same config and seed: byte-identical predictions and reports.
  const auto pred = slurp(dir / "run" / "predictions" / "S03.nii.gz");
  const auto report = slurp(dir / "run" / "reports" / "dice_validation.json");
  CHECK(run_cli(c + " --out \"" + (dir / "again").string() + "\" preprocess", log) == 0);
  CHECK(run_cli(c + " --out \"" + (dir / "again").string() + "\" train", log) == 0);
  CHECK(run_cli(c + " --out \"" + (dir / "again").string() + "\" predict", log) == 0);
  CHECK(run_cli(c + " --out \"" + (dir / "again").string() + "\" evaluate", log) == 0);
  CHECK(slurp(dir / "again" / "predictions" / "S03.nii.gz") == pred);
  CHECK(slurp(dir / "again" / "reports" / "dice_validation.json") == report);

  // A corrupt volume fails on its own; the others are still written.
  std::ofstream(data / "S02" / "S02_ana_strip.nii.gz") << "garbage";
  CHECK(run_cli(c + " --out \"" + (dir / "bad").string() + "\" preprocess", log) == 2);
  const auto m = read_json(dir / "bad" / "preprocess_manifest.json");
  CHECK(m.at("ok") == false);
  for (const auto &v : m.at("volumes")) CHECK((v.at("status") == "failed") == (v.at("id") == "S02"));
  CHECK(fs::exists(dir / "bad" / "preprocessed" / "images" / "S03.nii.gz"));

  // stats, register and transform.
  const auto img = (data / "S01" / "S01_ana_strip.nii.gz").string();
  const auto lab = (data / "S01" / "S01_segTRI_ana.nii.gz").string();
  CHECK(run_cli("--out \"" + (dir / "stats").string() + "\" stats --image \"" + img + "\" --labels \"" + lab + "\"",
                log) == 0);
  CHECK(read_json(dir / "stats" / "tissue_stats.json").is_object());
  const auto tfm = (dir / "self.tfm").string();
  CHECK(run_cli("register --moving \"" + img + "\" --fixed \"" + img + "\" --transform \"" + tfm + "\"", log) == 0);
  const auto t = reg::load_transform(tfm);
  CHECK(reg::rotation_angle_between(t, reg::RigidTransform::identity(t.center)) < 0.5 * M_PI / 180);
  const auto back = (dir / "back.nii.gz").string();
  CHECK(run_cli("transform --transform \"" + tfm + "\" --invert --nearest --input \"" + lab + "\" --grid \"" + img +
                    "\" --output \"" + back + "\"",
                log) == 0);
  CHECK(volio::read_volume(back).dims() == Index3{16, 16, 16});
  CHECK(run_cli("transform --transform \"" + tfm + "\" --input \"" + lab + "\"", log) == 1);
}

} // TEST_SUITE
