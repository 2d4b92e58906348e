#include "brainseg/pipeline.hpp"

#include <fstream>
#include <memory>
#include <set>

#include "json.hpp"

#include "brainseg/checkpoint.hpp"
#include "brainseg/digest.hpp"
#include "brainseg/error.hpp"
#include "brainseg/neuronet.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/resample.hpp"
#include "brainseg/train.hpp"

namespace brainseg::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::filesystem::path Layout::preprocessed_image(const std::string &id) const {
  return root / "preprocessed" / "images" / (id + ".nii.gz");
}
std::filesystem::path Layout::preprocessed_label(const std::string &id) const {
  return root / "preprocessed" / "labels" / (id + ".nii.gz");
}
std::filesystem::path Layout::transform(const std::string &id) const { return root / "transforms" / (id + ".tfm"); }
std::filesystem::path Layout::checkpoint() const { return root / "model" / "model.nnl"; }
std::filesystem::path Layout::loss_trace() const { return root / "model" / "loss.csv"; }
std::filesystem::path Layout::predictions_dir(bool native) const {
  return root / (native ? "predictions" : "predictions_template");
}
std::filesystem::path Layout::prediction(const std::string &id, bool native) const {
  return predictions_dir(native) / (id + ".nii.gz");
}
std::filesystem::path Layout::report(const std::string &split, const std::string &ext) const {
  return root / "reports" / ("dice_" + split + "." + ext);
}
std::filesystem::path Layout::manifest(const std::string &command) const {
  return root / (command + "_manifest.json");
}

bool Manifest::ok() const {
  for (const auto &v : volumes)
    if (!v.ok) return false;
  return true;
}

std::vector<std::string> Manifest::failed_ids() const {
  std::vector<std::string> out;
  for (const auto &v : volumes)
    if (!v.ok) out.push_back(v.id);
  return out;
}

FileRecord file_record(const std::filesystem::path &path) { return {path.string(), sha256_file(path)}; }

namespace {

json files_json(const std::vector<FileRecord> &files) {
  json a = json::array();
  for (const auto &f : files) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
  return a;
}

void ensure_parent(const fs::path &p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string params(const json &j) { return j.dump(); }

const char *pipeline_name(Pipeline p) { return p == Pipeline::P1 ? "P1" : "P2"; }

// Writes through volio and records the digest.
FileRecord write_output(const Volume &v, const fs::path &path) {
  ensure_parent(path);
  volio::write_volume(v, path);
  return file_record(path);
}

json registration_json(const reg::RegistrationConfig &r) {
  return {{"metric", r.metric == reg::Metric::MutualInformation ? "mutual_information" : "mean_squares"},
          {"mi_bins", r.mi_bins},
          {"shrink_factors", r.shrink_factors},
          {"smoothing_sigmas_mm", r.smoothing_sigmas_mm},
          {"step_size", r.step_size},
          {"sampling_fraction", r.sampling_fraction},
          {"seed", r.seed}};
}

json ahe_json(const preprocess::AheParams &a) {
  return {{"grid", a.grid}, {"clip_limit", a.clip_limit}, {"bins", a.bins}, {"foreground_only", a.foreground_only}};
}

void fail_volume(VolumeRecord &rec, const std::exception &e) {
  rec.ok = false;
  rec.error = e.what();
  if (const auto *be = dynamic_cast<const Error *>(&e)) rec.error = std::string(to_string(be->code())) + ": " + e.what();
}

} // namespace

std::string to_json(const Manifest &m) {
  json j;
  j["command"] = m.command;
  j["pipeline"] = m.pipeline;
  j["ok"] = m.ok();
  j["volumes"] = json::array();
  for (const auto &v : m.volumes) {
    json r;
    r["id"] = v.id;
    r["status"] = v.ok ? "ok" : "failed";
    if (!v.ok) r["error"] = v.error;
    r["sources"] = files_json(v.sources);
    json ops = json::array();
    for (const auto &op : v.operations) ops.push_back({{"op", op.name}, {"params", json::parse(op.params_json)}});
    r["operations"] = ops;
    if (!v.transform.empty()) r["transform"] = v.transform;
    r["outputs"] = files_json(v.outputs);
    j["volumes"].push_back(r);
  }
  j["files"] = files_json(m.files);
  return j.dump(2) + "\n";
}

void write_manifest(const Manifest &m, const std::filesystem::path &path) {
  ensure_parent(path);
  std::ofstream out(path);
  out << to_json(m);
  if (!out) raise(Errc::IoError, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------

Manifest cmd_preprocess(const RunConfig &cfg) {
  cfg.validate();
  const auto ids = cfg.splits.all();
  check_inputs(cfg, ids, false);
  const Layout out{cfg.output_dir};
  fs::create_directories(cfg.output_dir);

  Manifest m;
  m.command = "preprocess";
  m.pipeline = pipeline_name(cfg.pipeline);

  auto start = [&](const std::string &id) {
    VolumeRecord rec;
    rec.id = id;
    rec.sources.push_back(file_record(cfg.image_path(id)));
    if (fs::exists(cfg.label_path(id))) rec.sources.push_back(file_record(cfg.label_path(id)));
    return rec;
  };

  if (cfg.pipeline == Pipeline::P1) {
    for (const auto &id : ids) {
      VolumeRecord rec;
      rec.id = id;
      try {
        rec = start(id);
        const Volume image = volio::read_volume(cfg.image_path(id));
        rec.outputs.push_back(write_output(preprocess::standardize(image), out.preprocessed_image(id)));
        rec.operations.push_back({"standardize", params({{"std", "population"}})});
        if (fs::exists(cfg.label_path(id))) {
          const Volume labels = volio::read_volume(cfg.label_path(id), VolumeKind::Label);
          if (!labels.grid().same_shape(image.grid())) raise(Errc::DimMismatch, "label grid differs from image grid");
          rec.outputs.push_back(write_output(labels, out.preprocessed_label(id)));
          rec.operations.push_back({"copy_labels", params(json::object())});
        }
      } catch (const std::exception &e) {
        fail_volume(rec, e);
      }
      m.volumes.push_back(std::move(rec));
    }
    write_manifest(m, out.manifest("preprocess"));
    return m;
  }

  // Pipeline 2. The reference goes first so its landmarks exist for the rest.
  const Volume fixed = volio::read_volume(cfg.template_path);
  m.files.push_back(file_record(cfg.template_path));
  std::vector<std::string> order{cfg.reference};
  for (const auto &id : ids)
    if (id != cfg.reference) order.push_back(id);

  const auto percentiles = preprocess::default_percentiles();
  std::optional<std::vector<double>> reference_landmarks;
  for (const auto &id : order) {
    VolumeRecord rec;
    rec.id = id;
    try {
      rec = start(id);
      const bool is_reference = id == cfg.reference;
      if (!is_reference && !reference_landmarks) raise(Errc::InvalidArgument, "reference volume failed");
      const Volume moving = volio::read_volume(cfg.image_path(id));

      const auto result = reg::register_rigid(moving, fixed, cfg.preprocess.registration);
      ensure_parent(out.transform(id));
      reg::save_transform(result.transform, out.transform(id));
      rec.transform = out.transform(id).string();
      rec.outputs.push_back(file_record(out.transform(id)));
      rec.operations.push_back({"register_rigid", params({{"config", registration_json(cfg.preprocess.registration)},
                                                          {"metric", result.metric},
                                                          {"identity_metric", result.identity_metric}})});

      Volume v = reg::resample(moving, result.transform, fixed.grid(), reg::Interpolation::Trilinear);
      rec.operations.push_back({"resample", params({{"interpolation", "trilinear"}, {"grid", "template"}})});
      v = preprocess::rescale_minmax(v);
      rec.operations.push_back({"rescale_minmax", params(json::object())});
      if (is_reference || cfg.preprocess.ahe_all) {
        v = preprocess::adaptive_hist_eq(v, cfg.preprocess.ahe);
        rec.operations.push_back({"adaptive_hist_eq", params(ahe_json(cfg.preprocess.ahe))});
      }
      const auto landmarks = preprocess::compute_landmarks(v, percentiles, cfg.preprocess.landmarks_foreground_only);
      if (is_reference) {
        reference_landmarks = landmarks;
        rec.operations.push_back({"compute_landmarks", params({{"role", "reference"}, {"landmarks", landmarks}})});
      } else {
        const auto map = preprocess::LandmarkMap::build(landmarks, *reference_landmarks, percentiles);
        v = preprocess::match_histogram(v, map, true);
        rec.operations.push_back(
            {"match_histogram", params({{"reference", cfg.reference}, {"landmarks", landmarks}, {"preserve_background", true}})});
      }
      rec.outputs.push_back(write_output(v, out.preprocessed_image(id)));

      if (fs::exists(cfg.label_path(id))) {
        const Volume labels = volio::read_volume(cfg.label_path(id), VolumeKind::Label);
        if (!labels.grid().same_shape(moving.grid())) raise(Errc::DimMismatch, "label grid differs from image grid");
        const Volume warped = reg::resample(labels, result.transform, fixed.grid(), reg::Interpolation::NearestNeighbor);
        rec.operations.push_back({"resample_labels", params({{"interpolation", "nearest"}, {"grid", "template"}})});
        rec.outputs.push_back(write_output(warped, out.preprocessed_label(id)));
      }
    } catch (const std::exception &e) {
      fail_volume(rec, e);
    }
    m.volumes.push_back(std::move(rec));
  }
  write_manifest(m, out.manifest("preprocess"));
  return m;
}

// ---------------------------------------------------------------------------

TrainOutput cmd_train(const RunConfig &cfg) {
  cfg.validate();
  const Layout out{cfg.output_dir};
  std::vector<sampler::PatchSource> sources;
  std::vector<std::string> missing;
  for (const auto &id : cfg.splits.train)
    for (const auto &p : {out.preprocessed_image(id), out.preprocessed_label(id)})
      if (!fs::exists(p)) missing.push_back(p.string());
  if (!missing.empty()) {
    std::string msg = "preprocessed training data missing (run preprocess first):";
    for (const auto &p : missing) msg += "\n  " + p;
    raise(Errc::ConfigError, msg);
  }
  nn::InitSpec init;
  if (cfg.training.init_checkpoint) {
    if (!fs::exists(*cfg.training.init_checkpoint))
      raise(Errc::ConfigError, "initial checkpoint not found: " + cfg.training.init_checkpoint->string());
    init = nn::InitSpec::from_checkpoint(*cfg.training.init_checkpoint);
  }
  auto params = nn::init_params(cfg.network, cfg.seed, init);

  for (const auto &id : cfg.splits.train) {
    auto image = std::make_shared<const Volume>(volio::read_volume(out.preprocessed_image(id)));
    auto labels = std::make_shared<const Volume>(volio::read_volume(out.preprocessed_label(id), VolumeKind::Label));
    sources.push_back({id, std::move(image), std::move(labels)});
  }
  sampler::PatchSpec spec = cfg.patches;
  spec.seed = cfg.seed;
  spec.n_classes = cfg.network.n_classes;
  sampler::PatchStream stream(std::move(sources), spec);
  nn::PatchBatchSource batches(stream, cfg.training.batch_size);

  nn::AdamState state;
  nn::TrainOptions opts;
  opts.adam = cfg.training.optimizer;
  opts.checkpoint_every = cfg.training.checkpoint_every;
  opts.checkpoint_path = out.checkpoint();
  ensure_parent(out.checkpoint());

  TrainOutput result;
  result.losses = nn::train(params, state, cfg.network, batches, cfg.training.steps, opts);
  result.checkpoint = out.checkpoint();
  result.loss_trace = out.loss_trace();
  nn::write_loss_trace(result.losses, result.loss_trace);

  Manifest m;
  m.command = "train";
  m.pipeline = pipeline_name(cfg.pipeline);
  for (const auto &id : cfg.splits.train) {
    VolumeRecord rec;
    rec.id = id;
    rec.sources = {file_record(out.preprocessed_image(id)), file_record(out.preprocessed_label(id))};
    m.volumes.push_back(std::move(rec));
  }
  if (cfg.training.init_checkpoint) m.files.push_back(file_record(*cfg.training.init_checkpoint));
  m.files.push_back(file_record(result.checkpoint));
  m.files.push_back(file_record(result.loss_trace));
  write_manifest(m, out.manifest("train"));
  return result;
}

// ---------------------------------------------------------------------------

Manifest cmd_predict(const RunConfig &cfg, const PredictOptions &opts) {
  cfg.validate();
  const Layout out{cfg.output_dir};
  const auto ids = opts.ids.empty() ? cfg.splits.validation : opts.ids;
  const auto known = cfg.splits.all();
  const std::set<std::string> known_set(known.begin(), known.end());
  for (const auto &id : ids)
    if (!known_set.count(id)) raise(Errc::UnknownId, "unknown volume id '" + id + "'");

  const fs::path ckpt = opts.checkpoint.value_or(out.checkpoint());
  if (!fs::exists(ckpt)) raise(Errc::ConfigError, "checkpoint not found: " + ckpt.string());
  const auto loaded = nn::load_checkpoint(ckpt);
  nn::check_params(loaded.params, cfg.network);

  Manifest m;
  m.command = "predict";
  m.pipeline = pipeline_name(cfg.pipeline);
  m.files.push_back(file_record(ckpt));
  for (const auto &id : ids) {
    VolumeRecord rec;
    rec.id = id;
    const fs::path input = out.preprocessed_image(id);
    if (!fs::exists(input)) raise(Errc::ConfigError, "preprocessed volume missing for " + id + ": " + input.string());
    if (cfg.pipeline == Pipeline::P2 && !fs::exists(out.transform(id)))
      raise(Errc::MissingTransform, "no saved transform for " + id + " at " + out.transform(id).string());
    rec.sources.push_back(file_record(input));

    const Volume v = volio::read_volume(input);
    const auto pred = nn::predict_volume(loaded.params, cfg.network, v, opts.keep_probabilities);
    rec.operations.push_back({"predict_volume", params({{"checkpoint", ckpt.string()}})});
    if (opts.keep_probabilities)
      for (std::size_t c = 0; c < pred.probabilities.size(); ++c)
        rec.outputs.push_back(write_output(pred.probabilities[c], out.predictions_dir(cfg.pipeline == Pipeline::P1) /
                                                                      (id + "_prob" + std::to_string(c) + ".nii.gz")));

    if (cfg.pipeline == Pipeline::P1) {
      rec.outputs.push_back(write_output(pred.labels, out.prediction(id, true)));
    } else {
      rec.outputs.push_back(write_output(pred.labels, out.prediction(id, false)));
      const auto t = reg::load_transform(out.transform(id));
      rec.transform = out.transform(id).string();
      const Grid native = volio::read_volume(cfg.image_path(id)).grid();
      const Volume back = reg::resample(pred.labels, reg::invert(t), native, reg::Interpolation::NearestNeighbor);
      rec.operations.push_back({"inverse_transform", params({{"interpolation", "nearest"}, {"grid", "native"}})});
      rec.outputs.push_back(write_output(back, out.prediction(id, true)));
    }
    m.volumes.push_back(std::move(rec));
  }
  write_manifest(m, out.manifest("predict"));
  return m;
}

// ---------------------------------------------------------------------------

eval::DiceReport cmd_evaluate(const RunConfig &cfg, const EvaluateOptions &opts) {
  cfg.validate();
  const Layout out{cfg.output_dir};
  const bool native = opts.native_space.value_or(cfg.evaluation.native_space) || cfg.pipeline == Pipeline::P1;
  const auto &ids = cfg.splits.named(opts.split);
  if (ids.empty()) raise(Errc::ConfigError, "split " + opts.split + " is empty");
  const fs::path pred_dir = opts.pred_dir.value_or(out.predictions_dir(native));

  auto find = [](const fs::path &dir, const std::string &id) -> std::optional<fs::path> {
    for (const char *ext : {".nii.gz", ".nii"}) {
      const fs::path p = dir / (id + ext);
      if (fs::exists(p)) return p;
    }
    return std::nullopt;
  };
  auto truth_path = [&](const std::string &id) -> std::optional<fs::path> {
    if (opts.truth_dir) return find(*opts.truth_dir, id);
    const fs::path p = native ? cfg.label_path(id) : out.preprocessed_label(id);
    return fs::exists(p) ? std::optional(p) : std::nullopt;
  };

  std::vector<std::string> no_pred, no_truth;
  std::vector<std::pair<fs::path, fs::path>> files;
  for (const auto &id : ids) {
    const auto p = find(pred_dir, id);
    const auto t = truth_path(id);
    if (!p) no_pred.push_back(id);
    if (!t) no_truth.push_back(id);
    if (p && t) files.emplace_back(*p, *t);
  }
  if (!no_pred.empty() || !no_truth.empty()) {
    std::string msg = "prediction and truth ids do not match the " + opts.split + " split;";
    for (const auto &id : no_pred) msg += " no prediction for " + id + ";";
    for (const auto &id : no_truth) msg += " no truth for " + id + ";";
    raise(Errc::IdMismatch, msg);
  }

  std::vector<Volume> preds, truths;
  preds.reserve(ids.size());
  truths.reserve(ids.size());
  Manifest m;
  m.command = "evaluate";
  m.pipeline = pipeline_name(cfg.pipeline);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    preds.push_back(volio::read_volume(files[i].first, VolumeKind::Label));
    truths.push_back(volio::read_volume(files[i].second, VolumeKind::Label));
    VolumeRecord rec;
    rec.id = ids[i];
    rec.sources = {file_record(files[i].first), file_record(files[i].second)};
    m.volumes.push_back(std::move(rec));
  }
  std::vector<eval::LabelPair> pairs;
  for (std::size_t i = 0; i < ids.size(); ++i) pairs.push_back({ids[i], &preds[i], &truths[i]});
  std::vector<int> classes;
  for (int c = 1; c < cfg.network.n_classes; ++c) classes.push_back(c);
  const auto report = eval::report(pairs, classes, cfg.evaluation.std_kind);

  const fs::path txt = out.report(opts.split, "txt"), js = out.report(opts.split, "json");
  ensure_parent(txt);
  {
    std::ofstream t(txt);
    t << eval::to_table(report);
    std::ofstream j(js);
    j << eval::to_json(report);
    if (!t || !j) raise(Errc::IoError, "cannot write reports under " + txt.parent_path().string());
  }
  m.files = {file_record(txt), file_record(js)};
  write_manifest(m, out.manifest("evaluate"));
  return report;
}

} // namespace brainseg::cli
