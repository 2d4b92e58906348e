#include "brainseg/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "brainseg/error.hpp"

namespace brainseg::cli {

using json = nlohmann::json;

std::vector<std::string> Splits::all() const {
  std::vector<std::string> out = train;
  out.insert(out.end(), validation.begin(), validation.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

const std::vector<std::string> &Splits::named(const std::string &split) const {
  if (split == "train") return train;
  if (split == "validation") return validation;
  if (split == "test") return test;
  raise(Errc::ConfigError, "unknown split '" + split + "' (expected train, validation or test)");
}

Splits default_splits() {
  auto ids = [](std::initializer_list<int> n) {
    std::vector<std::string> out;
    for (int i : n) out.push_back((i < 10 ? "IBSR_0" : "IBSR_") + std::to_string(i));
    return out;
  };
  return {ids({1, 3, 4, 6, 7, 8, 9, 16, 18}), ids({11, 12, 13, 14, 17}), ids({2, 10, 15})};
}

namespace {

std::string expand(const std::string &pattern, const std::string &id) {
  std::string out = pattern;
  for (std::size_t pos = out.find("{id}"); pos != std::string::npos; pos = out.find("{id}", pos + id.size()))
    out.replace(pos, 4, id);
  return out;
}

/// Reads the members of one JSON object, rejecting keys nobody asked for.
class Reader {
public:
  Reader(const json &obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj.is_object()) fail(where_ + " must be an object");
  }

  template <typename T> void get(const char *key, T &out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception &) {
      fail(where_ + "." + key + " has the wrong type");
    }
  }

  const json *child(const char *key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  std::string path(const char *key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto &[k, v] : obj_.items())
      if (!seen_.count(k)) fail("unknown key " + where_ + "." + k);
  }

  [[noreturn]] static void fail(const std::string &msg) { raise(Errc::ConfigError, msg); }

private:
  const json &obj_;
  std::string where_;
  std::set<std::string> seen_;
};

Index3 to_index3(const std::vector<std::size_t> &v, const std::string &where) {
  if (v.size() != 3) Reader::fail(where + " needs three values");
  return {v[0], v[1], v[2]};
}

void read_registration(const json &j, reg::RegistrationConfig &r) {
  Reader rd(j, "preprocess.registration");
  std::string metric = r.metric == reg::Metric::MutualInformation ? "mutual_information" : "mean_squares";
  rd.get("metric", metric);
  if (metric == "mutual_information")
    r.metric = reg::Metric::MutualInformation;
  else if (metric == "mean_squares")
    r.metric = reg::Metric::MeanSquares;
  else
    Reader::fail("preprocess.registration.metric must be mutual_information or mean_squares");
  rd.get("mi_bins", r.mi_bins);
  rd.get("shrink_factors", r.shrink_factors);
  rd.get("smoothing_sigmas_mm", r.smoothing_sigmas_mm);
  rd.get("step_size", r.step_size);
  rd.get("min_step", r.min_step);
  rd.get("max_iterations", r.max_iterations);
  rd.get("tolerance", r.tolerance);
  rd.get("sampling_fraction", r.sampling_fraction);
  rd.finish();
}

void read_preprocess(const json &j, PreprocessSettings &p) {
  Reader rd(j, "preprocess");
  if (const json *ahe = rd.child("ahe")) {
    Reader a(*ahe, "preprocess.ahe");
    std::vector<std::size_t> grid{p.ahe.grid[0], p.ahe.grid[1], p.ahe.grid[2]};
    a.get("grid", grid);
    p.ahe.grid = to_index3(grid, "preprocess.ahe.grid");
    a.get("clip_limit", p.ahe.clip_limit);
    a.get("bins", p.ahe.bins);
    a.get("foreground_only", p.ahe.foreground_only);
    a.finish();
  }
  rd.get("ahe_all_volumes", p.ahe_all);
  rd.get("landmarks_foreground_only", p.landmarks_foreground_only);
  if (const json *r = rd.child("registration")) read_registration(*r, p.registration);
  rd.finish();
}

void read_network(const json &j, nn::NetConfig &n) {
  Reader rd(j, "network");
  rd.get("n_scales", n.n_scales);
  rd.get("units_per_scale", n.units_per_scale);
  rd.get("base_filters", n.base_filters);
  rd.get("n_classes", n.n_classes);
  rd.get("leakiness", n.leakiness);
  rd.get("bn_epsilon", n.bn_epsilon);
  rd.get("bn_momentum", n.bn_momentum);
  if (const json *s = rd.child("strides")) {
    std::vector<std::vector<int>> strides;
    try {
      strides = s->get<std::vector<std::vector<int>>>();
    } catch (const json::exception &) {
      Reader::fail("network.strides must be a list of 3-vectors");
    }
    n.strides.clear();
    for (const auto &st : strides) {
      if (st.size() != 3) Reader::fail("network.strides entries need three values");
      n.strides.push_back({st[0], st[1], st[2]});
    }
  }
  rd.finish();
}

void read_patches(const json &j, sampler::PatchSpec &p) {
  Reader rd(j, "patches");
  std::vector<std::size_t> size{p.size[0], p.size[1], p.size[2]};
  rd.get("size", size);
  p.size = to_index3(size, "patches.size");
  rd.get("count", p.count);
  std::string mode = p.mode == sampler::SamplingMode::Uniform ? "uniform" : "class_balanced";
  rd.get("mode", mode);
  if (mode == "uniform")
    p.mode = sampler::SamplingMode::Uniform;
  else if (mode == "class_balanced")
    p.mode = sampler::SamplingMode::ClassBalanced;
  else
    Reader::fail("patches.mode must be uniform or class_balanced");
  rd.finish();
}

void read_training(const json &j, TrainSettings &t) {
  Reader rd(j, "training");
  rd.get("steps", t.steps);
  rd.get("batch_size", t.batch_size);
  rd.get("checkpoint_every", t.checkpoint_every);
  if (const json *o = rd.child("optimizer")) {
    Reader a(*o, "training.optimizer");
    a.get("lr", t.optimizer.lr);
    a.get("beta1", t.optimizer.beta1);
    a.get("beta2", t.optimizer.beta2);
    a.get("eps", t.optimizer.eps);
    a.finish();
  }
  if (const json *init = rd.child("init")) {
    if (init->is_string() && init->get<std::string>() == "uniform") {
      t.init_checkpoint.reset();
    } else if (init->is_object()) {
      Reader a(*init, "training.init");
      std::string path;
      a.get("checkpoint", path);
      a.finish();
      if (path.empty()) Reader::fail("training.init.checkpoint must name a file");
      t.init_checkpoint = path;
    } else {
      Reader::fail("training.init must be \"uniform\" or {\"checkpoint\": path}");
    }
  }
  rd.finish();
}

void read_evaluation(const json &j, EvalSettings &e) {
  Reader rd(j, "evaluation");
  std::string space = e.native_space ? "native" : "template";
  rd.get("space", space);
  if (space != "native" && space != "template") Reader::fail("evaluation.space must be native or template");
  e.native_space = space == "native";
  std::string std_kind = e.std_kind == eval::StdKind::Population ? "population" : "sample";
  rd.get("std", std_kind);
  if (std_kind != "population" && std_kind != "sample") Reader::fail("evaluation.std must be population or sample");
  e.std_kind = std_kind == "population" ? eval::StdKind::Population : eval::StdKind::Sample;
  rd.finish();
}

} // namespace

std::filesystem::path RunConfig::image_path(const std::string &id) const {
  return dataset_root / expand(image_pattern, id);
}

std::filesystem::path RunConfig::label_path(const std::string &id) const {
  return dataset_root / expand(label_pattern, id);
}

void RunConfig::validate() const {
  std::set<std::string> seen;
  for (const auto &id : splits.all()) {
    if (id.empty()) raise(Errc::ConfigError, "empty volume id");
    if (!seen.insert(id).second) raise(Errc::ConfigError, "volume id " + id + " appears in more than one split");
  }
  if (splits.train.empty()) raise(Errc::ConfigError, "training split is empty");
  if (image_pattern.find("{id}") == std::string::npos || label_pattern.find("{id}") == std::string::npos)
    raise(Errc::ConfigError, "image and label patterns must contain {id}");
  if (pipeline == Pipeline::P2) {
    if (reference.empty()) raise(Errc::ConfigError, "pipeline P2 needs a reference volume id");
    if (!seen.count(reference)) raise(Errc::ConfigError, "reference id " + reference + " is not in any split");
    if (template_path.empty()) raise(Errc::ConfigError, "pipeline P2 needs a template path");
  }
  try {
    network.validate();
    preprocess.registration.validate();
  } catch (const Error &e) {
    raise(Errc::ConfigError, e.what());
  }
  const auto ts = network.total_stride();
  for (int a = 0; a < 3; ++a) {
    if (patches.size[a] < 1) raise(Errc::ConfigError, "patch size must be positive");
    if (patches.size[a] % static_cast<std::size_t>(ts[a]) != 0)
      raise(Errc::ConfigError, "patch size must be a multiple of the total network stride");
  }
  if (patches.count < 1) raise(Errc::ConfigError, "patches.count must be >= 1");
  if (training.steps < 0) raise(Errc::ConfigError, "training.steps must be >= 0");
  if (training.batch_size < 1) raise(Errc::ConfigError, "training.batch_size must be >= 1");
  if (training.checkpoint_every < 0) raise(Errc::ConfigError, "training.checkpoint_every must be >= 0");
  if (!(training.optimizer.lr > 0)) raise(Errc::ConfigError, "training.optimizer.lr must be positive");
  if (preprocess.ahe.bins < 2 || !(preprocess.ahe.clip_limit > 0))
    raise(Errc::ConfigError, "preprocess.ahe needs bins >= 2 and a positive clip_limit");
  for (auto g : preprocess.ahe.grid)
    if (g < 1) raise(Errc::ConfigError, "preprocess.ahe.grid must be positive");
}

RunConfig parse_run_config(const std::string &json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error &e) {
    raise(Errc::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Reader rd(j, "config");
  rd.get("name", cfg.name);
  std::string s;
  rd.get("dataset_root", s);
  cfg.dataset_root = s;
  rd.get("image_pattern", cfg.image_pattern);
  rd.get("label_pattern", cfg.label_pattern);
  if (const json *sp = rd.child("splits")) {
    Reader a(*sp, "splits");
    a.get("train", cfg.splits.train);
    a.get("validation", cfg.splits.validation);
    a.get("test", cfg.splits.test);
    a.finish();
  }
  std::string pipeline = "P1";
  rd.get("pipeline", pipeline);
  if (pipeline == "P1")
    cfg.pipeline = Pipeline::P1;
  else if (pipeline == "P2")
    cfg.pipeline = Pipeline::P2;
  else
    Reader::fail("pipeline must be P1 or P2");
  rd.get("reference", cfg.reference);
  s.clear();
  rd.get("template", s);
  cfg.template_path = s;
  if (const json *p = rd.child("preprocess")) read_preprocess(*p, cfg.preprocess);
  if (const json *n = rd.child("network")) read_network(*n, cfg.network);
  if (const json *p = rd.child("patches")) read_patches(*p, cfg.patches);
  if (const json *t = rd.child("training")) read_training(*t, cfg.training);
  if (const json *e = rd.child("evaluation")) read_evaluation(*e, cfg.evaluation);
  rd.get("seed", cfg.seed);
  s = cfg.output_dir.string();
  rd.get("output_dir", s);
  cfg.output_dir = s;
  rd.finish();
  cfg.patches.seed = cfg.seed;
  cfg.patches.n_classes = cfg.network.n_classes;
  cfg.preprocess.registration.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) raise(Errc::ConfigError, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string to_json(const RunConfig &cfg) {
  const auto &r = cfg.preprocess.registration;
  json strides = json::array();
  for (const auto &s : cfg.network.strides) strides.push_back({s[0], s[1], s[2]});
  json j = {
      {"name", cfg.name},
      {"dataset_root", cfg.dataset_root.string()},
      {"image_pattern", cfg.image_pattern},
      {"label_pattern", cfg.label_pattern},
      {"splits", {{"train", cfg.splits.train}, {"validation", cfg.splits.validation}, {"test", cfg.splits.test}}},
      {"pipeline", cfg.pipeline == Pipeline::P1 ? "P1" : "P2"},
      {"reference", cfg.reference},
      {"template", cfg.template_path.string()},
      {"preprocess",
       {{"ahe",
         {{"grid", cfg.preprocess.ahe.grid},
          {"clip_limit", cfg.preprocess.ahe.clip_limit},
          {"bins", cfg.preprocess.ahe.bins},
          {"foreground_only", cfg.preprocess.ahe.foreground_only}}},
        {"ahe_all_volumes", cfg.preprocess.ahe_all},
        {"landmarks_foreground_only", cfg.preprocess.landmarks_foreground_only},
        {"registration",
         {{"metric", r.metric == reg::Metric::MutualInformation ? "mutual_information" : "mean_squares"},
          {"mi_bins", r.mi_bins},
          {"shrink_factors", r.shrink_factors},
          {"smoothing_sigmas_mm", r.smoothing_sigmas_mm},
          {"step_size", r.step_size},
          {"min_step", r.min_step},
          {"max_iterations", r.max_iterations},
          {"tolerance", r.tolerance},
          {"sampling_fraction", r.sampling_fraction}}}}},
      {"network",
       {{"n_scales", cfg.network.n_scales},
        {"units_per_scale", cfg.network.units_per_scale},
        {"base_filters", cfg.network.base_filters},
        {"n_classes", cfg.network.n_classes},
        {"leakiness", cfg.network.leakiness},
        {"bn_epsilon", cfg.network.bn_epsilon},
        {"bn_momentum", cfg.network.bn_momentum},
        {"strides", strides}}},
      {"patches",
       {{"size", cfg.patches.size},
        {"count", cfg.patches.count},
        {"mode", cfg.patches.mode == sampler::SamplingMode::Uniform ? "uniform" : "class_balanced"}}},
      {"training",
       {{"steps", cfg.training.steps},
        {"batch_size", cfg.training.batch_size},
        {"checkpoint_every", cfg.training.checkpoint_every},
        {"optimizer",
         {{"lr", cfg.training.optimizer.lr},
          {"beta1", cfg.training.optimizer.beta1},
          {"beta2", cfg.training.optimizer.beta2},
          {"eps", cfg.training.optimizer.eps}}},
        {"init", cfg.training.init_checkpoint ? json{{"checkpoint", cfg.training.init_checkpoint->string()}}
                                              : json("uniform")}}},
      {"evaluation",
       {{"space", cfg.evaluation.native_space ? "native" : "template"},
        {"std", cfg.evaluation.std_kind == eval::StdKind::Population ? "population" : "sample"}}},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir.string()},
  };
  return j.dump(2) + "\n";
}

void check_inputs(const RunConfig &cfg, const std::vector<std::string> &ids, bool need_labels) {
  std::vector<std::string> missing;
  for (const auto &id : ids) {
    if (!std::filesystem::exists(cfg.image_path(id))) missing.push_back(cfg.image_path(id).string());
    if (need_labels && !std::filesystem::exists(cfg.label_path(id))) missing.push_back(cfg.label_path(id).string());
  }
  if (cfg.pipeline == Pipeline::P2 && !std::filesystem::exists(cfg.template_path))
    missing.push_back(cfg.template_path.string());
  if (!missing.empty()) {
    std::string msg = "missing input files:";
    for (const auto &m : missing) msg += "\n  " + m;
    raise(Errc::ConfigError, msg);
  }
}

} // namespace brainseg::cli
