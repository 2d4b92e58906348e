#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainseg/dice.hpp"
#include "brainseg/net_config.hpp"
#include "brainseg/optimizer.hpp"
#include "brainseg/preprocess.hpp"
#include "brainseg/registration.hpp"
#include "brainseg/sampler.hpp"

namespace brainseg::cli {

enum class Pipeline { P1, P2 };

struct Splits {
  std::vector<std::string> train, validation, test;

  std::vector<std::string> all() const;
  const std::vector<std::string> &named(const std::string &split) const; // throws ConfigError
};

/// IBSR18 split: training, validation and test ids, and the reference volume.
Splits default_splits();
inline constexpr const char *kDefaultReference = "IBSR_07";

struct PreprocessSettings {
  preprocess::AheParams ahe;
  bool ahe_all = false; // equalize every volume, not only the reference
  bool landmarks_foreground_only = true;
  reg::RegistrationConfig registration;
};

struct TrainSettings {
  int steps = 1000;
  int batch_size = 1;
  int checkpoint_every = 500;
  nn::AdamHyper optimizer;
  std::optional<std::filesystem::path> init_checkpoint; // empty means uniform init
};

struct EvalSettings {
  bool native_space = true;
  eval::StdKind std_kind = eval::StdKind::Population;
};

/// One training/evaluation run, parsed from a JSON document.
struct RunConfig {
  std::string name;
  std::filesystem::path dataset_root;
  // Relative to dataset_root; "{id}" expands to the volume id.
  std::string image_pattern = "{id}/{id}_ana_strip.nii.gz";
  std::string label_pattern = "{id}/{id}_segTRI_ana.nii.gz";
  Splits splits = default_splits();
  Pipeline pipeline = Pipeline::P1;
  std::string reference = kDefaultReference;
  std::filesystem::path template_path;
  PreprocessSettings preprocess;
  nn::NetConfig network;
  sampler::PatchSpec patches;
  TrainSettings training;
  EvalSettings evaluation;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  std::filesystem::path image_path(const std::string &id) const;
  std::filesystem::path label_path(const std::string &id) const;

  // Structural checks only: disjoint splits, known reference, valid sub-configs.
  // Throws ConfigError.
  void validate() const;
};

// Throws ConfigError for malformed JSON, unknown keys, or invalid values.
RunConfig parse_run_config(const std::string &json_text);
RunConfig load_run_config(const std::filesystem::path &path);
std::string to_json(const RunConfig &cfg);

/// Checks that the inputs of `ids` (and the template under P2) exist before
/// any work starts. Labels are required only when `need_labels`.
void check_inputs(const RunConfig &cfg, const std::vector<std::string> &ids, bool need_labels);

} // namespace brainseg::cli
