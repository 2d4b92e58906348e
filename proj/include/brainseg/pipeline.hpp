#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainseg/dice.hpp"
#include "brainseg/run_config.hpp"

namespace brainseg::cli {

/// Where every command reads and writes, relative to the run's output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path preprocessed_image(const std::string &id) const;
  std::filesystem::path preprocessed_label(const std::string &id) const;
  std::filesystem::path transform(const std::string &id) const;
  std::filesystem::path checkpoint() const;
  std::filesystem::path loss_trace() const;
  std::filesystem::path predictions_dir(bool native) const;
  std::filesystem::path prediction(const std::string &id, bool native) const;
  std::filesystem::path report(const std::string &split, const std::string &ext) const;
  std::filesystem::path manifest(const std::string &command) const;
};

struct FileRecord {
  std::string path;
  std::string sha256;
};

struct Operation {
  std::string name;
  std::string params_json; // compact JSON object
};

struct VolumeRecord {
  std::string id;
  bool ok = true;
  std::string error;
  std::vector<FileRecord> sources;
  std::vector<Operation> operations;
  std::string transform; // P2 only
  std::vector<FileRecord> outputs;
};

struct Manifest {
  std::string command;
  std::string pipeline;
  std::vector<VolumeRecord> volumes;
  std::vector<FileRecord> files; // outputs not tied to one volume

  bool ok() const;
  std::vector<std::string> failed_ids() const;
};

std::string to_json(const Manifest &m);
void write_manifest(const Manifest &m, const std::filesystem::path &path);
FileRecord file_record(const std::filesystem::path &path);

/// P1: standardize every volume. P2: register to the template, save the
/// transform, resample intensities (trilinear) and labels (nearest), rescale to
/// [0, 1], equalize the reference, and match every other volume to the
/// reference landmarks. A failing volume is recorded in the manifest and does
/// not stop the others.
Manifest cmd_preprocess(const RunConfig &cfg);

struct TrainOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_trace;
  std::vector<double> losses;
};

TrainOutput cmd_train(const RunConfig &cfg);

struct PredictOptions {
  std::vector<std::string> ids; // empty means the validation split
  std::optional<std::filesystem::path> checkpoint;
  bool keep_probabilities = false;
};

/// Predicts in the preprocessed space. Under P2 the label map is also pulled
/// back onto the native grid through the inverse of the saved transform.
/// Throws UnknownId and MissingTransform.
Manifest cmd_predict(const RunConfig &cfg, const PredictOptions &opts = {});

struct EvaluateOptions {
  std::string split = "validation";
  std::optional<std::filesystem::path> pred_dir;
  std::optional<std::filesystem::path> truth_dir; // files named <id>.nii.gz or <id>.nii
  std::optional<bool> native_space;               // overrides the config
};

/// Dice report over the split's ids, written as text and JSON. Files are
/// paired by id; a missing prediction or truth for any id throws IdMismatch.
eval::DiceReport cmd_evaluate(const RunConfig &cfg, const EvaluateOptions &opts = {});

} // namespace brainseg::cli
