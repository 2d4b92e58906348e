#pragma once

#include <map>
#include <string>
#include <vector>

#include "brainseg/volume.hpp"

namespace brainseg::eval {

/// 2|P∩T| / (|P|+|T|) over voxels equal to `class_id`; 1.0 when both sets are
/// empty. Counts are integers until the final division. Throws DimMismatch.
double dice(const Volume &pred, const Volume &truth, int class_id);

struct VolumeDice {
  std::string id;
  std::map<int, double> dsc;
};

struct ClassAggregate {
  double mean = 0.0;
  double std = 0.0;
};

enum class StdKind { Population, Sample };

struct DiceReport {
  std::vector<int> classes;
  std::vector<VolumeDice> volumes; // sorted by id
  std::map<int, ClassAggregate> aggregate;
  StdKind std_kind = StdKind::Population;

  std::vector<std::string> ids() const;
};

struct LabelPair {
  std::string id;
  const Volume *pred = nullptr;
  const Volume *truth = nullptr;
};

/// Per-volume DSC for every class plus per-class mean and std over the pairs.
/// Pairs are ordered by id before aggregation. Throws InvalidArgument for an
/// empty or duplicated id set.
DiceReport report(const std::vector<LabelPair> &pairs, const std::vector<int> &classes,
                  StdKind std_kind = StdKind::Population);

// Display name for the standard tissue ids; "class N" otherwise.
std::string class_name(int class_id);

/// Aligned table with one column per class: a row per volume and a final
/// "mean±std" row.
std::string to_table(const DiceReport &r);
std::string to_json(const DiceReport &r);

} // namespace brainseg::eval
