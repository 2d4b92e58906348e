#include "brainseg/dice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <sstream>

#include "json.hpp"

#include "brainseg/error.hpp"
#include "brainseg/parallel.hpp"

namespace brainseg::eval {

double dice(const Volume &pred, const Volume &truth, int class_id) {
  if (pred.dims() != truth.dims()) raise(Errc::DimMismatch, "prediction and truth dims differ");
  const auto p = pred.data();
  const auto t = truth.data();
  std::uint64_t np = 0, nt = 0, both = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = static_cast<int>(p[i]) == class_id;
    const bool b = static_cast<int>(t[i]) == class_id;
    np += a;
    nt += b;
    both += a && b;
  }
  if (np + nt == 0) return 1.0;
  return static_cast<double>(2 * both) / static_cast<double>(np + nt);
}

std::vector<std::string> DiceReport::ids() const {
  std::vector<std::string> out;
  for (const auto &v : volumes) out.push_back(v.id);
  return out;
}

DiceReport report(const std::vector<LabelPair> &pairs, const std::vector<int> &classes, StdKind std_kind) {
  if (pairs.empty()) raise(Errc::InvalidArgument, "report needs at least one volume pair");
  if (classes.empty()) raise(Errc::InvalidArgument, "report needs at least one class");
  std::vector<LabelPair> sorted = pairs;
  std::sort(sorted.begin(), sorted.end(), [](const LabelPair &a, const LabelPair &b) { return a.id < b.id; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].id == sorted[i - 1].id) raise(Errc::InvalidArgument, "duplicate volume id " + sorted[i].id);

  DiceReport r;
  r.classes = classes;
  r.std_kind = std_kind;
  r.volumes.resize(sorted.size());
  parallel_for(sorted.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      r.volumes[i].id = sorted[i].id;
      for (int c : classes) r.volumes[i].dsc[c] = dice(*sorted[i].pred, *sorted[i].truth, c);
    }
  });
  const double n = static_cast<double>(r.volumes.size());
  for (int c : classes) {
    double sum = 0.0;
    for (const auto &v : r.volumes) sum += v.dsc.at(c);
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto &v : r.volumes) ss += (v.dsc.at(c) - mean) * (v.dsc.at(c) - mean);
    const double denom = std_kind == StdKind::Sample ? n - 1.0 : n;
    r.aggregate[c] = {mean, denom > 0 ? std::sqrt(ss / denom) : 0.0};
  }
  return r;
}

std::string class_name(int class_id) {
  switch (class_id) {
  case 0: return "BG";
  case 1: return "CSF";
  case 2: return "GM";
  case 3: return "WM";
  default: return "class " + std::to_string(class_id);
  }
}

std::string to_table(const DiceReport &r) {
  std::size_t id_width = std::string("mean±std").size() - 1; // ± is two bytes, one column
  for (const auto &v : r.volumes) id_width = std::max(id_width, v.id.size());
  const int col = 11;
  std::ostringstream out;
  char buf[64];
  auto pad = [&](const std::string &s, std::size_t visible, std::size_t width) {
    out << s << std::string(width > visible ? width - visible : 0, ' ');
  };
  pad("volume", 6, id_width);
  for (int c : r.classes) {
    std::snprintf(buf, sizeof buf, "%*s", col, class_name(c).c_str());
    out << "  " << buf;
  }
  out << '\n';
  for (const auto &v : r.volumes) {
    pad(v.id, v.id.size(), id_width);
    for (int c : r.classes) {
      std::snprintf(buf, sizeof buf, "%*.4f", col, v.dsc.at(c));
      out << "  " << buf;
    }
    out << '\n';
  }
  pad("mean±std", 8, id_width);
  for (int c : r.classes) {
    const auto &a = r.aggregate.at(c);
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", a.mean, a.std);
    const std::string cell = buf;
    out << "  " << std::string(col > 9 ? col - 9 : 0, ' ') << cell;
  }
  out << '\n';
  return out.str();
}

std::string to_json(const DiceReport &r) {
  nlohmann::ordered_json j;
  j["std"] = r.std_kind == StdKind::Population ? "population" : "sample";
  j["ids"] = r.ids();
  j["classes"] = nlohmann::ordered_json::array();
  for (int c : r.classes) j["classes"].push_back({{"id", c}, {"name", class_name(c)}});
  j["volumes"] = nlohmann::ordered_json::array();
  for (const auto &v : r.volumes) {
    nlohmann::ordered_json d;
    for (int c : r.classes) d[class_name(c)] = v.dsc.at(c);
    j["volumes"].push_back({{"id", v.id}, {"dice", d}});
  }
  nlohmann::ordered_json agg;
  for (int c : r.classes) agg[class_name(c)] = {{"mean", r.aggregate.at(c).mean}, {"std", r.aggregate.at(c).std}};
  j["aggregate"] = agg;
  return j.dump(2) + "\n";
}

} // namespace brainseg::eval
