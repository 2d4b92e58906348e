#include "brainseg/rigid_transform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "brainseg/error.hpp"

namespace brainseg::reg {

Mat3 rotation_zyx(const Vec3 &e) {
  const double ca = std::cos(e[0]), sa = std::sin(e[0]);
  const double cb = std::cos(e[1]), sb = std::sin(e[1]);
  const double cc = std::cos(e[2]), sc = std::sin(e[2]);
  return Mat3{{
      {ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
      {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
      {-sb, cb * sc, cb * cc},
  }};
}

Vec3 euler_from_rotation(const Mat3 &r) {
  const double sb = std::clamp(-r[2][0], -1.0, 1.0);
  const double b = std::asin(sb);
  const double cb = std::sqrt(r[0][0] * r[0][0] + r[1][0] * r[1][0]);
  if (cb > 1e-12) return {std::atan2(r[1][0], r[0][0]), b, std::atan2(r[2][1], r[2][2])};
  // Gimbal lock: only a - c (or a + c) is determined; put it all in a.
  return {std::atan2(-r[0][1], r[1][1]), b, 0.0};
}

RigidTransform RigidTransform::from_rotation(const Mat3 &rotation, const Vec3 &translation, const Vec3 &center) {
  return RigidTransform{euler_from_rotation(rotation), translation, center};
}

Mat3 RigidTransform::rotation() const { return rotation_zyx(euler_zyx); }

Mat4 RigidTransform::matrix() const {
  const Mat3 r = rotation();
  Mat4 m{};
  for (int i = 0; i < 3; ++i) {
    double rc = 0.0;
    for (int j = 0; j < 3; ++j) {
      m[i][j] = r[i][j];
      rc += r[i][j] * center[j];
    }
    m[i][3] = center[i] + translation[i] - rc;
  }
  m[3][3] = 1.0;
  return m;
}

Vec3 RigidTransform::operator()(const Vec3 &p) const { return brainseg::apply(matrix(), p); }

RigidTransform invert(const RigidTransform &t) {
  const Mat3 r = t.rotation();
  Mat3 rt{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rt[i][j] = r[j][i];
  Vec3 tr{};
  for (int i = 0; i < 3; ++i) tr[i] = -(rt[i][0] * t.translation[0] + rt[i][1] * t.translation[1] + rt[i][2] * t.translation[2]);
  return RigidTransform::from_rotation(rt, tr, t.center);
}

RigidTransform compose(const RigidTransform &outer, const RigidTransform &inner) {
  const Mat4 m = outer.matrix() * inner.matrix();
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m[i][j];
  const Vec3 &c = inner.center;
  // m maps c to R c + m_t; translation relative to c is (R c + m_t) - c.
  Vec3 tr{};
  for (int i = 0; i < 3; ++i) tr[i] = r[i][0] * c[0] + r[i][1] * c[1] + r[i][2] * c[2] + m[i][3] - c[i];
  return RigidTransform::from_rotation(r, tr, c);
}

double rotation_angle_between(const RigidTransform &a, const RigidTransform &b) {
  const Mat3 ra = a.rotation(), rb = b.rotation();
  double trace = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) trace += ra[k][i] * rb[k][i];
  return std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0));
}

void save_transform(const RigidTransform &t, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(Errc::IoError, "cannot open " + path.string() + " for writing");
  char buf[256];
  auto line = [&](const char *key, const Vec3 &v) {
    std::snprintf(buf, sizeof buf, "%s: %.17g %.17g %.17g\n", key, v[0], v[1], v[2]);
    out << buf;
  };
  out << "rigid-v1\n";
  out << "# q = R*(p - center) + center + translation maps fixed mm to moving mm; "
         "R = Rz(a)*Ry(b)*Rx(c), intrinsic Z-Y-X\n";
  line("euler_zyx_rad", t.euler_zyx);
  line("translation_mm", t.translation);
  line("center_mm", t.center);
  if (!out) raise(Errc::IoError, "write failure on " + path.string());
}

RigidTransform load_transform(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) raise(Errc::IoError, "cannot open " + path.string());
  std::string line;
  bool versioned = false;
  std::map<std::string, Vec3> fields;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!versioned) {
      if (line != "rigid-v1") raise(Errc::ParseError, "missing rigid-v1 version line");
      versioned = true;
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) raise(Errc::ParseError, "malformed line: " + line);
    const std::string key = line.substr(0, colon);
    std::istringstream values(line.substr(colon + 1));
    Vec3 v{};
    for (double &x : v)
      if (!(values >> x)) raise(Errc::ParseError, key + " needs three numbers");
    std::string extra;
    if (values >> extra) raise(Errc::ParseError, key + " has more than three values");
    fields[key] = v;
  }
  if (!versioned) raise(Errc::ParseError, "empty transform file");
  for (const char *key : {"euler_zyx_rad", "translation_mm", "center_mm"})
    if (!fields.count(key)) raise(Errc::ParseError, std::string("missing field ") + key);
  return RigidTransform{fields["euler_zyx_rad"], fields["translation_mm"], fields["center_mm"]};
}

} // namespace brainseg::reg
