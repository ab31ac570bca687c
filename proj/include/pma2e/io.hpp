#pragma once

// Point-cloud files (xyz, ply), dataset manifests, resampling and the
// synthetic shape generator.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "geometry.hpp"
#include "rng.hpp"

namespace pma2e {

namespace fs = std::filesystem;

enum class CloudFormat { Xyz, PlyAscii, PlyBinary };

// ---------------------------------------------------------------------------
// xyz

inline PointCloud parse_xyz(std::istream& in, const std::string& origin) {
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    Vec3 p;
    std::string rest;
    if (!(ls >> p[0] >> p[1] >> p[2]) || (ls >> rest))
      fail(ErrorKind::Format, origin + ":" + std::to_string(lineno) + ": expected 'x y z'");
    if (!is_finite(p)) fail(ErrorKind::Format, origin + ":" + std::to_string(lineno) + ": non-finite coordinate");
    pts.push_back(p);
  }
  require(!pts.empty(), ErrorKind::Format, origin + ": zero points");
  return PointCloud(std::move(pts));
}

/// Coordinates are written at 32-bit float precision.
inline void write_xyz(std::ostream& out, const PointCloud& cloud) {
  char buf[96];
  for (const auto& p : cloud) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p[0])),
                  static_cast<double>(static_cast<float>(p[1])), static_cast<double>(static_cast<float>(p[2])));
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// ply

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;  // canonical: int8 uint8 int16 uint16 int32 uint32 float32 float64
  bool list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline std::string canonical_ply_type(const std::string& t) {
  static const std::map<std::string, std::string> names = {
      {"char", "int8"},     {"int8", "int8"},       {"uchar", "uint8"},    {"uint8", "uint8"},
      {"short", "int16"},   {"int16", "int16"},     {"ushort", "uint16"},  {"uint16", "uint16"},
      {"int", "int32"},     {"int32", "int32"},     {"uint", "uint32"},    {"uint32", "uint32"},
      {"float", "float32"}, {"float32", "float32"}, {"double", "float64"}, {"float64", "float64"}};
  auto it = names.find(t);
  return it == names.end() ? std::string() : it->second;
}

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "int8" || t == "uint8") return 1;
  if (t == "int16" || t == "uint16") return 2;
  if (t == "float64") return 8;
  return 4;
}

template <typename U>
U read_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  std::conditional_t<sizeof(U) == 8, std::uint64_t,
                     std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                        std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>
      bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<decltype(bits)>(b[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

inline double read_ply_binary_value(std::istream& in, const std::string& t) {
  if (t == "int8") return read_le<std::int8_t>(in);
  if (t == "uint8") return read_le<std::uint8_t>(in);
  if (t == "int16") return read_le<std::int16_t>(in);
  if (t == "uint16") return read_le<std::uint16_t>(in);
  if (t == "int32") return read_le<std::int32_t>(in);
  if (t == "uint32") return read_le<std::uint32_t>(in);
  if (t == "float32") return read_le<float>(in);
  return read_le<double>(in);
}

}  // namespace detail

/// ASCII or binary little-endian ply. Only vertex x/y/z are read (float32 or
/// float64); other properties and elements are skipped.
inline PointCloud parse_ply(std::istream& in, const std::string& origin) {
  using detail::PlyElement;
  auto err = [&](std::size_t line, const std::string& msg) -> void {
    fail(ErrorKind::Format, origin + ":" + std::to_string(line) + ": " + msg);
  };
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next_line() || trim(line) != "ply") err(1, "missing 'ply' magic");
  bool binary = false, have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    if (!next_line()) err(lineno, "header ends without end_header");
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii")
        binary = false;
      else if (fmt == "binary_little_endian")
        binary = true;
      else
        err(lineno, "unsupported ply format '" + fmt + "'");
      have_format = true;
    } else if (kw == "element") {
      PlyElement e;
      long long count = -1;
      if (!(ls >> e.name >> count) || count < 0) err(lineno, "malformed element line");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (elements.empty()) err(lineno, "property before any element");
      detail::PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.list = true;
        if (detail::canonical_ply_type(ct).empty() || detail::canonical_ply_type(it).empty())
          err(lineno, "unsupported ply property type in list");
        p.type = detail::canonical_ply_type(ct) + " " + detail::canonical_ply_type(it);
      } else {
        ls >> p.name;
        p.type = detail::canonical_ply_type(type);
        if (p.type.empty()) err(lineno, "unsupported ply property type '" + type + "'");
      }
      if (p.name.empty()) err(lineno, "property without a name");
      elements.back().props.push_back(std::move(p));
    } else {
      err(lineno, "unknown header keyword '" + kw + "'");
    }
  }
  if (!have_format) err(lineno, "missing format line");
  const std::size_t header_end = lineno;

  std::vector<Vec3> pts;
  for (const auto& e : elements) {
    const bool vertex = e.name == "vertex";
    int slot[3] = {-1, -1, -1};
    if (vertex) {
      for (std::size_t i = 0; i < e.props.size(); ++i) {
        const auto& p = e.props[i];
        const int axis = p.name == "x" ? 0 : p.name == "y" ? 1 : p.name == "z" ? 2 : -1;
        if (axis < 0) continue;
        if (p.list || (p.type != "float32" && p.type != "float64"))
          err(header_end, "unsupported ply property type for vertex " + p.name);
        slot[axis] = static_cast<int>(i);
      }
      if (slot[0] < 0 || slot[1] < 0 || slot[2] < 0) err(header_end, "vertex element lacks x/y/z properties");
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      std::vector<double> row(e.props.size(), 0.0);
      if (binary) {
        for (std::size_t i = 0; i < e.props.size(); ++i) {
          const auto& p = e.props[i];
          if (p.list) {
            const auto sp = p.type.find(' ');
            const auto n = static_cast<long long>(detail::read_ply_binary_value(in, p.type.substr(0, sp)));
            if (n < 0) err(header_end, "negative list length in " + e.name);
            for (long long j = 0; j < n; ++j) detail::read_ply_binary_value(in, p.type.substr(sp + 1));
          } else {
            row[i] = detail::read_ply_binary_value(in, p.type);
          }
          if (!in) err(header_end, "binary data truncated in element " + e.name + " row " + std::to_string(r));
        }
      } else {
        if (!next_line()) err(lineno, "unexpected end of file in element " + e.name);
        std::istringstream ls(line);
        for (std::size_t i = 0; i < e.props.size(); ++i) {
          const auto& p = e.props[i];
          if (p.list) {
            double n = 0, v = 0;
            if (!(ls >> n) || n < 0) err(lineno, "malformed list in element " + e.name);
            for (long long j = 0; j < static_cast<long long>(n); ++j)
              if (!(ls >> v)) err(lineno, "malformed list in element " + e.name);
          } else if (!(ls >> row[i])) {
            err(lineno, "malformed " + e.name + " row");
          }
        }
      }
      if (vertex) {
        const Vec3 p{row[static_cast<std::size_t>(slot[0])], row[static_cast<std::size_t>(slot[1])],
                     row[static_cast<std::size_t>(slot[2])]};
        if (!is_finite(p)) err(binary ? header_end : lineno, "non-finite vertex coordinate");
        pts.push_back(p);
      }
    }
  }
  require(!pts.empty(), ErrorKind::Format, origin + ": zero points");
  return PointCloud(std::move(pts));
}

/// Writes vertex x/y/z as float32, nothing else.
inline void write_ply(std::ostream& out, const PointCloud& cloud, bool binary) {
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << cloud.size() << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  if (!binary) {
    write_xyz(out, cloud);
    return;
  }
  for (const auto& p : cloud)
    for (double c : p) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(c));
      const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      out.write(b, 4);
    }
}

inline CloudFormat format_for_path(const std::string& path) {
  const auto ext = fs::path(path).extension().string();
  if (ext == ".xyz") return CloudFormat::Xyz;
  if (ext == ".ply") return CloudFormat::PlyBinary;
  fail(ErrorKind::InvalidArgument, path + ": unknown point-cloud extension (expected .xyz or .ply)");
}

inline PointCloud read_cloud(const std::string& path) {
  const auto fmt = format_for_path(path);
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  return fmt == CloudFormat::Xyz ? parse_xyz(in, path) : parse_ply(in, path);
}

inline void write_cloud(const std::string& path, const PointCloud& cloud, CloudFormat fmt) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  if (fmt == CloudFormat::Xyz)
    write_xyz(out, cloud);
  else
    write_ply(out, cloud, fmt == CloudFormat::PlyBinary);
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

/// Format inferred from the extension; .ply is written as binary.
inline void write_cloud(const std::string& path, const PointCloud& cloud) {
  write_cloud(path, cloud, format_for_path(path));
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string path;  // as written, relative to the manifest root
  std::string label;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  fs::path root;
  std::vector<std::string> labels;  // declared closed label set
  std::vector<ManifestEntry> entries;

  fs::path resolve(const ManifestEntry& e) const {
    const fs::path p(e.path);
    return p.is_absolute() ? p : root / p;
  }

  std::vector<ManifestEntry> split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == tag) out.push_back(e);
    return out;
  }

  std::size_t label_index(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    require(it != labels.end(), ErrorKind::Format, "label '" + label + "' is not declared");
    return static_cast<std::size_t>(it - labels.begin());
  }
};

/// Parses manifest text. A "#labels<TAB>a<TAB>b..." line declares the label
/// set; without one the set is the labels that occur, in first-seen order.
/// Other lines starting with '#' are comments.
inline DatasetManifest parse_manifest(const std::string& text, const fs::path& root, const std::string& origin) {
  DatasetManifest m;
  m.root = root;
  bool declared = false;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<std::size_t, ManifestEntry>> rows;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.rfind("#labels", 0) == 0) {
      require(!declared, ErrorKind::Format, where + "labels declared twice");
      auto parts = split(line, '\t');
      parts.erase(parts.begin());
      require(!parts.empty(), ErrorKind::Format, where + "empty label declaration");
      m.labels = parts;
      declared = true;
      continue;
    }
    if (line[0] == '#') continue;
    const auto parts = split(line, '\t');
    require(parts.size() == 3 && !parts[0].empty() && !parts[1].empty(), ErrorKind::Format,
            where + "expected 'path<TAB>label<TAB>split'");
    require(parts[2] == "train" || parts[2] == "val" || parts[2] == "test", ErrorKind::Format,
            where + "split must be train, val or test, got '" + parts[2] + "'");
    rows.push_back({lineno, {parts[0], parts[1], parts[2]}});
  }
  for (const auto& [ln, e] : rows) {
    const auto where = origin + ":" + std::to_string(ln) + ": ";
    if (declared)
      require(std::find(m.labels.begin(), m.labels.end(), e.label) != m.labels.end(), ErrorKind::Format,
              where + "label '" + e.label + "' is not declared");
    else if (std::find(m.labels.begin(), m.labels.end(), e.label) == m.labels.end())
      m.labels.push_back(e.label);
    m.entries.push_back(e);
  }
  require(!m.entries.empty(), ErrorKind::Format, origin + ": manifest has no entries");
  return m;
}

/// Loads a manifest and checks that every listed file exists.
inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_manifest(ss.str(), fs::path(path).parent_path(), path);
  for (const auto& e : m.entries)
    require(fs::is_regular_file(m.resolve(e)), ErrorKind::Io, path + ": missing file " + m.resolve(e).string());
  return m;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << "#labels";
  for (const auto& l : m.labels) out << '\t' << l;
  out << '\n';
  for (const auto& e : m.entries) out << e.path << '\t' << e.label << '\t' << e.split << '\n';
}

// ---------------------------------------------------------------------------
// Resampling and normalization

/// Farthest-point samples down to `target`, or pads with jittered copies
/// (offsets within 1e-6 per axis) of uniformly drawn points.
inline PointCloud resample(const PointCloud& cloud, std::size_t target, std::uint64_t seed) {
  require(target >= 1, ErrorKind::InvalidArgument, "resample target must be positive");
  if (cloud.size() == target) return cloud;
  Rng rng(seed);
  if (cloud.size() > target) {
    const auto idx = farthest_point_sample(cloud, target, rng);
    return cloud.select(idx);
  }
  std::vector<Vec3> pts(cloud.begin(), cloud.end());
  while (pts.size() < target) {
    Vec3 p = cloud[uniform_index(rng, cloud.size())];
    for (auto& c : p) c += uniform_real(rng, -1e-6, 1e-6);
    pts.push_back(p);
  }
  return PointCloud(std::move(pts));
}

/// Centroid to the origin, farthest point to radius 1.
inline PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  Vec3 c{0, 0, 0};
  for (const auto& p : cloud)
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  for (auto& v : c) v /= static_cast<double>(cloud.size());
  double r2 = 0.0;
  for (const auto& p : cloud) r2 = std::max(r2, squared_distance(p, c));
  require(r2 > 0.0, ErrorKind::InvalidArgument, "cannot normalize a cloud whose points all coincide");
  const double inv = 1.0 / std::sqrt(r2);
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back({(p[0] - c[0]) * inv, (p[1] - c[1]) * inv, (p[2] - c[2]) * inv});
  return PointCloud(std::move(out));
}

/// Clouds of one split, resampled to `points` and normalized.
inline std::vector<PointCloud> load_split(const DatasetManifest& m, const std::string& split, std::size_t points,
                                          std::uint64_t seed, std::vector<std::size_t>* labels = nullptr,
                                          std::vector<std::string>* ids = nullptr) {
  std::vector<PointCloud> out;
  std::size_t i = 0;
  for (const auto& e : m.entries) {
    ++i;
    if (e.split != split) continue;
    out.push_back(normalize_unit_sphere(resample(read_cloud(m.resolve(e).string()), points, derive_seed(seed, i))));
    if (labels) labels->push_back(m.label_index(e.label));
    if (ids) ids->push_back(e.path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

struct SynthSpec {
  std::vector<std::string> families{"sphere", "cube", "cylinder", "torus"};
  std::size_t per_family = 20;
  std::size_t points = 256;
  double jitter = 0.0;
  double test_fraction = 0.2;
  /// Random per-sample proportions (box sides, cylinder height, torus tube
  /// radius) vary by up to this fraction; 0 gives the canonical shapes.
  double variation = 0.0;
  /// Random orientation per sample.
  bool random_pose = false;
  std::uint64_t seed = 0;

  void validate() const {
    require(!families.empty() && per_family >= 1 && points >= 1, ErrorKind::Config, "synth counts must be positive");
    require(jitter >= 0.0 && std::isfinite(jitter), ErrorKind::Config, "synth jitter must be >= 0");
    require(test_fraction >= 0.0 && test_fraction < 1.0, ErrorKind::Config, "synth test fraction must lie in [0,1)");
    require(variation >= 0.0 && variation < 1.0, ErrorKind::Config, "synth variation must lie in [0,1)");
    for (const auto& f : families)
      require(f == "sphere" || f == "cube" || f == "cylinder" || f == "torus", ErrorKind::Config,
              "unknown synth family '" + f + "'");
  }
};

namespace detail {

inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline Vec3 sample_sphere(Rng& rng) {
  for (;;) {
    Vec3 v{gaussian(rng), gaussian(rng), gaussian(rng)};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

/// Surface of an axis-aligned box with half extents h, area-uniform.
inline Vec3 sample_box(Rng& rng, const Vec3& h) {
  const double areas[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};  // faces normal to x, y, z
  const double u = uniform_real(rng, 0.0, areas[0] + areas[1] + areas[2]);
  const int axis = u < areas[0] ? 0 : u < areas[0] + areas[1] ? 1 : 2;
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = uniform_real(rng, -h[a], h[a]);
  p[axis] = uniform_real(rng, 0.0, 1.0) < 0.5 ? -h[axis] : h[axis];
  return p;
}

/// Closed cylinder along z with radius r and half height hh, area-uniform.
inline Vec3 sample_cylinder(Rng& rng, double r, double hh) {
  const double side = 2.0 * std::numbers::pi * r * 2.0 * hh;
  const double caps = 2.0 * std::numbers::pi * r * r;
  const double t = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
  if (uniform_real(rng, 0.0, side + caps) < side) return {r * std::cos(t), r * std::sin(t), uniform_real(rng, -hh, hh)};
  const double rho = r * std::sqrt(uniform_real(rng, 0.0, 1.0));
  return {rho * std::cos(t), rho * std::sin(t), uniform_real(rng, 0.0, 1.0) < 0.5 ? -hh : hh};
}

/// Torus around z with major radius R and tube radius r, area-uniform by
/// rejection on the tube angle.
inline Vec3 sample_torus(Rng& rng, double R, double r) {
  for (;;) {
    const double u = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
    const double v = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
    if (uniform_real(rng, 0.0, R + r) <= R + r * std::cos(v))
      return {(R + r * std::cos(v)) * std::cos(u), (R + r * std::cos(v)) * std::sin(u), r * std::sin(v)};
  }
}

inline std::array<double, 9> random_rotation(Rng& rng) {
  // uniform rotation from a random unit quaternion
  double q[4];
  double n = 0.0;
  do {
    n = 0.0;
    for (auto& c : q) {
      c = gaussian(rng);
      n += c * c;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  for (auto& c : q) c /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

}  // namespace detail

/// One synthetic cloud. Each shape is generated centered at the origin with
/// its farthest surface point at radius 1, then jittered.
inline PointCloud synth_shape(const std::string& family, std::size_t points, double jitter, double variation,
                              bool random_pose, Rng& rng) {
  auto vary = [&](double base) { return base * (1.0 + uniform_real(rng, -variation, variation)); };
  std::vector<Vec3> pts(points);
  if (family == "sphere") {
    for (auto& p : pts) p = detail::sample_sphere(rng);
  } else if (family == "cube") {
    Vec3 h{vary(1.0), vary(1.0), vary(1.0)};
    const double s = 1.0 / std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
    for (auto& c : h) c *= s;
    for (auto& p : pts) p = detail::sample_box(rng, h);
  } else if (family == "cylinder") {
    double r = 1.0, hh = vary(1.0);
    const double s = 1.0 / std::sqrt(r * r + hh * hh);
    r *= s;
    hh *= s;
    for (auto& p : pts) p = detail::sample_cylinder(rng, r, hh);
  } else if (family == "torus") {
    const double tube = vary(0.35);
    const double R = 1.0 - tube;
    for (auto& p : pts) p = detail::sample_torus(rng, R, tube);
  } else {
    fail(ErrorKind::Config, "unknown synth family '" + family + "'");
  }
  if (random_pose) {
    const auto m = detail::random_rotation(rng);
    for (auto& p : pts) p = {m[0] * p[0] + m[1] * p[1] + m[2] * p[2], m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
                             m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
  }
  if (jitter > 0.0)
    for (auto& p : pts)
      for (auto& c : p) c += jitter * detail::gaussian(rng);
  return PointCloud(std::move(pts));
}

/// Writes `<out>/<family>/<family>_<i>.xyz` for every sample plus
/// `<out>/manifest.tsv`; the last test_fraction of each family is the test
/// split.
inline DatasetManifest synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  DatasetManifest m;
  m.root = out_dir;
  m.labels = spec.families;
  const auto test_count = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(spec.per_family) + 1e-9));
  for (std::size_t f = 0; f < spec.families.size(); ++f) {
    const auto& fam = spec.families[f];
    fs::create_directories(fs::path(out_dir) / fam);
    for (std::size_t i = 0; i < spec.per_family; ++i) {
      Rng rng(derive_seed(spec.seed, f, i));
      const auto cloud = synth_shape(fam, spec.points, spec.jitter, spec.variation, spec.random_pose, rng);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.xyz", fam.c_str(), i);
      const std::string rel = fam + "/" + name;
      write_cloud((fs::path(out_dir) / rel).string(), cloud, CloudFormat::Xyz);
      m.entries.push_back({rel, fam, i + test_count < spec.per_family ? "train" : "test"});
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

}  // namespace pma2e
