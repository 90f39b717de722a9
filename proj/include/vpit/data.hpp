#ifndef VPIT_DATA_HPP
#define VPIT_DATA_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpit/geometry.hpp"
#include "vpit/stream.hpp"

namespace vpit {

/// Raised for malformed or missing input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneConfig {
  int objects = 1;
  Range length{3.6, 4.6};  // w, along the heading
  Range width{1.6, 1.9};   // h
  Range height{1.4, 1.7};  // d
  Range speed{1.0, 3.0};   // m/s
  Range turn_rate{0.0, 0.0};  // rad/s
  Range spawn_distance{6.0, 14.0};  // meters from the sensor
  double ground_z = -1.7;
  double density = 60.0;  // points per m^2 of visible surface
  int clutter = 300;
  double clutter_extent = 20.0;  // clutter is uniform in [-e, e]^2
  double noise = 0.02;
  int frames = 40;
  double data_rate = 10.0;
  std::uint64_t seed = 1;

  void validate() const {
    auto ordered = [](const Range& r) { return r.lo <= r.hi; };
    if (objects < 0 || clutter < 0) throw std::invalid_argument("scene counts must be >= 0");
    if (frames < 1) throw std::invalid_argument("scene needs at least one frame");
    if (!(density > 0.0)) throw std::invalid_argument("surface density must be > 0");
    if (!(data_rate > 0.0)) throw std::invalid_argument("data_rate must be > 0");
    if (!(noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
    if (!ordered(length) || !ordered(width) || !ordered(height) || !ordered(speed) || !ordered(turn_rate) ||
        !ordered(spawn_distance)) {
      throw std::invalid_argument("scene ranges must satisfy lo <= hi");
    }
    if (!(length.lo > 0.0 && width.lo > 0.0 && height.lo > 0.0)) throw std::invalid_argument("object sizes must be > 0");
  }
};

struct ObjectLabel {
  std::int64_t object_id = 0;
  std::string object_class = "Car";
  Box3D box;
};

/// A recorded scene: one cloud and a label list per frame.
struct Sequence {
  std::string name;
  double data_rate = 10.0;
  std::shared_ptr<const std::vector<PointCloud>> clouds;
  std::vector<std::vector<ObjectLabel>> labels;

  std::size_t frames() const { return labels.size(); }
};

namespace detail {

inline double uniform(std::mt19937_64& rng, const Range& r) {
  return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

// Faces of a box in its local frame: outward normal and two half-extent axes.
struct Face {
  std::array<double, 3> center;
  std::array<double, 3> normal;
  std::array<double, 3> u;
  std::array<double, 3> v;
};

inline std::array<Face, 5> box_faces(const Box3D& b) {
  const double hw = b.w / 2, hh = b.h / 2, hd = b.d / 2;
  return {{{{hw, 0, 0}, {1, 0, 0}, {0, hh, 0}, {0, 0, hd}},
           {{-hw, 0, 0}, {-1, 0, 0}, {0, hh, 0}, {0, 0, hd}},
           {{0, hh, 0}, {0, 1, 0}, {hw, 0, 0}, {0, 0, hd}},
           {{0, -hh, 0}, {0, -1, 0}, {hw, 0, 0}, {0, 0, hd}},
           {{0, 0, hd}, {0, 0, 1}, {hw, 0, 0}, {0, hh, 0}}}};
}

}  // namespace detail

/// Samples the sensor-facing surfaces of a box: faces whose outward normal
/// points towards the origin.
inline void sample_box_surface(const Box3D& box, double density, double noise, std::mt19937_64& rng,
                               std::vector<Point3D>& out) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> refl(0.4, 0.9);
  std::normal_distribution<double> jitter(0.0, noise > 0.0 ? noise : 1.0);
  const double c = std::cos(box.alpha), s = std::sin(box.alpha);
  auto to_world = [&](const std::array<double, 3>& p) {
    return std::array<double, 3>{box.x + c * p[0] - s * p[1], box.y + s * p[0] + c * p[1], box.z + p[2]};
  };
  for (const auto& f : detail::box_faces(box)) {
    const auto wc = to_world(f.center);
    const std::array<double, 3> n{c * f.normal[0] - s * f.normal[1], s * f.normal[0] + c * f.normal[1], f.normal[2]};
    const double facing = -(n[0] * wc[0] + n[1] * wc[1] + n[2] * wc[2]);
    if (facing <= 0.0) continue;
    const double lu = 2.0 * std::hypot(f.u[0], f.u[1], f.u[2]);
    const double lv = 2.0 * std::hypot(f.v[0], f.v[1], f.v[2]);
    const auto count = static_cast<std::size_t>(std::llround(density * lu * lv));
    for (std::size_t k = 0; k < count; ++k) {
      const double a = unit(rng), b = unit(rng);
      std::array<double, 3> local{};
      for (int i = 0; i < 3; ++i) local[i] = f.center[i] + a * f.u[i] + b * f.v[i];
      auto p = to_world(local);
      if (noise > 0.0) {
        for (double& q : p) q += jitter(rng);
      }
      out.push_back({p[0], p[1], p[2], refl(rng)});
    }
  }
}

/// Deterministic synthetic scene: boxes on constant-velocity (optionally
/// turning) trajectories, uniform clutter and Gaussian sensor noise.
inline Sequence generate_scene(const SceneConfig& cfg, const std::string& name = "synthetic") {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  struct Mover {
    Box3D box;
    double speed;
    double turn;
  };
  std::vector<Mover> movers;
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  for (int k = 0; k < cfg.objects; ++k) {
    Mover m;
    const double bearing = angle(rng);
    const double dist = detail::uniform(rng, cfg.spawn_distance);
    m.box.w = detail::uniform(rng, cfg.length);
    m.box.h = detail::uniform(rng, cfg.width);
    m.box.d = detail::uniform(rng, cfg.height);
    m.box.x = dist * std::cos(bearing);
    m.box.y = dist * std::sin(bearing);
    m.box.z = cfg.ground_z + m.box.d / 2;
    m.box.alpha = angle(rng);
    m.speed = detail::uniform(rng, cfg.speed);
    m.turn = detail::uniform(rng, cfg.turn_rate);
    movers.push_back(m);
  }

  auto clouds = std::make_shared<std::vector<PointCloud>>();
  Sequence seq;
  seq.name = name;
  seq.data_rate = cfg.data_rate;
  const double dt = 1.0 / cfg.data_rate;
  std::uniform_real_distribution<double> clutter_xy(-cfg.clutter_extent, cfg.clutter_extent);
  std::uniform_real_distribution<double> clutter_z(cfg.ground_z, cfg.ground_z + 2.0);
  std::uniform_real_distribution<double> clutter_i(0.0, 0.5);
  for (int f = 0; f < cfg.frames; ++f) {
    PointCloud cloud;
    cloud.frame_id = f;
    std::vector<ObjectLabel> labels;
    for (std::size_t k = 0; k < movers.size(); ++k) {
      if (f > 0) {
        Box3D& b = movers[k].box;
        b.alpha = normalize_angle(b.alpha + movers[k].turn * dt);
        b.x += movers[k].speed * dt * std::cos(b.alpha);
        b.y += movers[k].speed * dt * std::sin(b.alpha);
      }
      sample_box_surface(movers[k].box, cfg.density, cfg.noise, rng, cloud.points);
      labels.push_back({static_cast<std::int64_t>(k), "Car", movers[k].box});
    }
    for (int c = 0; c < cfg.clutter; ++c) {
      cloud.points.push_back({clutter_xy(rng), clutter_xy(rng), clutter_z(rng), clutter_i(rng)});
    }
    clouds->push_back(std::move(cloud));
    seq.labels.push_back(std::move(labels));
  }
  seq.clouds = std::move(clouds);
  return seq;
}

/// One evaluation sequence per object, spanning the frames in which the
/// object is labeled, cut at the first gap.
inline std::vector<TrackSequence> track_sequences(const Sequence& seq, const GridSpec& grid) {
  std::map<std::int64_t, std::size_t> first;
  for (std::size_t f = 0; f < seq.frames(); ++f) {
    for (const auto& l : seq.labels[f]) first.emplace(l.object_id, f);
  }
  std::vector<TrackSequence> out;
  for (const auto& [id, start] : first) {
    auto clouds = std::make_shared<std::vector<PointCloud>>();
    TrackSequence ts;
    ts.name = seq.name + "/" + std::to_string(id);
    ts.data_rate = seq.data_rate;
    for (std::size_t f = start; f < seq.frames(); ++f) {
      auto it = std::find_if(seq.labels[f].begin(), seq.labels[f].end(),
                             [&](const ObjectLabel& l) { return l.object_id == id; });
      if (it == seq.labels[f].end() || !footprint_intersects_grid(it->box, grid)) break;
      ts.labels.push_back(it->box);
      clouds->push_back((*seq.clouds)[f]);
    }
    ts.clouds = std::move(clouds);
    if (ts.size() >= 2) out.push_back(std::move(ts));
  }
  return out;
}

inline std::vector<Track> tracks_of(const Sequence& seq) {
  std::map<std::int64_t, Track> by_id;
  for (std::size_t f = 0; f < seq.frames(); ++f) {
    for (const auto& l : seq.labels[f]) {
      Track& t = by_id[l.object_id];
      t.track_id = l.object_id;
      t.object_id = l.object_id;
      t.object_class = l.object_class;
      t.frames.push_back({static_cast<std::int64_t>(f), l.box});
    }
  }
  std::vector<Track> out;
  for (auto& [id, t] : by_id) out.push_back(std::move(t));
  return out;
}

// ---------------------------------------------------------------------------
// KITTI formats

inline PointCloud read_kitti_velodyne(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open point cloud: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw DataError(path + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16 bytes");
  }
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  auto f32 = [&](std::size_t off) {
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + off);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return static_cast<double>(std::bit_cast<float>(u));
  };
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    cloud.points.push_back({f32(off), f32(off + 4), f32(off + 8), f32(off + 12)});
  }
  return cloud;
}

inline void write_velodyne(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write point cloud: " + path);
  auto put = [&](double v) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    os.write(b, 4);
  };
  for (const auto& p : cloud.points) {
    put(p.x);
    put(p.y);
    put(p.z);
    put(p.intensity);
  }
  if (!os) throw DataError("failed writing point cloud: " + path);
}

/// KITTI tracking labels. Camera-frame boxes are mapped to the Lidar frame
/// with the nominal axis permutation (x = z_cam, y = -x_cam, z = -y_cam)
/// and no calibration. Rows with track id -1 are skipped. An empty class
/// filter keeps every class.
inline std::vector<Track> read_tracking_labels(std::istream& is, const std::string& class_filter = "Car",
                                               const std::string& source = "<labels>") {
  std::map<std::int64_t, Track> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::int64_t frame = 0, track = 0;
    std::string type;
    double trunc = 0, occ = 0, obs = 0, l = 0, t = 0, r = 0, b = 0, hd = 0, wd = 0, ld = 0, cx = 0, cy = 0, cz = 0,
           ry = 0;
    if (!(ls >> frame >> track >> type >> trunc >> occ >> obs >> l >> t >> r >> b >> hd >> wd >> ld >> cx >> cy >> cz >>
          ry)) {
      throw DataError(source + ":" + std::to_string(line_no) + ": malformed tracking label line");
    }
    if (track < 0 || type == "DontCare") continue;
    if (!class_filter.empty() && type != class_filter) continue;
    if (!(hd > 0 && wd > 0 && ld > 0)) {
      throw DataError(source + ":" + std::to_string(line_no) + ": non-positive box dimensions");
    }
    Box3D box{cz, -cx, -cy + hd / 2, ld, wd, hd, normalize_angle(-ry - kPi / 2)};
    Track& tr = by_id[track];
    tr.track_id = track;
    tr.object_id = track;
    tr.object_class = type;
    tr.frames.push_back({frame, box});
  }
  std::vector<Track> out;
  for (auto& [id, tr] : by_id) {
    std::stable_sort(tr.frames.begin(), tr.frames.end(),
                     [](const Track::Entry& a, const Track::Entry& b) { return a.frame_id < b.frame_id; });
    out.push_back(std::move(tr));
  }
  return out;
}

inline std::vector<Track> read_tracking_labels(const std::string& path, const std::string& class_filter = "Car") {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open label file: " + path);
  return read_tracking_labels(is, class_filter, path);
}

// ---------------------------------------------------------------------------
// Manifest

/// A dataset index on disk. Cloud paths are relative to the manifest's
/// directory. Format (one record per line, '#' comments):
///
///   sequence <name> <frames> <data_rate>
///   frame <index> <cloud path>
///   object <frame> <object id> <class> <x> <y> <z> <w> <h> <d> <alpha>
struct ManifestSequence {
  std::string name;
  double data_rate = 10.0;
  std::vector<std::string> clouds;
  std::vector<std::vector<ObjectLabel>> labels;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestSequence> sequences;
};

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest: " + path);
  os.precision(17);
  os << "# vpit manifest v1\n";
  for (const auto& s : m.sequences) {
    os << "sequence " << s.name << ' ' << s.clouds.size() << ' ' << s.data_rate << '\n';
    for (std::size_t f = 0; f < s.clouds.size(); ++f) {
      os << "frame " << f << ' ' << s.clouds[f] << '\n';
      for (const auto& l : s.labels[f]) {
        const Box3D& b = l.box;
        os << "object " << f << ' ' << l.object_id << ' ' << l.object_class << ' ' << b.x << ' ' << b.y << ' ' << b.z
           << ' ' << b.w << ' ' << b.h << ' ' << b.d << ' ' << b.alpha << '\n';
      }
    }
  }
  if (!os) throw DataError("failed writing manifest: " + path);
}

inline Manifest read_manifest(const std::string& path, bool check_clouds = true) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path);
  Manifest m;
  m.root = std::filesystem::path(path).parent_path();
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "sequence") {
      ManifestSequence s;
      std::size_t frames = 0;
      if (!(ls >> s.name >> frames >> s.data_rate) || !(s.data_rate > 0)) fail("malformed sequence record");
      s.clouds.reserve(frames);
      s.labels.resize(frames);
      m.sequences.push_back(std::move(s));
    } else if (kind == "frame") {
      if (m.sequences.empty()) fail("frame record before any sequence");
      auto& s = m.sequences.back();
      std::size_t idx = 0;
      std::string cloud;
      if (!(ls >> idx >> cloud)) fail("malformed frame record");
      if (idx != s.clouds.size() || idx >= s.labels.size()) fail("frame index out of order or out of range");
      if (check_clouds && !std::filesystem::exists(m.root / cloud)) fail("missing cloud file " + (m.root / cloud).string());
      s.clouds.push_back(cloud);
    } else if (kind == "object") {
      if (m.sequences.empty()) fail("object record before any sequence");
      auto& s = m.sequences.back();
      std::size_t f = 0;
      ObjectLabel l;
      Box3D& b = l.box;
      if (!(ls >> f >> l.object_id >> l.object_class >> b.x >> b.y >> b.z >> b.w >> b.h >> b.d >> b.alpha)) {
        fail("malformed object record");
      }
      if (f >= s.clouds.size()) fail("object refers to unknown frame " + std::to_string(f));
      if (!(b.w > 0 && b.h > 0 && b.d > 0)) fail("non-positive box dimensions");
      s.labels[f].push_back(l);
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  for (const auto& s : m.sequences) {
    if (s.clouds.size() != s.labels.size()) {
      throw DataError(path + ": sequence " + s.name + " declares " + std::to_string(s.labels.size()) +
                      " frames but lists " + std::to_string(s.clouds.size()));
    }
  }
  return m;
}

inline Sequence load_sequence(const Manifest& m, const ManifestSequence& ms) {
  auto clouds = std::make_shared<std::vector<PointCloud>>();
  for (std::size_t f = 0; f < ms.clouds.size(); ++f) {
    PointCloud c = read_kitti_velodyne((m.root / ms.clouds[f]).string());
    c.frame_id = static_cast<std::int64_t>(f);
    clouds->push_back(std::move(c));
  }
  return {ms.name, ms.data_rate, std::move(clouds), ms.labels};
}

inline std::vector<Sequence> load_manifest(const std::string& path) {
  const Manifest m = read_manifest(path);
  std::vector<Sequence> out;
  for (const auto& s : m.sequences) out.push_back(load_sequence(m, s));
  return out;
}

/// Writes the clouds of `seq` under root/<dir>/ and returns its manifest
/// entry.
inline ManifestSequence save_sequence(const Sequence& seq, const std::filesystem::path& root, const std::string& dir) {
  std::filesystem::create_directories(root / dir);
  ManifestSequence ms;
  ms.name = seq.name;
  ms.data_rate = seq.data_rate;
  ms.labels = seq.labels;
  for (std::size_t f = 0; f < seq.frames(); ++f) {
    char file[32];
    std::snprintf(file, sizeof(file), "%06zu.bin", f);
    const std::string rel = dir + "/" + file;
    write_velodyne((root / rel).string(), (*seq.clouds)[f]);
    ms.clouds.push_back(rel);
  }
  return ms;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON records

inline void write_jsonl(std::ostream& os, const nlohmann::json& record) { os << record.dump() << '\n'; }

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json box_json(const Box3D& b) { return {b.x, b.y, b.z, b.w, b.h, b.d, b.alpha}; }

}  // namespace vpit

#endif  // VPIT_DATA_HPP
