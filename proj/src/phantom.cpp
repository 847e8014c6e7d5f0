#include "land/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"
#include "land/io.hpp"

namespace land {

using json = nlohmann::json;

namespace {

constexpr std::array<double, 3> kBodySemi{0.45, 0.36, 0.45};
constexpr std::array<double, 3> kLungSemi{0.34, 0.24, 0.15};
constexpr double kLungOffset = 0.2;

}  // namespace

void PhantomConfig::validate() const {
  validate_shape({1, depth, height, width});
  for (double v : {body, lung, background, solid}) {
    if (!(v >= -1.0 && v <= 1.0)) throw ValidationError(concat("phantom intensity ", v, " outside [-1, 1]"));
  }
  if (min_nodules < 0 || max_nodules < min_nodules) {
    throw ValidationError(concat("invalid nodule count range [", min_nodules, ", ", max_nodules, "]"));
  }
  if (!(min_radius > 0 && max_radius >= min_radius)) {
    throw ValidationError(concat("invalid nodule radius range [", min_radius, ", ", max_radius, "]"));
  }
  if (!(softness >= 0 && 3 * softness <= min_radius)) {
    throw ValidationError(concat("edge softness ", softness, " must satisfy 0 <= 3*softness <= min_radius"));
  }
  if (!(jitter >= 0 && jitter < 0.2)) throw ValidationError(concat("jitter ", jitter, " outside [0, 0.2)"));
  if (!(max_radius < lung_minor_semi_axis())) {
    throw ValidationError(concat("max nodule radius ", max_radius, " must be below the lung minor semi-axis ",
                                 lung_minor_semi_axis()));
  }
}

double PhantomConfig::lung_minor_semi_axis() const {
  return std::min({kLungSemi[0] * depth, kLungSemi[1] * height, kLungSemi[2] * width});
}

double Ellipsoid::radial(double z, double y, double x) const {
  const double a = (z - center[0]) / semi[0], b = (y - center[1]) / semi[1], c = (x - center[2]) / semi[2];
  return std::sqrt(a * a + b * b + c * c);
}

double Ellipsoid::signed_distance(double z, double y, double x) const {
  return (radial(z, y, x) - 1.0) * std::min({semi[0], semi[1], semi[2]});
}

double soft_coverage(double d, double sigma) {
  if (sigma <= 0) return d <= 0 ? 1.0 : 0.0;
  if (d <= -3 * sigma) return 1.0;
  if (d >= 3 * sigma) return 0.0;
  return 0.5 * std::erfc(d / (sigma * std::sqrt(2.0)));
}

double nodule_intensity(const PhantomConfig& cfg, int texture) {
  if (texture < 1 || texture > 5) throw ValidationError(concat("texture score ", texture, " outside 1..5"));
  const double f = texture / 5.0;
  return (1.0 - f) * cfg.lung + f * cfg.solid;
}

Anatomy sample_anatomy(const PhantomConfig& cfg, Rng& rng) {
  const std::array<double, 3> dims{double(cfg.depth), double(cfg.height), double(cfg.width)};
  auto jit = [&] { return 1.0 + rng.uniform(-cfg.jitter, cfg.jitter); };
  Anatomy a;
  for (int i = 0; i < 3; ++i) {
    a.body.center[i] = 0.5 * (dims[i] - 1);
    a.body.semi[i] = kBodySemi[i] * dims[i] * jit();
  }
  for (int side = 0; side < 2; ++side) {
    Ellipsoid& l = a.lungs[side];
    l.center = a.body.center;
    l.center[2] += (side == 0 ? -1 : 1) * kLungOffset * dims[2];
    for (int i = 0; i < 3; ++i) l.semi[i] = kLungSemi[i] * dims[i] * jit();
  }
  return a;
}

Phantom render_phantom(const PhantomConfig& cfg, const Anatomy& anatomy, const std::vector<NoduleRecord>& nodules) {
  cfg.validate();
  Phantom p;
  p.anatomy = anatomy;
  p.nodules = nodules;
  p.volume = Volume({1, cfg.depth, cfg.height, cfg.width}, cfg.background);
  p.mask = MaskVolume(cfg.depth, cfg.height, cfg.width);
  std::vector<double> nod_int;
  for (const auto& n : nodules) nod_int.push_back(nodule_intensity(cfg, n.texture));
  const double sigma = cfg.softness;
  auto compose = [](double& v, double s, double target) {
    if (s > 0) v = s * target + (1.0 - s) * v;
  };
  for (int z = 0; z < cfg.depth; ++z) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        double& v = p.volume.at(0, z, y, x);
        std::uint8_t& label = p.mask.at(z, y, x);
        compose(v, soft_coverage(anatomy.body.signed_distance(z, y, x), sigma), cfg.body);
        for (const auto& l : anatomy.lungs) {
          const double d = l.signed_distance(z, y, x);
          compose(v, soft_coverage(d, sigma), cfg.lung);
          if (d <= 0) label = 1;
        }
        for (std::size_t i = 0; i < nodules.size(); ++i) {
          const auto& n = nodules[i];
          const double dz = z - n.center[0], dy = y - n.center[1], dx = x - n.center[2];
          const double d = std::sqrt(dz * dz + dy * dy + dx * dx) - n.radius;
          compose(v, soft_coverage(d, sigma), nod_int[i]);
          if (d <= 0) label = std::uint8_t(n.texture + 1);
        }
      }
    }
  }
  return p;
}

namespace {

// Every voxel within radius + 1 of the center lies inside the lung, and the
// sphere keeps a one-voxel gap to already placed nodules.
bool placement_ok(const PhantomConfig& cfg, const Ellipsoid& lung, const NoduleRecord& n,
                  const std::vector<NoduleRecord>& placed) {
  for (const auto& o : placed) {
    double dist2 = 0;
    for (int i = 0; i < 3; ++i) dist2 += double(n.center[i] - o.center[i]) * (n.center[i] - o.center[i]);
    if (std::sqrt(dist2) <= n.radius + o.radius + 1.0) return false;
  }
  const double reach = n.radius + 1.0;
  const int r = int(std::ceil(reach));
  const std::array<int, 3> dims{cfg.depth, cfg.height, cfg.width};
  for (int dz = -r; dz <= r; ++dz) {
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (std::sqrt(double(dz * dz + dy * dy + dx * dx)) > reach) continue;
        const int z = n.center[0] + dz, y = n.center[1] + dy, x = n.center[2] + dx;
        if (z < 0 || y < 0 || x < 0 || z >= dims[0] || y >= dims[1] || x >= dims[2]) return false;
        if (lung.radial(z, y, x) > 1.0) return false;
      }
    }
  }
  return true;
}

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg, Rng& rng) {
  cfg.validate();
  const Anatomy anatomy = sample_anatomy(cfg, rng);
  const int count = rng.uniform_int(cfg.min_nodules, cfg.max_nodules);
  std::vector<NoduleRecord> nodules;
  for (int k = 0; k < count; ++k) {
    NoduleRecord n;
    n.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    n.texture = rng.uniform_int(1, 5);
    const Ellipsoid& lung = anatomy.lungs[rng.uniform_int(0, 1)];
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      for (int i = 0; i < 3; ++i) {
        n.center[i] = int(std::lround(lung.center[i] + rng.uniform(-1.0, 1.0) * lung.semi[i]));
      }
      placed = placement_ok(cfg, lung, n, nodules);
    }
    if (placed) {
      nodules.push_back(n);
    } else {
      std::cerr << "phantom: nodule " << k << " (radius " << n.radius << ") not placed after 100 tries, skipped\n";
    }
  }
  return render_phantom(cfg, anatomy, nodules);
}

// ---- manifest ----------------------------------------------------------------

namespace {

json nodules_json(const std::vector<NoduleRecord>& nodules) {
  json arr = json::array();
  for (const auto& n : nodules) {
    arr.push_back({{"center", {n.center[0], n.center[1], n.center[2]}}, {"radius", n.radius}, {"texture", n.texture}});
  }
  return arr;
}

std::vector<NoduleRecord> nodules_from_json(const json& arr) {
  std::vector<NoduleRecord> out;
  for (const auto& j : arr) {
    NoduleRecord n;
    const auto& c = j.at("center");
    if (!c.is_array() || c.size() != 3) throw FormatError("nodule center must have 3 coordinates");
    for (int i = 0; i < 3; ++i) n.center[i] = c[i].get<int>();
    n.radius = j.at("radius").get<double>();
    n.texture = j.at("texture").get<int>();
    if (n.texture < 1 || n.texture > 5) throw FormatError(concat("nodule texture ", n.texture, " outside 1..5"));
    out.push_back(n);
  }
  return out;
}

}  // namespace

void write_phantom(const std::filesystem::path& dir, const std::string& stem, const Phantom& p, std::uint64_t seed) {
  write_volume(dir / (stem + ".vol"), p.volume);
  write_mask(dir / (stem + ".msk"), p.mask);
  const json side = {{"seed", seed}, {"nodules", nodules_json(p.nodules)}};
  write_file_atomic(dir / (stem + ".json"), side.dump(2) + "\n");
}

DatasetManifest build_manifest(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError(concat(dir.string(), " is not a directory"));
  std::set<std::string> vols, msks;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".vol") vols.insert(e.path().stem().string());
    if (ext == ".msk") msks.insert(e.path().stem().string());
  }
  std::vector<std::string> orphans;
  for (const auto& v : vols)
    if (!msks.count(v)) orphans.push_back(v + ".vol");
  for (const auto& m : msks)
    if (!vols.count(m)) orphans.push_back(m + ".msk");
  if (!orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += (list.empty() ? "" : ", ") + o;
    throw ValidationError(concat(dir.string(), ": unpaired files: ", list));
  }
  DatasetManifest m;
  for (const auto& stem : vols) {
    ManifestRecord r;
    r.volume_path = (dir / (stem + ".vol")).string();
    r.mask_path = (dir / (stem + ".msk")).string();
    const auto side = dir / (stem + ".json");
    if (std::filesystem::exists(side)) {
      const json j = json::parse(read_file(side));
      r.seed = j.value("seed", std::uint64_t(0));
      if (j.contains("nodules")) r.nodules = nodules_from_json(j["nodules"]);
    }
    m.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::string out;
  for (const auto& r : m) {
    const json j = {{"volume_path", r.volume_path},
                    {"mask_path", r.mask_path},
                    {"seed", r.seed},
                    {"nodules", nodules_json(r.nodules)}};
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError(concat("cannot open manifest ", path.string()));
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path q(p);
    return (q.is_absolute() || base.empty()) ? q.string() : (base / q).string();
  };
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.volume_path = resolve(j.at("volume_path").get<std::string>());
      r.mask_path = j.contains("mask_path") ? resolve(j["mask_path"].get<std::string>()) : "";
      r.seed = j.value("seed", std::uint64_t(0));
      if (j.contains("nodules")) r.nodules = nodules_from_json(j["nodules"]);
      m.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(concat(path.string(), ":", lineno, ": ", e.what()));
    }
  }
  return m;
}

std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_regular_file(path)) {
    for (const auto& r : load_manifest(path)) out.emplace_back(r.volume_path);
    return out;
  }
  if (!std::filesystem::is_directory(path)) throw ValidationError(concat(path.string(), " does not exist"));
  if (std::filesystem::exists(path / "manifest.jsonl")) return list_volumes(path / "manifest.jsonl");
  for (const auto& e : std::filesystem::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".vol") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace land
