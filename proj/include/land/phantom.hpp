#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "land/mask.hpp"
#include "land/rng.hpp"
#include "land/volume.hpp"

namespace land {

struct PhantomConfig {
  int depth = 64;
  int height = 64;
  int width = 64;
  double body = 0.1;
  double lung = -0.7;
  double background = -1.0;
  double solid = 0.3;
  int min_nodules = 0;
  int max_nodules = 3;
  double min_radius = 2.0;
  double max_radius = 6.0;
  // Gaussian edge width in voxels.
  double softness = 0.6;
  // Relative jitter of every ellipsoid semi-axis.
  double jitter = 0.05;

  void validate() const;
  // Smallest lung semi-axis before jitter.
  double lung_minor_semi_axis() const;
};

struct Ellipsoid {
  std::array<double, 3> center{};  // z, y, x
  std::array<double, 3> semi{};
  // |(p - c) / semi|; <= 1 inside.
  double radial(double z, double y, double x) const;
  // Approximate signed distance in voxels (negative inside).
  double signed_distance(double z, double y, double x) const;
};

struct Anatomy {
  Ellipsoid body;
  std::array<Ellipsoid, 2> lungs;
};

struct NoduleRecord {
  std::array<int, 3> center{};  // z, y, x voxel
  double radius = 0.0;
  int texture = 1;
  bool operator==(const NoduleRecord&) const = default;
};

struct Phantom {
  Volume volume;
  MaskVolume mask;
  Anatomy anatomy;
  std::vector<NoduleRecord> nodules;
};

// Edge coverage 0.5 * erfc(d / (sigma sqrt 2)); exactly 1 for d <= -3 sigma
// and exactly 0 for d >= 3 sigma.
double soft_coverage(double signed_distance, double sigma);
// (1 - f) * lung + f * solid with f = texture / 5.
double nodule_intensity(const PhantomConfig& cfg, int texture);

Anatomy sample_anatomy(const PhantomConfig& cfg, Rng& rng);
// Deterministic rendering of a given geometry.
Phantom render_phantom(const PhantomConfig& cfg, const Anatomy& anatomy, const std::vector<NoduleRecord>& nodules);
Phantom generate_phantom(const PhantomConfig& cfg, Rng& rng);

// ---- dataset manifest ------------------------------------------------------

struct ManifestRecord {
  std::string volume_path;
  std::string mask_path;
  std::uint64_t seed = 0;
  std::vector<NoduleRecord> nodules;
  bool operator==(const ManifestRecord&) const = default;
};

using DatasetManifest = std::vector<ManifestRecord>;

// Writes <stem>.vol, <stem>.msk and <stem>.json (seed and nodules).
void write_phantom(const std::filesystem::path& dir, const std::string& stem, const Phantom& p, std::uint64_t seed);
// Pairs every *.vol with its *.msk, sorted by filename. Orphans are an error.
DatasetManifest build_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
// Relative paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

// A manifest file, a directory with manifest.jsonl, or a directory of *.vol
// files (sorted by name; masks not required).
std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& path);

}  // namespace land
