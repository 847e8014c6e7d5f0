#pragma once

#include <filesystem>

#include "land/mask.hpp"
#include "land/volume.hpp"

namespace land {

// "LANDVOL1" | u32 version | u32 C, D, H, W | f32 payload, little-endian.
// Values are stored as float; a volume already at float precision round-trips
// bitwise.
void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

// "LANDMSK1" | u32 version | u32 D, H, W | u8 labels, z-major.
void write_mask(const std::filesystem::path& path, const MaskVolume& m);
MaskVolume read_mask(const std::filesystem::path& path);

// Rounds every voxel to float precision (what write_volume stores).
Volume round_to_float(const Volume& v);

// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace land
