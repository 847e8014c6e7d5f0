#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "land/neural.hpp"
#include "land/rng.hpp"

namespace land {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& d);

// git-describe string of the build, embedded in every artifact.
const char* build_id();

// Binary layout (all integers little-endian):
//   "LANDCKPT" | u32 version | 32-byte config hash |
//   repeated { u32 name_len | name | u32 rank | u32 dims[rank] | f32 payload }
struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  Digest config_hash{};
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(std::string_view name) const;
  const CheckpointRecord& get(std::string_view name) const;

  void add(std::string name, std::vector<std::uint32_t> dims, std::span<const double> values);
  void add_scalar(std::string name, double value);
  double scalar(std::string_view name) const;

  // 64-bit integers and strings do not fit a float exactly, so they are
  // spread over 16-bit (resp. 8-bit) chunks, each exact in f32.
  void add_u64(std::string name, std::uint64_t value);
  std::uint64_t u64(std::string_view name) const;
  void add_string(std::string name, std::string_view value);
  std::string string(std::string_view name) const;

  void add_rng(const std::string& name, const Rng& rng);
  Rng rng(std::string_view name) const;
};

// Written to a temporary file and renamed into place, so a reader never sees
// a partial checkpoint.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parameters under "<prefix>.<name>", moments under "<prefix>.<name>.m" and
// ".v", and the optimizer step under "<prefix>.step".
void append_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& ps, bool with_optimizer = true);
void load_params(const Checkpoint& ckpt, const std::string& prefix, ParamSet& ps, bool with_optimizer = true);

void require_hash(const Checkpoint& ckpt, const Digest& expected, const std::string& what);

}  // namespace land
