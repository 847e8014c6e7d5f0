#include "land/io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace land {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

struct Reader {
  const std::string& buf;
  std::string file;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw FormatError(concat(file, ": truncated at byte offset ", pos, " reading ", what, " (expected ", pos + n,
                               " bytes, file has ", buf.size(), ")"));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  void magic(const char* m) {
    need(8, "magic");
    if (buf.compare(0, 8, m) != 0) throw FormatError(concat(file, ": bad magic at byte offset 0 (expected ", m, ")"));
    pos = 8;
  }
  int dim(const char* what) {
    const std::uint32_t v = u32(what);
    if (v == 0 || v > (1u << 16)) {
      throw FormatError(concat(file, ": implausible ", what, " ", v, " at byte offset ", pos - 4));
    }
    return int(v);
  }
  void expect_exact(std::size_t payload) const {
    if (buf.size() != pos + payload) {
      throw FormatError(concat(file, ": expected ", pos + payload, " bytes, file has ", buf.size(),
                               buf.size() < pos + payload ? " (truncated)" : " (trailing data)"));
    }
  }
};

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(concat("cannot open ", tmp.string(), " for writing"));
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw FormatError(concat("write failed for ", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(concat("cannot open ", path.string()));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Volume round_to_float(const Volume& v) {
  Volume out = v;
  for (double& x : out.storage()) x = double(float(x));
  return out;
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  validate_shape(v.shape());
  require_finite(v, "write_volume");
  std::string out = "LANDVOL1";
  put_u32(out, kFormatVersion);
  for (int d : {v.channels(), v.depth(), v.height(), v.width()}) put_u32(out, std::uint32_t(d));
  out.reserve(out.size() + 4 * v.size());
  for (double x : v.values()) put_u32(out, std::bit_cast<std::uint32_t>(float(x)));
  write_file_atomic(path, out);
}

Volume read_volume(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Reader r{buf, path.string()};
  r.magic("LANDVOL1");
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) throw FormatError(concat(path.string(), ": unsupported volume version ", version));
  Shape s;
  s.c = r.dim("channels");
  s.d = r.dim("depth");
  s.h = r.dim("height");
  s.w = r.dim("width");
  if (s.size() > (std::size_t(1) << 31)) throw FormatError(concat(path.string(), ": dims overflow ", s.str()));
  r.expect_exact(4 * s.size());
  Volume v(s);
  for (std::size_t i = 0; i < s.size(); ++i) v[i] = double(std::bit_cast<float>(r.u32("payload")));
  require_finite(v, "read_volume");
  return v;
}

void write_mask(const std::filesystem::path& path, const MaskVolume& m) {
  m.validate();
  std::string out = "LANDMSK1";
  put_u32(out, kFormatVersion);
  for (int d : {m.d, m.h, m.w}) put_u32(out, std::uint32_t(d));
  out.append(reinterpret_cast<const char*>(m.labels.data()), m.labels.size());
  write_file_atomic(path, out);
}

MaskVolume read_mask(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Reader r{buf, path.string()};
  r.magic("LANDMSK1");
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) throw FormatError(concat(path.string(), ": unsupported mask version ", version));
  const int d = r.dim("depth"), h = r.dim("height"), w = r.dim("width");
  MaskVolume m(d, h, w);
  r.expect_exact(m.labels.size());
  std::copy(buf.begin() + std::ptrdiff_t(r.pos), buf.end(), reinterpret_cast<char*>(m.labels.data()));
  m.validate();
  return m;
}

}  // namespace land
