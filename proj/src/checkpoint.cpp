#include "land/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

#ifndef LAND_BUILD_ID
#define LAND_BUILD_ID "unknown"
#endif

namespace land {

Digest sha256(std::string_view bytes) {
  Digest d{};
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) || len != d.size()) {
    throw Error("sha256 failed");
  }
  return d;
}

std::string to_hex(const Digest& d) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : d) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

const char* build_id() { return LAND_BUILD_ID; }

const CheckpointRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const CheckpointRecord& Checkpoint::get(std::string_view name) const {
  const auto* r = find(name);
  if (!r) throw FormatError(concat("checkpoint has no record '", name, "'"));
  return *r;
}

void Checkpoint::add(std::string name, std::vector<std::uint32_t> dims, std::span<const double> values) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  if (n != values.size()) throw ShapeError(concat("checkpoint record '", name, "': dims do not match payload"));
  CheckpointRecord r;
  r.name = std::move(name);
  r.dims = std::move(dims);
  r.data.reserve(values.size());
  for (double v : values) r.data.push_back(float(v));
  records.push_back(std::move(r));
}

void Checkpoint::add_scalar(std::string name, double value) {
  const double v[1] = {value};
  add(std::move(name), {1}, v);
}

double Checkpoint::scalar(std::string_view name) const {
  const auto& r = get(name);
  if (r.data.size() != 1) throw FormatError(concat("record '", name, "' is not a scalar"));
  return r.data[0];
}

void Checkpoint::add_u64(std::string name, std::uint64_t value) {
  double chunks[4];
  for (int i = 0; i < 4; ++i) chunks[i] = double((value >> (16 * i)) & 0xffffu);
  add(std::move(name), {4}, chunks);
}

std::uint64_t Checkpoint::u64(std::string_view name) const {
  const auto& r = get(name);
  if (r.data.size() != 4) throw FormatError(concat("record '", name, "' is not a u64"));
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint64_t(r.data[i]) << (16 * i);
  return v;
}

void Checkpoint::add_string(std::string name, std::string_view value) {
  std::vector<double> bytes(value.begin(), value.end());
  for (auto& b : bytes) b = double(static_cast<unsigned char>(static_cast<char>(b)));
  if (bytes.empty()) bytes.push_back(0.0);
  add(std::move(name), {std::uint32_t(bytes.size())}, bytes);
}

std::string Checkpoint::string(std::string_view name) const {
  std::string s;
  for (float f : get(name).data) {
    if (f != 0.0f) s += static_cast<char>(static_cast<unsigned char>(f));
  }
  return s;
}

void Checkpoint::add_rng(const std::string& name, const Rng& rng) {
  add_u64(name + ".seed", rng.seed());
  add_u64(name + ".counter", rng.counter());
}

Rng Checkpoint::rng(std::string_view name) const {
  const std::string n(name);
  return Rng(u64(n + ".seed"), u64(n + ".counter"));
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw FormatError(concat("checkpoint truncated at byte offset ", pos, " reading ", what, ": need ", n,
                               " bytes, ", buf.size() - pos, " available"));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out = "LANDCKPT";
  put_u32(out, ckpt.version);
  out.append(reinterpret_cast<const char*>(ckpt.config_hash.data()), ckpt.config_hash.size());
  for (const auto& r : ckpt.records) {
    put_u32(out, std::uint32_t(r.name.size()));
    out += r.name;
    put_u32(out, std::uint32_t(r.dims.size()));
    for (auto d : r.dims) put_u32(out, d);
    for (float f : r.data) put_f32(out, f);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(concat("cannot open ", tmp.string(), " for writing"));
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw FormatError(concat("write failed for ", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(concat("cannot open checkpoint ", path.string()));
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(8, "magic");
  if (buf.compare(0, 8, "LANDCKPT") != 0) throw FormatError(concat(path.string(), ": bad magic at byte offset 0"));
  r.pos = 8;
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != Checkpoint::kVersion) {
    throw FormatError(concat(path.string(), ": unsupported checkpoint version ", c.version));
  }
  r.need(32, "config hash");
  std::memcpy(c.config_hash.data(), buf.data() + r.pos, 32);
  r.pos += 32;
  while (r.pos < buf.size()) {
    CheckpointRecord rec;
    const std::uint32_t len = r.u32("name length");
    r.need(len, "name");
    rec.name = buf.substr(r.pos, len);
    r.pos += len;
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError(concat("record '", rec.name, "' has implausible rank ", rank));
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.dims.push_back(r.u32("dims"));
      n *= rec.dims.back();
      if (n > (std::uint64_t(1) << 34)) throw FormatError(concat("record '", rec.name, "' dims overflow"));
    }
    r.need(std::size_t(n) * 4, "payload");
    rec.data.resize(std::size_t(n));
    for (std::size_t i = 0; i < n; ++i) rec.data[i] = std::bit_cast<float>(r.u32("payload"));
    c.records.push_back(std::move(rec));
  }
  return c;
}

namespace {

std::vector<std::uint32_t> dims32(const Tensor& t) {
  return std::vector<std::uint32_t>(t.dims.begin(), t.dims.end());
}

void copy_record(const CheckpointRecord& rec, Tensor& dst) {
  if (rec.dims != dims32(dst)) {
    throw FormatError(concat("record '", rec.name, "' has dims incompatible with ", dst.dims_str()));
  }
  for (std::size_t i = 0; i < rec.data.size(); ++i) dst.data[i] = rec.data[i];
}

}  // namespace

void append_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& ps, bool with_optimizer) {
  for (const auto& p : ps.params()) ckpt.add(prefix + "." + p.name, dims32(p.value), p.value.data);
  if (!with_optimizer) return;
  for (const auto& p : ps.params()) {
    ckpt.add(prefix + "." + p.name + ".m", dims32(p.m), p.m.data);
    ckpt.add(prefix + "." + p.name + ".v", dims32(p.v), p.v.data);
  }
  ckpt.add_scalar(prefix + ".step", double(ps.step()));
}

void load_params(const Checkpoint& ckpt, const std::string& prefix, ParamSet& ps, bool with_optimizer) {
  for (auto& p : ps.params()) {
    copy_record(ckpt.get(prefix + "." + p.name), p.value);
    if (with_optimizer) {
      copy_record(ckpt.get(prefix + "." + p.name + ".m"), p.m);
      copy_record(ckpt.get(prefix + "." + p.name + ".v"), p.v);
    }
  }
  if (with_optimizer) ps.set_step(long(ckpt.scalar(prefix + ".step")));
  ps.zero_grad();
}

void require_hash(const Checkpoint& ckpt, const Digest& expected, const std::string& what) {
  if (ckpt.config_hash != expected) {
    throw ValidationError(concat(what, ": config hash mismatch (checkpoint ", to_hex(ckpt.config_hash),
                                 ", current config ", to_hex(expected), ")"));
  }
}

}  // namespace land
