#include "hapfuse/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hapfuse/rng.hpp"

namespace hapfuse {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'E', 'P'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU64 = 2;

std::uint16_t read_u16(const std::uint8_t* p) {
  return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8;
}

std::uint32_t read_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t read_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

struct Header {
  std::uint8_t dtype = 0;
  std::vector<std::uint32_t> dims;
  std::uint64_t count = 0;
};

Header decode_header(const std::vector<std::uint8_t>& buf, std::size_t& offset) {
  if (offset + 16 > buf.size()) throw std::runtime_error("array header truncated");
  const std::uint8_t* p = buf.data() + offset;
  if (std::memcmp(p, kMagic, 4) != 0) throw std::runtime_error("bad array magic");
  if (p[4] != kVersion) throw std::runtime_error("unsupported array version");
  Header h;
  h.dtype = p[5];
  const std::uint16_t rank = read_u16(p + 6);
  h.count = read_u64(p + 8);
  offset += 16;
  if (offset + 4 * std::size_t(rank) > buf.size())
    throw std::runtime_error("array dims truncated");
  std::uint64_t prod = 1;
  for (std::uint16_t i = 0; i < rank; ++i) {
    h.dims.push_back(read_u32(buf.data() + offset));
    offset += 4;
    prod *= h.dims.back();
  }
  if (prod != h.count) throw std::runtime_error("array dims/count mismatch");
  return h;
}

void append_header(std::vector<std::uint8_t>& out, std::uint8_t dtype,
                   const std::vector<std::uint32_t>& dims, std::uint64_t count) {
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(dtype);
  append_u16(out, static_cast<std::uint16_t>(dims.size()));
  append_u64(out, count);
  for (std::uint32_t d : dims) append_u32(out, d);
}

}  // namespace

std::size_t ArrayF32::elem_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

void encode_array(std::vector<std::uint8_t>& out, const ArrayF32& a) {
  if (a.elem_count() != a.data.size())
    throw std::runtime_error("array dims/data mismatch");
  append_header(out, kDtypeF32, a.dims, a.data.size());
  for (float v : a.data) append_f32(out, v);
}

void encode_array(std::vector<std::uint8_t>& out, const ArrayU64& a) {
  std::size_t n = 1;
  for (auto d : a.dims) n *= d;
  if (n != a.data.size()) throw std::runtime_error("array dims/data mismatch");
  append_header(out, kDtypeU64, a.dims, a.data.size());
  for (std::uint64_t v : a.data) append_u64(out, v);
}

ArrayF32 decode_array_f32(const std::vector<std::uint8_t>& buf, std::size_t& offset) {
  Header h = decode_header(buf, offset);
  if (h.dtype != kDtypeF32) throw std::runtime_error("expected float32 array");
  if (offset + 4 * h.count > buf.size()) throw std::runtime_error("array payload truncated");
  ArrayF32 a;
  a.dims = h.dims;
  a.data.resize(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    std::uint32_t bits = read_u32(buf.data() + offset);
    offset += 4;
    std::memcpy(&a.data[i], &bits, 4);
  }
  return a;
}

ArrayU64 decode_array_u64(const std::vector<std::uint8_t>& buf, std::size_t& offset) {
  Header h = decode_header(buf, offset);
  if (h.dtype != kDtypeU64) throw std::runtime_error("expected uint64 array");
  if (offset + 8 * h.count > buf.size()) throw std::runtime_error("array payload truncated");
  ArrayU64 a;
  a.dims = h.dims;
  a.data.resize(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    a.data[i] = read_u64(buf.data() + offset);
    offset += 8;
  }
  return a;
}

std::uint8_t peek_dtype(const std::vector<std::uint8_t>& buf, std::size_t offset) {
  if (offset + 6 > buf.size()) throw std::runtime_error("array header truncated");
  return buf[offset + 5];
}

void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open for read: " + path.string());
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("read failed: " + path.string());
  return bytes;
}

void write_array_file(const std::filesystem::path& path, const ArrayF32& a) {
  std::vector<std::uint8_t> buf;
  buf.reserve(32 + 4 * a.data.size());
  encode_array(buf, a);
  write_file_bytes(path, buf);
}

ArrayF32 read_array_file_f32(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  ArrayF32 a = decode_array_f32(bytes, offset);
  if (offset != bytes.size()) throw std::runtime_error("trailing bytes in " + path.string());
  return a;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string bytes_digest(const std::vector<std::uint8_t>& bytes) {
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::string file_digest(const std::filesystem::path& path) {
  return bytes_digest(read_file_bytes(path));
}

}  // namespace hapfuse
