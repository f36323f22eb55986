#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hapfuse {

/// Flat binary array container used for datasets and checkpoints.
///
/// Layout (all integers little-endian):
///   bytes 0..3    magic "MMEP"
///   byte  4       format version (1)
///   byte  5       dtype: 1 = float32, 2 = uint64
///   bytes 6..7    rank (uint16)
///   bytes 8..15   element count (uint64)
///   then rank x uint32 dims, then the payload.
struct ArrayF32 {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t elem_count() const;
};

struct ArrayU64 {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint64_t> data;
};

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void append_f32(std::vector<std::uint8_t>& out, float v);

/// Serialize into an in-memory buffer (appended to `out`).
void encode_array(std::vector<std::uint8_t>& out, const ArrayF32& a);
void encode_array(std::vector<std::uint8_t>& out, const ArrayU64& a);

/// Decode one array starting at `offset`; advances `offset` past it.
ArrayF32 decode_array_f32(const std::vector<std::uint8_t>& buf, std::size_t& offset);
ArrayU64 decode_array_u64(const std::vector<std::uint8_t>& buf, std::size_t& offset);

/// Peek the dtype byte of the array at `offset` without consuming it.
std::uint8_t peek_dtype(const std::vector<std::uint8_t>& buf, std::size_t offset);

void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

void write_array_file(const std::filesystem::path& path, const ArrayF32& a);
ArrayF32 read_array_file_f32(const std::filesystem::path& path);

/// FNV-1a 64 digest of a file's bytes, as 16 hex chars. Integrity check,
/// not cryptographic.
std::string file_digest(const std::filesystem::path& path);
std::string bytes_digest(const std::vector<std::uint8_t>& bytes);
std::string hex64(std::uint64_t v);

}  // namespace hapfuse
