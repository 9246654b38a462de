#pragma once

// TEN1 tensor files: magic "TEN1", u8 rank, rank x little-endian u32 extents,
// then row-major payload as little-endian f32 or u8. The element type is not
// stored; readers infer it from the payload length.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace xb {

enum class TenType { f32, u8 };

struct TenHeader {
  std::vector<std::uint32_t> dims;
  std::size_t count() const;
  std::size_t header_bytes() const { return 5 + 4 * dims.size(); }
};

void write_ten(std::ostream& out, std::span<const std::uint32_t> dims,
               std::span<const float> values);
void write_ten(std::ostream& out, std::span<const std::uint32_t> dims,
               std::span<const std::uint8_t> values);

TenHeader read_ten_header(std::istream& in);
/// Reads a header plus an f32 payload (stream formats where the type is known).
std::vector<float> read_ten_f32(std::istream& in, TenHeader* header = nullptr);

/// Whole-file tensor with inferred element type.
struct TenArray {
  TenType type = TenType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

void save_ten(const std::filesystem::path& path,
              std::span<const std::uint32_t> dims, std::span<const float> values);
void save_ten(const std::filesystem::path& path,
              std::span<const std::uint32_t> dims,
              std::span<const std::uint8_t> values);
TenArray load_ten(const std::filesystem::path& path);

/// Streams rows of a tensor whose extents are known up front.
class TenWriter {
 public:
  TenWriter(const std::filesystem::path& path, std::vector<std::uint32_t> dims,
            TenType type);
  ~TenWriter();
  TenWriter(const TenWriter&) = delete;
  TenWriter& operator=(const TenWriter&) = delete;

  void append(std::span<const float> values);
  void append(std::span<const std::uint8_t> values);
  /// Flushes and verifies that exactly the declared element count was written.
  void close();

 private:
  struct Impl;
  Impl* impl_;
};

/// Read-only memory-mapped TEN1 file. Rows are indexed along the first extent.
class MappedTen {
 public:
  explicit MappedTen(const std::filesystem::path& path);
  ~MappedTen();
  MappedTen(MappedTen&& other) noexcept;
  MappedTen& operator=(MappedTen&& other) noexcept;
  MappedTen(const MappedTen&) = delete;
  MappedTen& operator=(const MappedTen&) = delete;

  TenType type() const { return type_; }
  const std::vector<std::uint32_t>& dims() const { return header_.dims; }
  std::size_t rows() const { return header_.dims.empty() ? 0 : header_.dims[0]; }
  std::size_t row_size() const;

  void copy_row(std::size_t row, std::span<float> out) const;
  void copy_row(std::size_t row, std::span<std::uint8_t> out) const;

 private:
  const unsigned char* payload() const;
  TenHeader header_;
  TenType type_ = TenType::f32;
  void* base_ = nullptr;
  std::size_t length_ = 0;
};

}  // namespace xb
