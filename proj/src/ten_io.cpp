#include "xaibench/ten_io.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "xaibench/errors.hpp"

namespace xb {
namespace {

static_assert(std::endian::native == std::endian::little,
              "TEN1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'T', 'E', 'N', '1'};

void write_header(std::ostream& out, std::span<const std::uint32_t> dims) {
  if (dims.size() > 255) throw IoError("TEN1: rank exceeds 255");
  out.write(kMagic, 4);
  const auto rank = static_cast<std::uint8_t>(dims.size());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  out.write(reinterpret_cast<const char*>(dims.data()),
            static_cast<std::streamsize>(dims.size() * 4));
}

std::size_t product(std::span<const std::uint32_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t b) { return a * b; });
}

void check_count(std::span<const std::uint32_t> dims, std::size_t n) {
  if (product(dims) != n)
    throw ShapeError("TEN1: payload length " + std::to_string(n) +
                     " does not match extents");
}

}  // namespace

std::size_t TenHeader::count() const { return product(dims); }

void write_ten(std::ostream& out, std::span<const std::uint32_t> dims,
               std::span<const float> values) {
  check_count(dims, values.size());
  write_header(out, dims);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * 4));
  if (!out) throw IoError("TEN1: write failed");
}

void write_ten(std::ostream& out, std::span<const std::uint32_t> dims,
               std::span<const std::uint8_t> values) {
  check_count(dims, values.size());
  write_header(out, dims);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size()));
  if (!out) throw IoError("TEN1: write failed");
}

TenHeader read_ten_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("TEN1: bad magic");
  std::uint8_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 1);
  TenHeader h;
  h.dims.resize(rank);
  in.read(reinterpret_cast<char*>(h.dims.data()), rank * 4);
  if (!in) throw IoError("TEN1: truncated header");
  return h;
}

std::vector<float> read_ten_f32(std::istream& in, TenHeader* header) {
  TenHeader h = read_ten_header(in);
  std::vector<float> values(h.count());
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * 4));
  if (!in) throw IoError("TEN1: truncated payload");
  if (header) *header = std::move(h);
  return values;
}

void save_ten(const std::filesystem::path& path,
              std::span<const std::uint32_t> dims,
              std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_ten(out, dims, values);
}

void save_ten(const std::filesystem::path& path,
              std::span<const std::uint32_t> dims,
              std::span<const std::uint8_t> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_ten(out, dims, values);
}

TenArray load_ten(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  TenHeader h = read_ten_header(in);
  const auto size = std::filesystem::file_size(path);
  const auto payload = size - h.header_bytes();
  const auto n = h.count();
  TenArray t;
  t.dims = h.dims;
  if (payload == n * 4 && n > 0) {
    t.type = TenType::f32;
    t.f32.resize(n);
    in.read(reinterpret_cast<char*>(t.f32.data()),
            static_cast<std::streamsize>(n * 4));
  } else if (payload == n) {
    t.type = TenType::u8;
    t.u8.resize(n);
    in.read(reinterpret_cast<char*>(t.u8.data()),
            static_cast<std::streamsize>(n));
  } else {
    throw IoError("TEN1: payload size of " + path.string() +
                  " matches neither f32 nor u8");
  }
  if (!in) throw IoError("TEN1: truncated payload in " + path.string());
  return t;
}

// --- TenWriter --------------------------------------------------------------

struct TenWriter::Impl {
  std::ofstream out;
  std::filesystem::path path;
  TenType type;
  std::size_t expected = 0;
  std::size_t written = 0;
  bool closed = false;
};

TenWriter::TenWriter(const std::filesystem::path& path,
                     std::vector<std::uint32_t> dims, TenType type)
    : impl_(new Impl) {
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) {
    delete impl_;
    throw IoError("cannot open " + path.string() + " for writing");
  }
  impl_->path = path;
  impl_->type = type;
  impl_->expected = product(dims);
  write_header(impl_->out, dims);
}

TenWriter::~TenWriter() { delete impl_; }

void TenWriter::append(std::span<const float> values) {
  if (impl_->type != TenType::f32) throw IoError("TEN1: appending f32 to u8");
  impl_->out.write(reinterpret_cast<const char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * 4));
  impl_->written += values.size();
}

void TenWriter::append(std::span<const std::uint8_t> values) {
  if (impl_->type != TenType::u8) throw IoError("TEN1: appending u8 to f32");
  impl_->out.write(reinterpret_cast<const char*>(values.data()),
                   static_cast<std::streamsize>(values.size()));
  impl_->written += values.size();
}

void TenWriter::close() {
  if (impl_->closed) return;
  impl_->closed = true;
  impl_->out.close();
  if (!impl_->out) throw IoError("TEN1: write failed for " + impl_->path.string());
  if (impl_->written != impl_->expected)
    throw IoError("TEN1: " + impl_->path.string() + " expected " +
                  std::to_string(impl_->expected) + " elements, got " +
                  std::to_string(impl_->written));
}

// --- MappedTen --------------------------------------------------------------

MappedTen::MappedTen(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw IoError("cannot stat " + path.string());
  }
  length_ = static_cast<std::size_t>(st.st_size);
  if (length_ < 5) {
    ::close(fd);
    throw IoError("TEN1: file too short: " + path.string());
  }
  base_ = ::mmap(nullptr, length_, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  if (base_ == MAP_FAILED) {
    base_ = nullptr;
    throw IoError("cannot map " + path.string());
  }
  const auto* bytes = static_cast<const unsigned char*>(base_);
  if (std::memcmp(bytes, kMagic, 4) != 0) {
    ::munmap(base_, length_);
    base_ = nullptr;
    throw IoError("TEN1: bad magic in " + path.string());
  }
  header_.dims.resize(bytes[4]);
  if (length_ < header_.header_bytes()) {
    ::munmap(base_, length_);
    base_ = nullptr;
    throw IoError("TEN1: truncated header in " + path.string());
  }
  std::memcpy(header_.dims.data(), bytes + 5, header_.dims.size() * 4);
  const auto n = header_.count();
  const auto payload = length_ - header_.header_bytes();
  if (payload == n * 4 && n > 0) {
    type_ = TenType::f32;
  } else if (payload == n) {
    type_ = TenType::u8;
  } else {
    ::munmap(base_, length_);
    base_ = nullptr;
    throw IoError("TEN1: payload size of " + path.string() +
                  " matches neither f32 nor u8");
  }
}

MappedTen::~MappedTen() {
  if (base_) ::munmap(base_, length_);
}

MappedTen::MappedTen(MappedTen&& other) noexcept
    : header_(std::move(other.header_)),
      type_(other.type_),
      base_(other.base_),
      length_(other.length_) {
  other.base_ = nullptr;
  other.length_ = 0;
}

MappedTen& MappedTen::operator=(MappedTen&& other) noexcept {
  if (this != &other) {
    if (base_) ::munmap(base_, length_);
    header_ = std::move(other.header_);
    type_ = other.type_;
    base_ = other.base_;
    length_ = other.length_;
    other.base_ = nullptr;
    other.length_ = 0;
  }
  return *this;
}

std::size_t MappedTen::row_size() const {
  if (header_.dims.empty()) return 0;
  return header_.count() / std::max<std::size_t>(1, header_.dims[0]);
}

const unsigned char* MappedTen::payload() const {
  return static_cast<const unsigned char*>(base_) + header_.header_bytes();
}

void MappedTen::copy_row(std::size_t row, std::span<float> out) const {
  if (type_ != TenType::f32) throw IoError("TEN1: reading f32 row from u8 file");
  if (row >= rows() || out.size() != row_size())
    throw ShapeError("TEN1: row index or buffer size out of range");
  std::memcpy(out.data(), payload() + row * row_size() * 4, out.size() * 4);
}

void MappedTen::copy_row(std::size_t row, std::span<std::uint8_t> out) const {
  if (type_ != TenType::u8) throw IoError("TEN1: reading u8 row from f32 file");
  if (row >= rows() || out.size() != row_size())
    throw ShapeError("TEN1: row index or buffer size out of range");
  std::memcpy(out.data(), payload() + row * row_size(), out.size());
}

}  // namespace xb
