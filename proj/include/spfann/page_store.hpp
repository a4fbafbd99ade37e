#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string_view>
#include <type_traits>
#include <vector>

#include "spfann/errors.hpp"

namespace spf {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and written with memcpy");

inline constexpr std::size_t kPageSize = 4096;

constexpr std::uint64_t pages_for_bytes(std::uint64_t bytes) {
  return (bytes + kPageSize - 1) / kPageSize;
}

// Per-query work counters. Pages are logical: a page requested twice is
// counted twice, whatever the OS cache does.
struct IoCounters {
  std::uint64_t pages_read = 0;
  std::uint64_t records_fetched = 0;
  std::uint64_t pq_distances = 0;
  std::uint64_t approx_checks = 0;
  // Pages read only to look at a node's attributes (strict in-filtering).
  std::uint64_t attr_pages_read = 0;

  IoCounters& operator+=(const IoCounters& o) {
    pages_read += o.pages_read;
    records_fetched += o.records_fetched;
    pq_distances += o.pq_distances;
    approx_checks += o.approx_checks;
    attr_pages_read += o.attr_pages_read;
    return *this;
  }
  friend bool operator==(const IoCounters&, const IoCounters&) = default;
};

// Returns the current values and zeroes `ctr`.
IoCounters snapshot_and_reset(IoCounters& ctr);

using Magic = std::array<char, 8>;

constexpr Magic make_magic(std::string_view s) {
  Magic m{};
  for (std::size_t i = 0; i < m.size() && i < s.size(); ++i) m[i] = s[i];
  return m;
}

// Read-only, page-granular view of one index file. Safe for concurrent
// readers; every read charges the caller's counters.
class PageFile {
 public:
  PageFile() = default;
  static PageFile open(const std::filesystem::path& path);

  PageFile(PageFile&& o) noexcept;
  PageFile& operator=(PageFile&& o) noexcept;
  PageFile(const PageFile&) = delete;
  PageFile& operator=(const PageFile&) = delete;
  ~PageFile();

  std::vector<std::byte> read_pages(std::uint64_t start_page, std::uint64_t n_pages,
                                    IoCounters& ctr) const;
  // Same as read_pages into caller storage of exactly n_pages * kPageSize bytes.
  void read_pages_into(std::uint64_t start_page, std::uint64_t n_pages,
                       std::span<std::byte> out, IoCounters& ctr) const;

  std::uint64_t total_pages() const { return total_pages_; }
  const std::filesystem::path& path() const { return path_; }
  bool is_open() const { return fd_ >= 0; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t total_pages_ = 0;
};

// Build-time append-only writer. Each blob is zero-padded to a page boundary.
class PageWriter {
 public:
  explicit PageWriter(const std::filesystem::path& path);
  PageWriter(const PageWriter&) = delete;
  PageWriter& operator=(const PageWriter&) = delete;
  ~PageWriter();

  // Returns the first page index of the written blob.
  std::uint64_t write_blob(std::span<const std::byte> bytes);
  std::uint64_t pages_written() const { return pages_written_; }
  void close();

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t pages_written_ = 0;
};

// Little-endian serialization into a growable byte buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void put(const T& value) {
    const auto* p = reinterpret_cast<const std::byte*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_magic(const Magic& m) {
    put_bytes(std::as_bytes(std::span<const char>(m.data(), m.size())));
  }
  void put_bytes(std::span<const std::byte> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }
  template <typename T>
  void put_array(std::span<const T> values) {
    put_bytes(std::as_bytes(values));
  }
  void pad_to(std::size_t size) {
    if (buf_.size() < size) buf_.resize(size, std::byte{0});
  }
  void pad_to_page() { pad_to(pages_for_bytes(buf_.size()) * kPageSize); }

  std::size_t size() const { return buf_.size(); }
  std::span<const std::byte> bytes() const { return buf_; }
  std::vector<std::byte> take() { return std::move(buf_); }

 private:
  std::vector<std::byte> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  template <typename T>
  void get_array(std::span<T> out) {
    require(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  void expect_magic(const Magic& m, std::string_view what);
  void skip(std::size_t n) {
    require(n);
    pos_ += n;
  }
  void seek(std::size_t pos) {
    if (pos > bytes_.size()) throw CorruptionError("seek past end of buffer");
    pos_ = pos;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw CorruptionError("truncated record or file");
  }
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

// Whole-file helpers for small sidecar files (codebooks, dataset files).
std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace spf
