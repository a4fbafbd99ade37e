#include "spfann/page_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <fstream>
#include <string>
#include <utility>

namespace spf {

namespace {

std::string errno_text() { return std::strerror(errno); }

}  // namespace

IoCounters snapshot_and_reset(IoCounters& ctr) {
  IoCounters out = ctr;
  ctr = IoCounters{};
  return out;
}

PageFile PageFile::open(const std::filesystem::path& path) {
  PageFile f;
  f.path_ = path;
  f.fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (f.fd_ < 0) throw StorageError("cannot open " + path.string() + ": " + errno_text());
  struct stat st {};
  if (::fstat(f.fd_, &st) != 0) throw StorageError("cannot stat " + path.string());
  const auto size = static_cast<std::uint64_t>(st.st_size);
  if (size % kPageSize != 0) {
    throw CorruptionError(path.string() + ": length " + std::to_string(size) +
                          " is not a multiple of the page size");
  }
  f.total_pages_ = size / kPageSize;
  return f;
}

PageFile::PageFile(PageFile&& o) noexcept
    : path_(std::move(o.path_)), fd_(std::exchange(o.fd_, -1)), total_pages_(o.total_pages_) {}

PageFile& PageFile::operator=(PageFile&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    path_ = std::move(o.path_);
    fd_ = std::exchange(o.fd_, -1);
    total_pages_ = o.total_pages_;
  }
  return *this;
}

PageFile::~PageFile() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<std::byte> PageFile::read_pages(std::uint64_t start_page, std::uint64_t n_pages,
                                            IoCounters& ctr) const {
  std::vector<std::byte> out(n_pages * kPageSize);
  read_pages_into(start_page, n_pages, out, ctr);
  return out;
}

void PageFile::read_pages_into(std::uint64_t start_page, std::uint64_t n_pages,
                               std::span<std::byte> out, IoCounters& ctr) const {
  if (start_page > total_pages_ || n_pages > total_pages_ - start_page) {
    throw BoundsError("read of pages [" + std::to_string(start_page) + ", " +
                      std::to_string(start_page + n_pages) + ") beyond " +
                      std::to_string(total_pages_) + " pages in " + path_.string());
  }
  if (out.size() != n_pages * kPageSize) throw ShapeError("read buffer has the wrong size");
  std::size_t done = 0;
  const auto offset = static_cast<off_t>(start_page * kPageSize);
  while (done < out.size()) {
    const ssize_t got = ::pread(fd_, out.data() + done, out.size() - done,
                                offset + static_cast<off_t>(done));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw StorageError("read failed on " + path_.string() + ": " + errno_text());
    }
    if (got == 0) throw CorruptionError("short read on " + path_.string());
    done += static_cast<std::size_t>(got);
  }
  ctr.pages_read += n_pages;
}

PageWriter::PageWriter(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd_ < 0) throw StorageError("cannot create " + path.string() + ": " + errno_text());
}

PageWriter::~PageWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void PageWriter::close() {
  if (fd_ >= 0 && ::close(std::exchange(fd_, -1)) != 0) {
    throw StorageError("close failed on " + path_.string() + ": " + errno_text());
  }
}

std::uint64_t PageWriter::write_blob(std::span<const std::byte> bytes) {
  if (fd_ < 0) throw StorageError("write to closed file " + path_.string());
  const std::uint64_t first = pages_written_;
  const std::uint64_t n_pages = pages_for_bytes(bytes.size());
  std::vector<std::byte> padded;
  std::span<const std::byte> out = bytes;
  if (bytes.size() != n_pages * kPageSize) {
    padded.assign(bytes.begin(), bytes.end());
    padded.resize(n_pages * kPageSize, std::byte{0});
    out = padded;
  }
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t put = ::write(fd_, out.data() + done, out.size() - done);
    if (put < 0) {
      if (errno == EINTR) continue;
      throw StorageError("write failed on " + path_.string() + ": " + errno_text());
    }
    done += static_cast<std::size_t>(put);
  }
  pages_written_ += n_pages;
  return first;
}

void ByteReader::expect_magic(const Magic& m, std::string_view what) {
  Magic got{};
  get_array(std::span<char>(got.data(), got.size()));
  if (got == m) return;
  // The trailing byte of every magic is its format version.
  if (std::equal(got.begin(), got.end() - 1, m.begin())) {
    throw CorruptionError(std::string(what) + ": unsupported format version '" +
                          std::string(1, got.back()) + "'");
  }
  throw CorruptionError(std::string(what) + ": bad magic");
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw StorageError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> out(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!in) throw CorruptionError("short read on " + path.string());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StorageError("write failed on " + path.string());
}

}  // namespace spf
