#include <doctest.h>

#include <numeric>

#include "spfann/page_store.hpp"
#include "support.hpp"

using namespace spf;

namespace {

std::vector<std::byte> pattern(std::size_t n, int salt) {
  std::vector<std::byte> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::byte>((i * 31 + salt) & 0xFF);
  return v;
}

std::uintmax_t write_one(const std::filesystem::path& p, std::size_t bytes) {
  PageWriter w(p);
  w.write_blob(pattern(bytes, 1));
  w.close();
  return std::filesystem::file_size(p);
}

}  // namespace

TEST_SUITE("page_store") {
  TEST_CASE("blobs are zero-padded to whole pages") {
    test::TempDir dir("pages");
    CHECK(kPageSize == 4096);
    CHECK(write_one(dir / "a", 100) == 4096);
    CHECK(write_one(dir / "b", 4096) == 4096);
    CHECK(write_one(dir / "c", 4097) == 8192);

    IoCounters ctr;
    const auto f = PageFile::open(dir / "a");
    const auto page = f.read_pages(0, 1, ctr);
    const auto want = pattern(100, 1);
    CHECK(std::equal(want.begin(), want.end(), page.begin()));
    CHECK(std::all_of(page.begin() + 100, page.end(), [](std::byte b) { return b == std::byte{0}; }));
  }

  TEST_CASE("reads count logical pages and respect bounds") {
    test::TempDir dir("pages");
    PageWriter w(dir / "f");
    CHECK(w.write_blob(pattern(4096, 1)) == 0);
    CHECK(w.write_blob(pattern(10, 2)) == 1);
    w.close();
    const auto f = PageFile::open(dir / "f");
    REQUIRE(f.total_pages() == 2);

    IoCounters ctr;
    const auto first = f.read_pages(0, 1, ctr);
    CHECK(first.size() == 4096);
    CHECK(first == pattern(4096, 1));
    CHECK(ctr.pages_read == 1);

    f.read_pages(1, 1, ctr);
    f.read_pages(0, 1, ctr);
    CHECK(ctr.pages_read == 3);
    CHECK_THROWS_AS(f.read_pages(2, 1, ctr), BoundsError);
    CHECK_THROWS_AS(f.read_pages(1, 2, ctr), BoundsError);
    CHECK(ctr.pages_read == 3);
  }

  TEST_CASE("repeated reads return identical bytes and add up") {
    test::TempDir dir("pages");
    PageWriter w(dir / "f");
    for (int i = 0; i < 8; ++i) w.write_blob(pattern(4096, i));
    w.close();
    const auto f = PageFile::open(dir / "f");
    IoCounters ctr;
    Rng rng(3);
    std::uint64_t expected = 0;
    for (int i = 0; i < 200; ++i) {
      const auto start = rng.below(8);
      const auto n = 1 + rng.below(8 - start);
      const auto a = f.read_pages(start, n, ctr);
      const auto b = f.read_pages(start, n, ctr);
      CHECK(a == b);
      expected += 2 * n;
    }
    CHECK(ctr.pages_read == expected);
  }

  TEST_CASE("snapshot_and_reset") {
    IoCounters ctr;
    CHECK(snapshot_and_reset(ctr) == IoCounters{});

    test::TempDir dir("pages");
    PageWriter w(dir / "f");
    w.write_blob(pattern(8192, 0));
    w.close();
    const auto f = PageFile::open(dir / "f");
    f.read_pages(0, 2, ctr);
    const auto snap = snapshot_and_reset(ctr);
    CHECK(snap.pages_read == 2);
    CHECK(snap.records_fetched == 0);
    CHECK(snapshot_and_reset(ctr) == IoCounters{});
  }

  TEST_CASE("truncated files are rejected") {
    test::TempDir dir("pages");
    const auto bytes = pattern(100, 0);
    write_file(dir / "short", bytes);
    CHECK_THROWS_AS(PageFile::open(dir / "short"), CorruptionError);
    CHECK_THROWS_AS(PageFile::open(dir / "missing"), StorageError);
  }

  TEST_CASE("byte reader bounds") {
    ByteWriter w;
    w.put(std::uint32_t{7});
    w.put(1.5f);
    ByteReader r(w.bytes());
    CHECK(r.get<std::uint32_t>() == 7);
    CHECK(r.get<float>() == 1.5f);
    CHECK_THROWS_AS(r.get<std::uint8_t>(), CorruptionError);
  }
}
