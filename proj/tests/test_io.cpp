#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "tensormorph/engine.hpp"
#include "tensormorph/error.hpp"
#include "tensormorph/io.hpp"

using namespace tmorph;

namespace {

std::pair<Errc, std::int64_t> error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return {e.code(), e.offset()};
  }
  ADD_FAILURE() << "no error thrown";
  return {Errc::IoError, -2};
}

CanonicalTensor read_text(const std::string& s, MatrixMarketHeader* h = nullptr) {
  std::istringstream in(s);
  return read_mm(in, h);
}

// Little-endian encoder written against the dump layout, independent of the library.
struct Bytes {
  std::vector<std::uint8_t> b;
  void u8(unsigned v) { b.push_back(static_cast<std::uint8_t>(v)); }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<unsigned>((v >> (8 * k)) & 0xff));
  }
  void arr(std::initializer_list<std::int64_t> xs) {
    u64(xs.size());
    for (auto x : xs) u64(static_cast<std::uint64_t>(x));
  }
  void str(const std::string& s) {
    u64(s.size());
    for (char c : s) u8(static_cast<unsigned char>(c));
  }
  void f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    u64(v);
  }
};

}  // namespace

TEST(MatrixMarket, RoundTripIsByteStable) {
  const std::string text =
      "%%MatrixMarket matrix coordinate real general\n"
      "3 4 3\n"
      "1 1 0.5\n"
      "2 4 -3\n"
      "3 2 1e+20\n";
  const auto t = read_text(text);
  ASSERT_EQ(t.nnz(), 3u);
  EXPECT_EQ(t.entries()[1].coord, (Coord{1, 3}));
  std::ostringstream out;
  write_mm(out, t);
  EXPECT_EQ(out.str(), text);
  std::ostringstream again;
  write_mm(again, read_text(out.str()));
  EXPECT_EQ(again.str(), text);
}

TEST(MatrixMarket, ShortestValuesSurvive) {
  const CanonicalTensor t({1, 3}, {{{0, 0}, 0.1}, {{0, 1}, 1.0 / 3.0}, {{0, 2}, -2.5e-300}});
  std::ostringstream out;
  write_mm(out, t);
  EXPECT_EQ(read_text(out.str()).entries(), t.entries());
}

TEST(MatrixMarket, Variants) {
  MatrixMarketHeader h;
  const auto sym = read_text(
      "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 2\n1 1 4\n2 1 3\n", &h);
  EXPECT_EQ(h.symmetry, MatrixMarketHeader::Symmetry::symmetric);
  ASSERT_EQ(sym.nnz(), 3u);
  EXPECT_EQ(sym.entries()[1].coord, (Coord{0, 1}));
  EXPECT_EQ(sym.entries()[1].value, 3.0);

  const auto off = read_text("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n2 1 -1\n");
  ASSERT_EQ(off.nnz(), 2u);
  EXPECT_EQ(off.entries()[0].coord, (Coord{0, 1}));
  EXPECT_EQ(off.entries()[1].coord, (Coord{1, 0}));

  const auto pat = read_text("%%MatrixMarket matrix coordinate pattern general\n2 3 2\n1 3\n2 1\n");
  ASSERT_EQ(pat.nnz(), 2u);
  EXPECT_EQ(pat.entries()[0].value, 1.0);
  EXPECT_EQ(pat.entries()[1].value, 1.0);

  const auto ints = read_text("%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 7\n");
  EXPECT_EQ(ints.entries()[0].value, 7.0);

  // column-major, zeros skipped
  const auto arr = read_text("%%MatrixMarket matrix array real general\n2 2\n1\n0\n3\n4\n");
  ASSERT_EQ(arr.nnz(), 3u);
  EXPECT_EQ(arr.entries()[1].coord, (Coord{0, 1}));
  EXPECT_EQ(arr.entries()[1].value, 3.0);

  const auto dup = read_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n1 1 2\n");
  ASSERT_EQ(dup.nnz(), 1u);
  EXPECT_EQ(dup.entries()[0].value, 3.0);
}

TEST(MatrixMarket, Errors) {
  EXPECT_EQ(error_of([] { read_text("%%MatrixMarket matrix coordinate complex general\n1 1 0\n"); }).first,
            Errc::UnsupportedHeader);
  EXPECT_EQ(error_of([] { read_text("%%MatrixMarket vector coordinate real general\n1 1 0\n"); }).first,
            Errc::UnsupportedHeader);
  EXPECT_EQ(error_of([] { read_text("hello\n"); }).first, Errc::UnsupportedHeader);
  EXPECT_EQ(error_of([] { read_text("%%MatrixMarket matrix coordinate real skew-symmetric\n1 1 0\n"); }).first,
            Errc::UnsupportedHeader);

  const auto bad_num = error_of([] {
    read_text("%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1\n2 x 1\n");
  });
  EXPECT_EQ(bad_num, std::make_pair(Errc::ParseError, std::int64_t{5}));
  const auto range = error_of([] {
    read_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n");
  });
  EXPECT_EQ(range, std::make_pair(Errc::ParseError, std::int64_t{3}));
  const auto few = error_of([] {
    read_text("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n");
  });
  EXPECT_EQ(few.first, Errc::ParseError);
  const auto many = error_of([] {
    read_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1\n2 2 2\n");
  });
  EXPECT_EQ(many, std::make_pair(Errc::ParseError, std::int64_t{4}));
  EXPECT_EQ(error_of([] { read_mm(std::string("/nonexistent/x.mtx")); }).first, Errc::IoError);
}

TEST(Dump, CsrLayoutMatchesHandEncoding) {
  const auto t = canonicalize({{{0, 1}, 2.5}, {{2, 0}, -1}}, {3, 2});
  const auto csr = from_canonical(t, "csr");
  Bytes e;
  for (char c : std::string("TMRL1")) e.u8(static_cast<unsigned char>(c));
  e.arr({3, 2});
  e.str("csr");
  e.u64(0);
  e.u64(2);
  e.u64(0);
  e.u64(1);
  e.u8(1);
  e.u64(2);
  // dense level over 3 rows
  e.u8(0);
  e.u64(3);
  e.u64(0);
  e.u64(static_cast<std::uint64_t>(-1));
  e.u64(static_cast<std::uint64_t>(-1));
  e.u64(static_cast<std::uint64_t>(-1));
  e.u8(1);
  e.u8(1);
  e.arr({});
  e.arr({});
  e.arr({});
  e.arr({});
  // compressed columns
  e.u8(1);
  e.u64(0);
  e.u64(0);
  e.u64(static_cast<std::uint64_t>(-1));
  e.u64(static_cast<std::uint64_t>(-1));
  e.u64(static_cast<std::uint64_t>(-1));
  e.u8(1);
  e.u8(1);
  e.arr({0, 1, 1, 2});
  e.arr({1, 0});
  e.arr({});
  e.arr({});
  e.u64(2);
  e.f64(2.5);
  e.f64(-1);

  const auto bytes = dump_levels(csr);
  EXPECT_EQ(bytes, e.b);
  const auto back = load_levels(bytes);
  EXPECT_EQ(back, csr);
  EXPECT_EQ(dump_levels(back), bytes);
}

TEST(Dump, AllFormatsRoundTrip) {
  const auto t = canonicalize({{{0, 0}, 1}, {{1, 3}, 2}, {{3, 1}, 0.25}, {{3, 3}, -8}}, {4, 4});
  for (const auto& name : builtin_names()) {
    const auto s = from_canonical(t, name);
    const auto back = load_levels(dump_levels(s));
    EXPECT_EQ(back, s) << name;
    EXPECT_EQ(to_canonical(back).entries(), t.entries()) << name;
  }
  const auto empty = from_canonical(CanonicalTensor({0, 0}, {}), "csr");
  EXPECT_EQ(load_levels(dump_levels(empty)), empty);
}

TEST(Dump, Errors) {
  const auto bytes = dump_levels(from_canonical(canonicalize({{{0, 0}, 1}}, {1, 1}), "coo"));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(error_of([&] { load_levels(bad); }).first, Errc::BadMagic);
  EXPECT_EQ(error_of([] { load_levels(std::vector<std::uint8_t>{'T', 'M'}); }).first, Errc::TruncatedFile);
  EXPECT_EQ(error_of([] { load_levels(std::vector<std::uint8_t>{}); }).first, Errc::TruncatedFile);
  for (std::size_t cut : {std::size_t{5}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_EQ(error_of([&] { load_levels(part); }).first, Errc::TruncatedFile) << cut;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_EQ(error_of([&] { load_levels(extra); }).first, Errc::ParseError);
}

TEST(Dump, Files) {
  const auto dir = std::filesystem::temp_directory_path() / "tensormorph_test_io";
  std::filesystem::create_directories(dir);
  const auto t = canonicalize({{{1, 2}, 3}}, {2, 3});
  const auto s = from_canonical(t, "sky");
  dump_levels(s, (dir / "a.tmrl").string());
  EXPECT_EQ(load_levels((dir / "a.tmrl").string()), s);
  write_mm((dir / "a.mtx").string(), t);
  EXPECT_EQ(read_mm((dir / "a.mtx").string()).entries(), t.entries());
  std::filesystem::remove_all(dir);
}

TEST(MatrixMarket, SampleFile) {
  const auto t = read_mm(std::string(TENSORMORPH_TEST_DATA) + "/sample.mtx");
  EXPECT_EQ(t.dims(), (std::vector<Index>{4, 6}));
  EXPECT_EQ(t.nnz(), 9u);
  EXPECT_EQ(t.entries().front().value, 5.0);
}
