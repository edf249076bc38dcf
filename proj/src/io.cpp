#include "tensormorph/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <cctype>
#include <iterator>
#include <sstream>

#include "tensormorph/error.hpp"

namespace tmorph {

// ---------------------------------------------------------------------------
// Matrix Market
// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

MatrixMarketHeader parse_header(const std::string& line) {
  std::istringstream ss(line);
  std::string banner, object, format, field, symmetry;
  ss >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") throw Error(Errc::UnsupportedHeader, "missing %%MatrixMarket banner", 1);
  MatrixMarketHeader h;
  if (lower(object) != "matrix") throw Error(Errc::UnsupportedHeader, "object '" + object + "'", 1);
  format = lower(format);
  if (format == "coordinate") h.format = MatrixMarketHeader::Format::coordinate;
  else if (format == "array") h.format = MatrixMarketHeader::Format::array;
  else throw Error(Errc::UnsupportedHeader, "format '" + format + "'", 1);
  field = lower(field);
  if (field == "real" || field == "double") h.field = MatrixMarketHeader::Field::real;
  else if (field == "integer") h.field = MatrixMarketHeader::Field::integer;
  else if (field == "pattern") h.field = MatrixMarketHeader::Field::pattern;
  else throw Error(Errc::UnsupportedHeader, "field '" + field + "'", 1);
  symmetry = lower(symmetry);
  if (symmetry == "general") h.symmetry = MatrixMarketHeader::Symmetry::general;
  else if (symmetry == "symmetric") h.symmetry = MatrixMarketHeader::Symmetry::symmetric;
  else throw Error(Errc::UnsupportedHeader, "symmetry '" + symmetry + "'", 1);
  if (h.format == MatrixMarketHeader::Format::array && h.field == MatrixMarketHeader::Field::pattern) {
    throw Error(Errc::UnsupportedHeader, "pattern arrays", 1);
  }
  return h;
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r") == std::string::npos;
}

template <class T>
T parse_num(std::string_view tok, std::int64_t line) {
  T v{};
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    throw Error(Errc::ParseError, "bad number '" + std::string(tok) + "'", line);
  }
  return v;
}

std::vector<std::string_view> tokens(const std::string& s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.data() + i, j - i);
    i = j;
  }
  return out;
}

}  // namespace

CanonicalTensor read_mm(std::istream& in, MatrixMarketHeader* header_out) {
  std::string line;
  std::int64_t lineno = 1;
  if (!std::getline(in, line)) throw Error(Errc::UnsupportedHeader, "empty file", 1);
  const MatrixMarketHeader h = parse_header(line);
  if (header_out) *header_out = h;

  // size line, skipping comments
  std::vector<std::string_view> tok;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line) || line[0] == '%') continue;
    tok = tokens(line);
    break;
  }
  const bool coord = h.format == MatrixMarketHeader::Format::coordinate;
  if (tok.size() != (coord ? 3u : 2u)) throw Error(Errc::ParseError, "bad size line", lineno);
  const auto rows = parse_num<Index>(tok[0], lineno);
  const auto cols = parse_num<Index>(tok[1], lineno);
  if (rows < 0 || cols < 0) throw Error(Errc::ParseError, "negative size", lineno);
  const bool sym = h.symmetry == MatrixMarketHeader::Symmetry::symmetric;
  if (sym && rows != cols) throw Error(Errc::ParseError, "symmetric matrix must be square", lineno);
  const Index expected =
      coord ? parse_num<Index>(tok[2], lineno) : (sym ? rows * (rows + 1) / 2 : rows * cols);
  if (expected < 0) throw Error(Errc::ParseError, "negative entry count", lineno);

  std::vector<Entry> entries;
  Index seen = 0;
  const bool pattern = h.field == MatrixMarketHeader::Field::pattern;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line) || line[0] == '%') continue;
    if (seen == expected) throw Error(Errc::ParseError, "more entries than declared", lineno);
    tok = tokens(line);
    Index i = 0, j = 0;
    double v = 1.0;
    if (coord) {
      if (tok.size() != (pattern ? 2u : 3u)) throw Error(Errc::ParseError, "bad entry", lineno);
      i = parse_num<Index>(tok[0], lineno) - 1;
      j = parse_num<Index>(tok[1], lineno) - 1;
      if (i < 0 || i >= rows || j < 0 || j >= cols) {
        throw Error(Errc::ParseError, "coordinate out of range", lineno);
      }
    } else {
      if (tok.size() != 1) throw Error(Errc::ParseError, "bad entry", lineno);
      // column-major; symmetric arrays list the lower triangle
      if (sym) {
        Index k = seen, c = 0;
        while (k >= rows - c) k -= rows - c++;
        i = c + k;
        j = c;
      } else {
        i = seen % rows;
        j = seen / rows;
      }
    }
    if (!pattern) {
      v = h.field == MatrixMarketHeader::Field::integer
              ? static_cast<double>(parse_num<Index>(tok.back(), lineno))
              : parse_num<double>(tok.back(), lineno);
    }
    ++seen;
    if (!coord && v == 0.0) continue;
    entries.push_back({{i, j}, v});
    if (sym && i != j) entries.push_back({{j, i}, v});
  }
  if (seen != expected) {
    throw Error(Errc::ParseError,
                "expected " + std::to_string(expected) + " entries, found " + std::to_string(seen),
                lineno);
  }
  return canonicalize(std::move(entries), {rows, cols}, DupPolicy::sum);
}

CanonicalTensor read_mm(const std::string& path, MatrixMarketHeader* header) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  return read_mm(in, header);
}

void write_mm(std::ostream& out, const CanonicalTensor& t) {
  if (t.order() != 2) throw Error(Errc::DimMismatch, "Matrix Market holds order-2 tensors only");
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << t.dims()[0] << " " << t.dims()[1] << " " << t.nnz() << "\n";
  char buf[64];
  for (const Entry& e : t.entries()) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, e.value);
    out << e.coord[0] + 1 << " " << e.coord[1] + 1 << " " << std::string_view(buf, p - buf) << "\n";
  }
}

void write_mm(const std::string& path, const CanonicalTensor& t) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  write_mm(out, t);
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// TMRL1
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'T', 'M', 'R', 'L', '1'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void ints(const std::vector<Index>& a) {
    u64(a.size());
    for (Index v : a) i64(v);
  }

  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf_(b) {}

  const std::uint8_t* take(std::size_t n) {
    if (n > buf_.size() - at_) {
      throw Error(Errc::TruncatedFile, "dump ends at byte " + std::to_string(buf_.size()),
                  static_cast<std::int64_t>(buf_.size()));
    }
    const std::uint8_t* p = buf_.data() + at_;
    at_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | p[k];
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t count(std::size_t width) {
    const std::uint64_t n = u64();
    if (n > (buf_.size() - at_) / width) {
      throw Error(Errc::TruncatedFile, "array length " + std::to_string(n) + " exceeds file",
                  static_cast<std::int64_t>(at_));
    }
    return n;
  }
  std::string str() {
    const auto n = count(1);
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::vector<Index> ints() {
    std::vector<Index> a(count(8));
    for (Index& v : a) v = i64();
    return a;
  }
  bool done() const { return at_ == buf_.size(); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t at_ = 0;
};

}  // namespace

std::vector<std::uint8_t> dump_levels(const TensorStorage& t) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.ints(t.dims);
  w.str(t.format);
  w.u64(t.params.size());
  for (const auto& [k, v] : t.params) {
    w.str(k);
    w.i64(v);
  }
  w.u64(t.projection.size());
  for (int p : t.projection) w.i64(p);
  w.u8(t.unique_coords ? 1 : 0);
  w.u64(t.levels.size());
  for (const LevelStorage& L : t.levels) {
    w.u8(static_cast<std::uint8_t>(L.kind));
    const LevelParams& p = L.params;
    w.i64(p.size);
    w.i64(p.lower);
    w.i64(p.block);
    w.i64(p.base);
    w.i64(p.delta);
    w.u8(p.unique ? 1 : 0);
    w.u8(p.ordered ? 1 : 0);
    w.ints(L.pos);
    w.ints(L.crd);
    w.ints(L.perm);
    w.ints(L.lo);
  }
  w.u64(t.values.size());
  for (double v : t.values) w.f64(v);
  return std::move(w.buf);
}

TensorStorage load_levels(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    if (bytes.size() < sizeof kMagic && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) {
      throw Error(Errc::TruncatedFile, "dump shorter than its magic", 0);
    }
    throw Error(Errc::BadMagic, "not a TMRL1 dump", 0);
  }
  Reader r(bytes);
  r.take(sizeof kMagic);
  TensorStorage t;
  t.dims = r.ints();
  t.format = r.str();
  for (auto n = r.count(16); n > 0; --n) {
    std::string k = r.str();
    t.params[k] = r.i64();
  }
  for (auto n = r.count(8); n > 0; --n) t.projection.push_back(static_cast<int>(r.i64()));
  t.unique_coords = r.u8() != 0;
  for (auto n = r.count(1); n > 0; --n) {
    LevelStorage L;
    const std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(LevelKind::offset)) {
      throw Error(Errc::ParseError, "unknown level tag " + std::to_string(tag));
    }
    L.kind = static_cast<LevelKind>(tag);
    LevelParams& p = L.params;
    p.size = r.i64();
    p.lower = r.i64();
    p.block = static_cast<int>(r.i64());
    p.base = static_cast<int>(r.i64());
    p.delta = static_cast<int>(r.i64());
    p.unique = r.u8() != 0;
    p.ordered = r.u8() != 0;
    L.pos = r.ints();
    L.crd = r.ints();
    L.perm = r.ints();
    L.lo = r.ints();
    t.levels.push_back(std::move(L));
  }
  t.values.resize(r.count(8));
  for (double& v : t.values) v = r.f64();
  if (!r.done()) throw Error(Errc::ParseError, "trailing bytes after dump");
  return t;
}

void dump_levels(const TensorStorage& t, const std::string& path) {
  const auto bytes = dump_levels(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

TensorStorage load_levels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return load_levels(bytes);
}

}  // namespace tmorph
