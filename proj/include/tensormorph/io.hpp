#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tensormorph/storage.hpp"
#include "tensormorph/tensor.hpp"

namespace tmorph {

struct MatrixMarketHeader {
  enum class Format { coordinate, array };
  enum class Field { real, integer, pattern };
  enum class Symmetry { general, symmetric };

  Format format = Format::coordinate;
  Field field = Field::real;
  Symmetry symmetry = Symmetry::general;
};

/// Parse a Matrix Market stream. Entries become 0-based; symmetric files are
/// expanded and pattern entries get value 1. Errors carry the line number.
CanonicalTensor read_mm(std::istream& in, MatrixMarketHeader* header = nullptr);
CanonicalTensor read_mm(const std::string& path, MatrixMarketHeader* header = nullptr);

/// Coordinate/real/general output in canonical entry order.
void write_mm(std::ostream& out, const CanonicalTensor& t);
void write_mm(const std::string& path, const CanonicalTensor& t);

// TMRL1 level dumps: little-endian, fixed width, self-describing.
std::vector<std::uint8_t> dump_levels(const TensorStorage& t);
TensorStorage load_levels(const std::vector<std::uint8_t>& bytes);
void dump_levels(const TensorStorage& t, const std::string& path);
TensorStorage load_levels(const std::string& path);

}  // namespace tmorph
