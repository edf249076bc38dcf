#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tmorph {

enum class Errc {
  // tensor core
  DuplicateCoord,
  CoordOutOfRange,
  DimMismatch,
  CapExceeded,
  // remapping / query languages
  SyntaxError,
  UnboundVariable,
  ArityError,
  CounterOrderViolation,
  DivisorNotPositive,
  NegativeOperand,
  InvalidShift,
  BitsOutOfRange,
  MissingParameter,
  UnknownVar,
  NonContiguousCountArgs,
  UnboundedDim,
  ExtentOverflow,
  // level formats
  NotYetAssembled,
  NoLocateCapability,
  InsertAfterFinalize,
  ParentPosOutOfRange,
  OutOfOrderParent,
  MissingQueryResult,
  SlotExhausted,
  DuplicateForbidden,
  PosOutOfRange,
  ProtocolViolation,
  // registry / planner
  UnknownFormat,
  ValidationFailed,
  NameCollision,
  OrderMismatch,
  PlanInfeasible,
  // io
  UnsupportedHeader,
  ParseError,
  BadMagic,
  TruncatedFile,
  IoError,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::int64_t offset = -1)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code),
        offset_(offset) {}

  Errc code() const noexcept { return code_; }
  /// Character offset for syntax errors, line number for file parse errors,
  /// -1 otherwise.
  std::int64_t offset() const noexcept { return offset_; }

 private:
  Errc code_;
  std::int64_t offset_;
};

}  // namespace tmorph
