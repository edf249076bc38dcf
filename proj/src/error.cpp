#include "tensormorph/error.hpp"

namespace tmorph {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::DuplicateCoord: return "DuplicateCoord";
    case Errc::CoordOutOfRange: return "CoordOutOfRange";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::CapExceeded: return "CapExceeded";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnboundVariable: return "UnboundVariable";
    case Errc::ArityError: return "ArityError";
    case Errc::CounterOrderViolation: return "CounterOrderViolation";
    case Errc::DivisorNotPositive: return "DivisorNotPositive";
    case Errc::NegativeOperand: return "NegativeOperand";
    case Errc::InvalidShift: return "InvalidShift";
    case Errc::BitsOutOfRange: return "BitsOutOfRange";
    case Errc::MissingParameter: return "MissingParameter";
    case Errc::UnknownVar: return "UnknownVar";
    case Errc::NonContiguousCountArgs: return "NonContiguousCountArgs";
    case Errc::UnboundedDim: return "UnboundedDim";
    case Errc::ExtentOverflow: return "ExtentOverflow";
    case Errc::NotYetAssembled: return "NotYetAssembled";
    case Errc::NoLocateCapability: return "NoLocateCapability";
    case Errc::InsertAfterFinalize: return "InsertAfterFinalize";
    case Errc::ParentPosOutOfRange: return "ParentPosOutOfRange";
    case Errc::OutOfOrderParent: return "OutOfOrderParent";
    case Errc::MissingQueryResult: return "MissingQueryResult";
    case Errc::SlotExhausted: return "SlotExhausted";
    case Errc::DuplicateForbidden: return "DuplicateForbidden";
    case Errc::PosOutOfRange: return "PosOutOfRange";
    case Errc::ProtocolViolation: return "ProtocolViolation";
    case Errc::UnknownFormat: return "UnknownFormat";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::NameCollision: return "NameCollision";
    case Errc::OrderMismatch: return "OrderMismatch";
    case Errc::PlanInfeasible: return "PlanInfeasible";
    case Errc::UnsupportedHeader: return "UnsupportedHeader";
    case Errc::ParseError: return "ParseError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace tmorph
