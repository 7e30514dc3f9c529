#include "blnet/error.hpp"

namespace blnet {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonPositiveExtent: return "NonPositiveExtent";
    case ErrorKind::InvalidGraph: return "InvalidGraph";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnknownLayerKind: return "UnknownLayerKind";
    case ErrorKind::UnknownBackbone: return "UnknownBackbone";
    case ErrorKind::UnknownVariant: return "UnknownVariant";
    case ErrorKind::UnsupportedCombination: return "UnsupportedCombination";
    case ErrorKind::ShapeIrreconcilable: return "ShapeIrreconcilable";
    case ErrorKind::MissingParam: return "MissingParam";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::StaleActivations: return "StaleActivations";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Error";
}

}  // namespace blnet
