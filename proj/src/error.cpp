#include "reid/error.hpp"

namespace reid {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::DuplicateAnnotationId: return "DuplicateAnnotationId";
    case Errc::UnknownViewpoint: return "UnknownViewpoint";
    case Errc::ViewpointNotInAnyGroup: return "ViewpointNotInAnyGroup";
    case Errc::InvalidPolicy: return "InvalidPolicy";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyCatalog: return "EmptyCatalog";
    case Errc::SpeciesTooSmall: return "SpeciesTooSmall";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::UnknownId: return "UnknownId";
    case Errc::EmptyStore: return "EmptyStore";
    case Errc::DisjointSpecies: return "DisjointSpecies";
    case Errc::InvalidCount: return "InvalidCount";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::DegenerateDataset: return "DegenerateDataset";
    case Errc::MissingEmbedding: return "MissingEmbedding";
    case Errc::FormatError: return "FormatError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

bool is_validation_error(Errc code) {
  switch (code) {
    case Errc::MalformedRow:
    case Errc::DuplicateAnnotationId:
    case Errc::UnknownViewpoint:
    case Errc::ViewpointNotInAnyGroup:
    case Errc::InvalidPolicy:
    case Errc::InvalidConfig:
    case Errc::EmptyCatalog:
    case Errc::DimensionMismatch:
    case Errc::ZeroVector:
    case Errc::DuplicateId:
    case Errc::InvalidCount:
    case Errc::LabelOutOfRange:
    case Errc::MissingEmbedding:
    case Errc::FormatError:
      return true;
    default:
      return false;
  }
}

Error::Error(Errc code, std::string detail)
    : std::runtime_error(std::string(errc_name(code)) + "(" + detail + ")"),
      code_(code),
      detail_(std::move(detail)) {}

}  // namespace reid
