#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reid {

enum class Errc {
  MalformedRow,
  DuplicateAnnotationId,
  UnknownViewpoint,
  ViewpointNotInAnyGroup,
  InvalidPolicy,
  InvalidConfig,
  EmptyCatalog,
  SpeciesTooSmall,
  DimensionMismatch,
  ZeroVector,
  DuplicateId,
  UnknownId,
  EmptyStore,
  DisjointSpecies,
  InvalidCount,
  LabelOutOfRange,
  NonFiniteInput,
  DegenerateDataset,
  MissingEmbedding,
  FormatError,
  IoError,
};

std::string_view errc_name(Errc code);

// Validation errors are problems with the caller's inputs (exit code 2);
// everything else is a runtime failure (exit code 1).
bool is_validation_error(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string detail);

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace reid
