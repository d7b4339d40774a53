#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reid/catalog.hpp"

namespace reid {

/// Training probability for species with at least `min_annotations` annotations.
struct TrainFractionStep {
  std::size_t min_annotations = 0;
  double probability = 0.0;
  bool operator==(const TrainFractionStep&) const = default;
};

struct SplitConfig {
  std::uint64_t seed = 0;
  double target_known_fraction = 0.5;
  // Smaller species send fewer individuals to training.
  std::vector<TrainFractionStep> train_fraction_curve{{0, 0.3}, {500, 0.5}, {5001, 0.7}};
  double reserve_fraction = 0.3;
  std::size_t min_train_annots = 3;
  std::size_t min_test_annots = 2;
  std::size_t max_test_annots = 10;
  bool one_per_encounter = true;
  // Rebalancing stops once |known_fraction - target| is within this.
  double rebalance_tolerance = 0.10;

  /// Throws InvalidConfig.
  void validate() const;
  double train_probability(std::size_t species_annotations) const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults. Throws InvalidConfig.
  static SplitConfig from_json(const nlohmann::json& j);
  /// Hex digest of the canonical JSON form (seed included).
  std::string digest() const;

  bool operator==(const SplitConfig&) const = default;
};

enum class SplitLabel : std::uint8_t { Train, Test, Dropped };
enum class DropReason : std::uint8_t { None, TrainMin, EncounterDup, TestMin, TestCap };
// Excluded: every annotation of the identity was dropped.
enum class Disposition : std::uint8_t { TrainOnly, Known, TestOnly, Excluded };

std::string_view to_string(SplitLabel v);
std::string_view to_string(DropReason v);
std::string_view to_string(Disposition v);
SplitLabel parse_split_label(std::string_view s);
DropReason parse_drop_reason(std::string_view s);
Disposition parse_disposition(std::string_view s);

struct AnnotationSplit {
  std::string annotation_id;
  std::string species;
  IdentityKey identity;
  SplitLabel label = SplitLabel::Dropped;
  DropReason drop_reason = DropReason::None;
  Disposition disposition = Disposition::Excluded;
};

struct SpeciesSplitMeta {
  std::string species;
  bool too_small = false;
  std::size_t rebalance_moves = 0;
  bool within_tolerance = false;
};

/// Train/test labels for every catalog annotation, in catalog order.
struct SplitAssignment {
  std::vector<AnnotationSplit> entries;
  std::vector<SpeciesSplitMeta> species;  // sorted by name
  std::uint64_t seed = 0;
  std::string config_digest;

  /// Annotation ids labeled test for one species, sorted.
  std::vector<std::string> test_ids(std::string_view species) const;
};

enum class TooSmallPolicy { Throw, Record };

/// Per species: draw identities into training, reserve part of each training
/// identity for test, then filter (train minimum, encounter dedup, test
/// minimum, test cap) and rebalance the known/unseen composition by moving
/// whole identities between pools. Deterministic in (catalog, config).
/// Throws SpeciesTooSmall under TooSmallPolicy::Throw when a species keeps no
/// test identity.
SplitAssignment assign_split(const Catalog& catalog, const SplitConfig& config,
                             TooSmallPolicy on_too_small = TooSmallPolicy::Throw);

struct SpeciesSplitReport {
  std::string species;
  std::size_t train_annots = 0;
  std::size_t test_annots = 0;
  std::size_t dropped_annots = 0;
  std::size_t known_identities = 0;
  std::size_t unseen_identities = 0;
  double known_fraction = 0.0;
  std::map<std::string, std::size_t> drop_histogram;
  bool too_small = false;
  bool within_tolerance = false;
  std::size_t rebalance_moves = 0;
};

std::vector<SpeciesSplitReport> split_report(const SplitAssignment& assignment);

nlohmann::json split_report_json(const std::vector<SpeciesSplitReport>& report);

/// `annotation_id,label,drop_reason,identity_disposition` preceded by a
/// '#'-prefixed provenance line.
std::string serialize_assignment(const SplitAssignment& assignment, std::string_view provenance_line = {});

/// Reads labels back; identity/species come from the catalog. Throws
/// MalformedRow or UnknownId for ids absent from the catalog.
SplitAssignment parse_assignment(std::string_view content, const Catalog& catalog);

}  // namespace reid
