#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace reid {

enum class Viewpoint : std::uint8_t { Left, Right, Front, Back, Top, Unknown };

inline constexpr Viewpoint kAllViewpoints[] = {Viewpoint::Left, Viewpoint::Right, Viewpoint::Front,
                                               Viewpoint::Back, Viewpoint::Top, Viewpoint::Unknown};

std::string_view to_string(Viewpoint v);

// Case-insensitive; an empty token means unknown. Throws UnknownViewpoint.
Viewpoint parse_viewpoint(std::string_view token);

struct BBox {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t w = 0;
  std::uint32_t h = 0;
  bool operator==(const BBox&) const = default;
};

/// One sighting of one individual.
struct Annotation {
  std::string annotation_id;
  std::string species;
  std::string individual_id;
  Viewpoint viewpoint = Viewpoint::Unknown;
  std::string encounter_id;
  std::string image_ref;
  std::optional<BBox> bbox;

  bool operator==(const Annotation&) const = default;
};

/// Per-species rule for whether the side shown splits an individual into
/// separate matching identities. Viewpoints sharing a group may match.
struct SpeciesPolicy {
  std::string species;
  bool viewpoint_splits_identity = true;
  std::vector<std::vector<Viewpoint>> matchable_viewpoint_groups;

  /// Splitting on, one singleton group per concrete side (unknown unassigned).
  static SpeciesPolicy default_for(std::string species);

  std::optional<std::uint32_t> group_of(Viewpoint v) const;

  /// Throws InvalidPolicy when a viewpoint appears in more than one group.
  void validate() const;

  bool operator==(const SpeciesPolicy&) const = default;
};

/// The identity two annotations must share to count as a match.
struct IdentityKey {
  std::string species;
  std::string individual_id;
  std::optional<std::uint32_t> viewpoint_group;

  auto operator<=>(const IdentityKey&) const = default;
  bool operator==(const IdentityKey&) const = default;

  /// Stable printable form: "species/individual" or "species/individual#g<n>".
  std::string str() const;
};

struct IdentityKeyHash {
  std::size_t operator()(const IdentityKey& k) const;
};

/// Throws ViewpointNotInAnyGroup when splitting is on and the viewpoint has no group.
IdentityKey derive_identity(const Annotation& ann, const SpeciesPolicy& policy);

using PolicyTable = std::map<std::string, SpeciesPolicy, std::less<>>;

/// Policy file: JSON object species -> {viewpoint_splits_identity, matchable_viewpoint_groups}.
PolicyTable parse_policies(std::string_view json_text);
std::string serialize_policies(const PolicyTable& table);

/// Immutable, indexed set of annotations. Identities are derived at
/// construction, so a Catalog always satisfies its species policies.
class Catalog {
 public:
  using IdentityIndex = std::map<IdentityKey, std::vector<std::size_t>>;

  Catalog() = default;
  /// Throws DuplicateAnnotationId or ViewpointNotInAnyGroup.
  Catalog(std::vector<Annotation> annotations, PolicyTable policies);

  const std::vector<Annotation>& annotations() const { return annotations_; }
  std::size_t size() const { return annotations_.size(); }
  bool empty() const { return annotations_.empty(); }

  const PolicyTable& policies() const { return policies_; }
  /// Explicit policy for the species, or the default one.
  SpeciesPolicy policy(std::string_view species) const;

  /// Species labels, sorted.
  std::vector<std::string> species() const;

  /// Identity -> annotation indices (sorted by annotation id). Empty map for unknown species.
  const IdentityIndex& identities(std::string_view species) const;

  const IdentityKey& identity_of(std::size_t index) const { return identity_of_[index]; }
  std::optional<std::size_t> find(std::string_view annotation_id) const;

 private:
  std::vector<Annotation> annotations_;
  PolicyTable policies_;
  std::map<std::string, IdentityIndex, std::less<>> index_;
  std::vector<IdentityKey> identity_of_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

enum class ManifestFormat { Csv, Jsonl };

/// Throws MalformedRow(line), DuplicateAnnotationId(id), UnknownViewpoint(token).
Catalog parse_manifest(std::string_view content, ManifestFormat format, PolicyTable policies = {});

std::string serialize_manifest(const Catalog& catalog, ManifestFormat format = ManifestFormat::Csv);

struct SpeciesStats {
  std::string species;
  std::size_t annotation_count = 0;
  std::size_t individual_count = 0;
  double mean_per_individual = 0.0;
  double median_per_individual = 0.0;
};

/// Per-species counts over derived identities, sorted by species. Throws EmptyCatalog.
std::vector<SpeciesStats> catalog_stats(const Catalog& catalog);

}  // namespace reid
