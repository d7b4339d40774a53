#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reid/retrieval.hpp"

namespace reid {

/// Cap value meaning "no per-identity limit".
inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

struct EvalConfig {
  std::vector<std::size_t> ranks{1, 5, 10, 20};
  std::vector<std::size_t> caps;  // optional; kNoCap allowed
  bool skip_queries_without_positives = true;

  /// Ranks strictly increasing and >= 1; caps >= 1. Throws InvalidConfig.
  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct QueryOutcome {
  std::string query_id;
  std::optional<std::size_t> rank;  // rank of the first same-identity match
  bool skipped = false;
};

struct SpeciesReport {
  std::string species;
  std::map<std::size_t, double> accuracy;  // empty when no query was scored
  std::size_t n_queries = 0;
  std::size_t n_skipped = 0;
  std::vector<QueryOutcome> queries;  // sorted by query id
  std::optional<std::string> error;
};

struct CurvePoint {
  std::size_t cap = kNoCap;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;  // population std across species
  std::size_t species_count = 0;
};

struct EvalReport {
  std::vector<std::size_t> ranks;
  std::vector<SpeciesReport> species;  // sorted by name
  std::map<std::size_t, double> macro;  // unweighted mean over scored species
  std::vector<CurvePoint> curves;
  nlohmann::json provenance = nlohmann::json::object();

  const SpeciesReport* find(std::string_view species) const;
};

/// One-vs-all: every row queries all other rows of the store (optionally
/// capped per identity); a hit at k means a same-identity row ranks <= k by
/// (distance, annotation id). Throws EmptyStore, UnknownId.
SpeciesReport one_vs_all(const EmbeddingStore& store, const IdentityMap& identity_of, const EvalConfig& config,
                         const IdentityCap* cap = nullptr);

/// Sorts species by name and fills the macro averages.
EvalReport aggregate(std::vector<SpeciesReport> species, std::vector<std::size_t> ranks);

struct SpeciesInput {
  const EmbeddingStore* store = nullptr;
  const IdentityMap* identity_of = nullptr;
};

/// Top-1 mean/std across species for each cap (kNoCap = uncapped).
std::vector<CurvePoint> curve_by_cap(std::span<const SpeciesInput> species, std::span<const std::size_t> caps,
                                     std::uint64_t cap_seed, bool skip_queries_without_positives = true);

struct SpeciesDelta {
  std::string species;
  std::map<std::size_t, double> a;
  std::map<std::size_t, double> b;
  std::map<std::size_t, double> delta;  // a - b
};

struct ReportComparison {
  std::vector<std::size_t> ranks;
  std::vector<SpeciesDelta> species;
  std::map<std::size_t, double> macro_delta;  // mean of per-species deltas
};

/// Restricted to species scored in both reports. Throws DisjointSpecies.
ReportComparison compare_reports(const EvalReport& a, const EvalReport& b);

/// Multi-column comparison at rank k in percent: one column per named report,
/// then one delta column per report after the first (first minus that one).
/// Rows cover species present in every report, then a macro row.
std::string comparison_table_csv(const std::vector<std::pair<std::string, const EvalReport*>>& columns,
                                 std::size_t k);

nlohmann::json report_to_json(const EvalReport& report);
/// Throws FormatError.
EvalReport report_from_json(const nlohmann::json& j);

/// `species,k,accuracy,n_queries,n_skipped`, plus macro rows.
std::string summary_csv(const EvalReport& report);
/// `cap,mean_top1,std_top1`; uncapped is written as "inf".
std::string curve_csv(std::span<const CurvePoint> curve);

std::string format_cap(std::size_t cap);
/// Accepts positive integers and "inf". Throws InvalidConfig.
std::size_t parse_cap(std::string_view token);

}  // namespace reid
