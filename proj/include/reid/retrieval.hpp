#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reid/catalog.hpp"

namespace reid {

/// Unit-normalized embeddings of one species, row-major float32.
class EmbeddingStore {
 public:
  const std::string& species() const { return species_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> matrix() const { return matrix_; }
  std::span<const float> row(std::size_t r) const { return {matrix_.data() + r * dim_, dim_}; }

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws UnknownId.
  std::size_t row_of(std::string_view id) const;

  /// Position of each row's id in ascending id order; the tie-break key.
  std::span<const std::uint32_t> id_rank() const { return id_rank_; }

 private:
  friend EmbeddingStore build_store(std::string species, std::vector<std::string> ids, std::span<const float> raw,
                                    std::size_t dim);
  std::string species_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
  std::unordered_map<std::string, std::size_t> id_index_;
  std::vector<std::uint32_t> id_rank_;
};

/// Rows are L2-normalized copies of `raw` (ids.size() x dim, row-major) in
/// the given order. Throws DimensionMismatch, ZeroVector(id), DuplicateId,
/// NonFiniteInput.
EmbeddingStore build_store(std::string species, std::vector<std::string> ids, std::span<const float> raw,
                           std::size_t dim);

EmbeddingStore build_store(const std::vector<std::pair<std::string, std::vector<float>>>& vectors,
                           std::string species);

/// Dot product with 64-bit accumulation in eight interleaved lanes and a fixed
/// reduction order.
double canonical_dot(std::span<const float> a, std::span<const float> b);

/// 1 - a.b for unit rows, correctly rounded to float from the exact value and
/// clamped to [0, 2]; equal rows are at distance 0. Every distance in the engine is this value, so it does
/// not depend on blocking, summation order or the path that computed it.
float cosine_distance(std::span<const float> a, std::span<const float> b);

struct Match {
  std::string annotation_id;
  float distance = 0.0f;
  bool operator==(const Match&) const = default;
};

struct RankedMatches {
  std::string query_id;
  std::size_t k = 0;
  std::vector<Match> entries;  // ascending (distance, annotation_id)
  bool operator==(const RankedMatches&) const = default;
};

using IdentityMap = std::unordered_map<std::string, IdentityKey>;

/// Exact k nearest rows by cosine distance, excluding the query row;
/// min(k, n-1) entries, ties broken by ascending annotation id.
/// Throws UnknownId, InvalidConfig for k == 0.
RankedMatches topk(const EmbeddingStore& store, std::string_view query_id, std::size_t k);

/// Per-row identity groups plus a seeded order within each identity, used to
/// cap how many rows of any identity a query may see.
class IdentityCap {
 public:
  /// Throws UnknownId when identity_of misses a store id.
  IdentityCap(const EmbeddingStore& store, const IdentityMap& identity_of, std::size_t max_per_identity,
              std::uint64_t cap_seed);

  std::size_t max_per_identity() const { return max_per_identity_; }
  std::uint32_t group(std::size_t row) const { return group_[row]; }
  /// Row's position in its identity's seeded order.
  std::uint32_t position(std::size_t row) const { return position_[row]; }
  std::size_t group_count() const { return group_sizes_.size(); }
  std::size_t group_size(std::uint32_t g) const { return group_sizes_[g]; }

  /// Whether `row` stays in the database for `query_row`: every other identity
  /// keeps its first max_per_identity rows in seeded order; the query's own
  /// identity keeps its first max_per_identity rows after removing the query.
  bool eligible(std::size_t query_row, std::size_t row) const {
    if (row == query_row) return false;
    const std::uint32_t p = position_[row];
    if (group_[row] != group_[query_row]) return p < max_per_identity_;
    const std::uint32_t q = position_[query_row];
    return (p < q ? p : p - 1) < max_per_identity_;
  }

 private:
  std::size_t max_per_identity_;
  std::vector<std::uint32_t> group_;
  std::vector<std::uint32_t> position_;
  std::vector<std::size_t> group_sizes_;
};

/// Seeded order of one identity's ids. `ids` must be sorted ascending.
std::vector<std::string> identity_cap_order(std::vector<std::string> ids, const IdentityKey& identity,
                                            std::uint64_t cap_seed);

/// topk over the database reduced by IdentityCap(max_per_identity, cap_seed).
RankedMatches topk_capped(const EmbeddingStore& store, std::string_view query_id, std::size_t k,
                          std::size_t max_per_identity, const IdentityMap& identity_of, std::uint64_t cap_seed);

RankedMatches topk_capped(const EmbeddingStore& store, std::string_view query_id, std::size_t k,
                          const IdentityCap& cap);

/// Marker stored at each query's own position in distance rows.
inline constexpr float kExcludedDistance = std::numeric_limits<float>::infinity();

/// Distances from rows [first, first + count) to every row, written row-major
/// into out (count x size). Self positions hold kExcludedDistance.
void compute_distance_rows(const EmbeddingStore& store, std::size_t first, std::size_t count, std::span<float> out);

/// Distances from one query row to every row (self excluded), parallel over rows.
std::vector<float> distances_from(const EmbeddingStore& store, std::size_t query_row);

struct DistanceBlock {
  std::size_t first_row = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> distances;  // rows x cols

  std::span<const float> row(std::size_t i) const { return {distances.data() + i * cols, cols}; }
  bool excluded(std::size_t i, std::size_t col) const { return first_row + i == col; }
};

/// Streams the full distance matrix in blocks of query rows.
class PairwiseDistances {
 public:
  explicit PairwiseDistances(const EmbeddingStore& store, std::size_t block_rows = 64);

  /// Fills `block` with the next block; false when exhausted.
  bool next(DistanceBlock& block);

 private:
  const EmbeddingStore& store_;
  std::size_t block_rows_;
  std::size_t cursor_ = 0;
};

}  // namespace reid
