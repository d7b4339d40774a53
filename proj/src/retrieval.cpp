#include "reid/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "reid/error.hpp"
#include "reid/parallel.hpp"
#include "reid/rng.hpp"

namespace reid {

namespace {

constexpr std::size_t kLanes = 8;
constexpr std::size_t kQueryTile = 4;
constexpr std::size_t kRowTile = 4;

inline double reduce_lanes(const double* acc) {
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Computes QT x RT canonical dot products. Each pair sees exactly the
// operation sequence of canonical_dot; tiling only shares loads.
template <std::size_t QT, std::size_t RT>
inline void dot_tile(const std::array<const float*, QT>& q, const std::array<const float*, RT>& r, std::size_t dim,
                     double* out) {
  double acc[QT][RT][kLanes] = {};
  const std::size_t body = dim - dim % kLanes;
  for (std::size_t d = 0; d < body; d += kLanes) {
    for (std::size_t i = 0; i < QT; ++i) {
      for (std::size_t j = 0; j < RT; ++j) {
        for (std::size_t l = 0; l < kLanes; ++l) {
          acc[i][j][l] += static_cast<double>(q[i][d + l]) * static_cast<double>(r[j][d + l]);
        }
      }
    }
  }
  for (std::size_t i = 0; i < QT; ++i) {
    for (std::size_t j = 0; j < RT; ++j) {
      double s = reduce_lanes(acc[i][j]);
      for (std::size_t e = body; e < dim; ++e) s += static_cast<double>(q[i][e]) * static_cast<double>(r[j][e]);
      out[i * RT + j] = s;
    }
  }
}

// Exact sum as a nonoverlapping expansion (Shewchuk's grow-expansion).
void expansion_add(std::vector<double>& partials, double x) {
  std::size_t i = 0;
  for (std::size_t j = 0; j < partials.size(); ++j) {
    double y = partials[j];
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials[i++] = lo;
    x = hi;
  }
  partials.resize(i);
  partials.push_back(x);
}

// Correctly rounded double of an expansion, as in Python's math.fsum.
double expansion_round(const std::vector<double>& p) {
  std::size_t n = p.size();
  if (n == 0) return 0.0;
  double hi = p[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = p[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

// float(1 - a.b) correctly rounded from the exact value.
float exact_distance(const float* a, const float* b, std::size_t dim) {
  std::vector<double> parts{1.0};
  for (std::size_t i = 0; i < dim; ++i) expansion_add(parts, -(static_cast<double>(a[i]) * static_cast<double>(b[i])));
  const double d = expansion_round(parts);
  float f = static_cast<float>(d);
  float down = f, up = f;
  if (static_cast<double>(f) <= d) {
    up = std::nextafter(f, std::numeric_limits<float>::infinity());
  } else {
    down = std::nextafter(f, -std::numeric_limits<float>::infinity());
  }
  // d may sit exactly on a float midpoint while the exact value does not.
  if (down != up && d - static_cast<double>(down) == static_cast<double>(up) - d) {
    expansion_add(parts, -d);
    const double rest = parts.back();
    if (rest > 0.0) f = up;
    if (rest < 0.0) f = down;
  }
  return std::clamp(f, 0.0f, 2.0f);
}

// For unit rows the lane sums carry absolute error below (dim/8 + 11) * 2^-53,
// so the bound here is generous. When no float rounding midpoint lies within
// it, the fast result is already the correctly rounded distance.
inline float distance_from_dot(double dot, const float* a, const float* b, std::size_t dim) {
  const double d = 1.0 - dot;
  const double bound = static_cast<double>(dim + 32) * 0x1p-52;
  const float f = static_cast<float>(d);
  const double fd = f;
  const double below = 0.5 * (fd + static_cast<double>(std::nextafter(f, -std::numeric_limits<float>::infinity())));
  const double above = 0.5 * (fd + static_cast<double>(std::nextafter(f, std::numeric_limits<float>::infinity())));
  const float r = d - bound > below && d + bound < above ? std::clamp(f, 0.0f, 2.0f) : exact_distance(a, b, dim);
  // A stored row's squared norm is 1 only up to rounding; equal rows still
  // get distance 0.
  if (r < 0x1p-16f && std::equal(a, a + dim, b)) return 0.0f;
  return r;
}

// Order by (distance, id rank).
struct RankedRow {
  float distance;
  std::uint32_t id_rank;
  std::uint32_t row;
  bool operator<(const RankedRow& o) const {
    return distance != o.distance ? distance < o.distance : id_rank < o.id_rank;
  }
};

RankedMatches select_topk(const EmbeddingStore& store, std::size_t query_row, std::size_t k,
                          const std::vector<float>& dist, const IdentityCap* cap) {
  if (k == 0) throw Error(Errc::InvalidConfig, "k must be >= 1");
  std::vector<RankedRow> cand;
  cand.reserve(store.size());
  const auto ranks = store.id_rank();
  for (std::size_t r = 0; r < store.size(); ++r) {
    if (r == query_row) continue;
    if (cap && !cap->eligible(query_row, r)) continue;
    cand.push_back({dist[r], ranks[r], static_cast<std::uint32_t>(r)});
  }
  const std::size_t take = std::min(k, cand.size());
  if (take < cand.size()) {
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    cand.resize(take);
  }
  std::sort(cand.begin(), cand.end());

  RankedMatches out;
  out.query_id = store.ids()[query_row];
  out.k = k;
  out.entries.reserve(take);
  for (const auto& c : cand) out.entries.push_back({store.ids()[c.row], c.distance});
  return out;
}

}  // namespace

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
  const auto it = id_index_.find(std::string(id));
  if (it == id_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingStore::row_of(std::string_view id) const {
  const auto r = find(id);
  if (!r) throw Error(Errc::UnknownId, std::string(id));
  return *r;
}

EmbeddingStore build_store(std::string species, std::vector<std::string> ids, std::span<const float> raw,
                           std::size_t dim) {
  if (dim == 0) throw Error(Errc::DimensionMismatch, "dimension must be >= 1");
  if (raw.size() != ids.size() * dim) throw Error(Errc::DimensionMismatch, "matrix size does not match ids x dim");
  if (ids.size() > std::numeric_limits<std::uint32_t>::max()) throw Error(Errc::InvalidConfig, "too many rows");

  EmbeddingStore s;
  s.species_ = std::move(species);
  s.dim_ = dim;
  s.matrix_.resize(raw.size());
  s.id_index_.reserve(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (!s.id_index_.emplace(ids[r], r).second) throw Error(Errc::DuplicateId, ids[r]);
    const float* src = raw.data() + r * dim;
    double norm2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      if (!std::isfinite(src[d])) throw Error(Errc::NonFiniteInput, ids[r]);
      norm2 += static_cast<double>(src[d]) * static_cast<double>(src[d]);
    }
    if (norm2 == 0.0) throw Error(Errc::ZeroVector, ids[r]);
    const double inv = 1.0 / std::sqrt(norm2);
    float* dst = s.matrix_.data() + r * dim;
    for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<float>(static_cast<double>(src[d]) * inv);
  }
  std::vector<std::uint32_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return ids[a] < ids[b]; });
  s.id_rank_.resize(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) s.id_rank_[order[i]] = static_cast<std::uint32_t>(i);
  s.ids_ = std::move(ids);
  return s;
}

EmbeddingStore build_store(const std::vector<std::pair<std::string, std::vector<float>>>& vectors,
                           std::string species) {
  if (vectors.empty()) throw Error(Errc::EmptyStore, species);
  const std::size_t dim = vectors.front().second.size();
  std::vector<std::string> ids;
  std::vector<float> raw;
  ids.reserve(vectors.size());
  raw.reserve(vectors.size() * dim);
  for (const auto& [id, v] : vectors) {
    if (v.size() != dim) throw Error(Errc::DimensionMismatch, id);
    ids.push_back(id);
    raw.insert(raw.end(), v.begin(), v.end());
  }
  return build_store(std::move(species), std::move(ids), raw, dim);
}

double canonical_dot(std::span<const float> a, std::span<const float> b) {
  double out = 0.0;
  dot_tile<1, 1>({a.data()}, {b.data()}, std::min(a.size(), b.size()), &out);
  return out;
}

float cosine_distance(std::span<const float> a, std::span<const float> b) {
  const std::size_t dim = std::min(a.size(), b.size());
  return distance_from_dot(canonical_dot(a, b), a.data(), b.data(), dim);
}

void compute_distance_rows(const EmbeddingStore& store, std::size_t first, std::size_t count, std::span<float> out) {
  const std::size_t n = store.size();
  const std::size_t dim = store.dim();
  if (out.size() < count * n) throw Error(Errc::DimensionMismatch, "distance buffer too small");
  const float* base = store.matrix().data();
  double tile[kQueryTile * kRowTile];
  for (std::size_t rb = 0; rb < n; rb += kRowTile) {
    std::array<const float*, kRowTile> rp;
    for (std::size_t j = 0; j < kRowTile; ++j) rp[j] = base + std::min(rb + j, n - 1) * dim;
    for (std::size_t qb = 0; qb < count; qb += kQueryTile) {
      std::array<const float*, kQueryTile> qp;
      for (std::size_t i = 0; i < kQueryTile; ++i) qp[i] = base + (first + std::min(qb + i, count - 1)) * dim;
      dot_tile<kQueryTile, kRowTile>(qp, rp, dim, tile);
      for (std::size_t i = 0; i < kQueryTile && qb + i < count; ++i) {
        for (std::size_t j = 0; j < kRowTile && rb + j < n; ++j) {
          const std::size_t q = qb + i;
          const std::size_t r = rb + j;
          out[q * n + r] = first + q == r ? kExcludedDistance : distance_from_dot(tile[i * kRowTile + j], qp[i], rp[j], dim);
        }
      }
    }
  }
}

std::vector<float> distances_from(const EmbeddingStore& store, std::size_t query_row) {
  const std::size_t n = store.size();
  const std::size_t dim = store.dim();
  std::vector<float> out(n);
  const float* base = store.matrix().data();
  const std::array<const float*, 1> qp{base + query_row * dim};
  constexpr std::size_t kChunk = 4096;
  parallel_for((n + kChunk - 1) / kChunk, [&](std::size_t task) {
    const std::size_t begin = task * kChunk;
    const std::size_t end = std::min(n, begin + kChunk);
    double tile[kRowTile];
    for (std::size_t rb = begin; rb < end; rb += kRowTile) {
      std::array<const float*, kRowTile> rp;
      for (std::size_t j = 0; j < kRowTile; ++j) rp[j] = base + std::min(rb + j, n - 1) * dim;
      dot_tile<1, kRowTile>(qp, rp, dim, tile);
      for (std::size_t j = 0; j < kRowTile && rb + j < end; ++j) out[rb + j] = distance_from_dot(tile[j], qp[0], rp[j], dim);
    }
  });
  out[query_row] = kExcludedDistance;
  return out;
}

RankedMatches topk(const EmbeddingStore& store, std::string_view query_id, std::size_t k) {
  const std::size_t q = store.row_of(query_id);
  if (k == 0) throw Error(Errc::InvalidConfig, "k must be >= 1");
  return select_topk(store, q, k, distances_from(store, q), nullptr);
}

std::vector<std::string> identity_cap_order(std::vector<std::string> ids, const IdentityKey& identity,
                                            std::uint64_t cap_seed) {
  Rng rng = make_substream(cap_seed, identity.str());
  shuffle(ids, rng);
  return ids;
}

IdentityCap::IdentityCap(const EmbeddingStore& store, const IdentityMap& identity_of, std::size_t max_per_identity,
                         std::uint64_t cap_seed)
    : max_per_identity_(max_per_identity) {
  if (max_per_identity == 0) throw Error(Errc::InvalidConfig, "max_per_identity must be >= 1");
  std::map<IdentityKey, std::vector<std::string>> members;
  group_.resize(store.size());
  position_.resize(store.size());
  for (const auto& id : store.ids()) {
    const auto it = identity_of.find(id);
    if (it == identity_of.end()) throw Error(Errc::UnknownId, id);
    members[it->second].push_back(id);
  }
  std::uint32_t g = 0;
  for (auto& [key, ids] : members) {
    std::sort(ids.begin(), ids.end());
    const auto order = identity_cap_order(std::move(ids), key, cap_seed);
    for (std::size_t p = 0; p < order.size(); ++p) {
      const std::size_t r = store.row_of(order[p]);
      group_[r] = g;
      position_[r] = static_cast<std::uint32_t>(p);
    }
    group_sizes_.push_back(order.size());
    ++g;
  }
}

RankedMatches topk_capped(const EmbeddingStore& store, std::string_view query_id, std::size_t k,
                          const IdentityCap& cap) {
  const std::size_t q = store.row_of(query_id);
  if (k == 0) throw Error(Errc::InvalidConfig, "k must be >= 1");
  return select_topk(store, q, k, distances_from(store, q), &cap);
}

RankedMatches topk_capped(const EmbeddingStore& store, std::string_view query_id, std::size_t k,
                          std::size_t max_per_identity, const IdentityMap& identity_of, std::uint64_t cap_seed) {
  store.row_of(query_id);
  const IdentityCap cap(store, identity_of, max_per_identity, cap_seed);
  return topk_capped(store, query_id, k, cap);
}

PairwiseDistances::PairwiseDistances(const EmbeddingStore& store, std::size_t block_rows)
    : store_(store), block_rows_(std::max<std::size_t>(1, block_rows)) {}

bool PairwiseDistances::next(DistanceBlock& block) {
  if (cursor_ >= store_.size()) return false;
  block.first_row = cursor_;
  block.rows = std::min(block_rows_, store_.size() - cursor_);
  block.cols = store_.size();
  block.distances.resize(block.rows * block.cols);
  compute_distance_rows(store_, block.first_row, block.rows, block.distances);
  cursor_ += block.rows;
  return true;
}

}  // namespace reid
