// Hand-rolled random generators for property tests.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "reid/arcface.hpp"
#include "reid/catalog.hpp"
#include "reid/retrieval.hpp"
#include "reid/rng.hpp"

namespace gen {

inline std::size_t between(reid::Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(reid::uniform_below(rng, hi - lo + 1));
}

inline std::string id_for(std::size_t i, reid::Rng& rng) {
  // Mixed-length ids so lexicographic and numeric order disagree.
  return "a" + std::to_string(i) + (reid::uniform_below(rng, 3) == 0 ? "x" : "");
}

struct LabeledStore {
  reid::EmbeddingStore store;
  reid::IdentityMap identity_of;
  std::vector<std::string> ids;
  std::vector<float> raw;
  std::size_t dim = 0;
};

// Random store of n rows in `identities` groups. Some rows are exact copies
// of earlier rows and, with `quantized`, coordinates come from {-2..2}, so
// exact distance ties are common.
inline LabeledStore random_store(reid::Rng& rng, std::size_t n, std::size_t dim, std::size_t identities,
                                 bool quantized) {
  LabeledStore out;
  out.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::string id;
    do {
      id = id_for(i, rng);
    } while (std::find(out.ids.begin(), out.ids.end(), id) != out.ids.end());
    out.ids.push_back(id);
    if (i > 0 && reid::uniform_below(rng, 5) == 0) {
      const std::size_t src = reid::uniform_below(rng, i);
      for (std::size_t d = 0; d < dim; ++d) out.raw.push_back(out.raw[src * dim + d]);
    } else {
      bool nonzero = false;
      for (std::size_t d = 0; d < dim; ++d) {
        float v = quantized ? static_cast<float>(static_cast<int>(reid::uniform_below(rng, 5)) - 2)
                            : static_cast<float>(reid::standard_normal(rng));
        if (d + 1 == dim && !nonzero && v == 0.0f) v = 1.0f;
        nonzero = nonzero || v != 0.0f;
        out.raw.push_back(v);
      }
    }
    const auto g = reid::uniform_below(rng, identities);
    out.identity_of[id] = reid::IdentityKey{"sp", "ind" + std::to_string(g), std::nullopt};
  }
  out.store = reid::build_store("sp", out.ids, out.raw, dim);
  return out;
}

// Catalog for split tests: `species` species with identity sizes drawn from
// [min_size, max_size]; encounters shared by a few annotations.
inline reid::Catalog random_catalog(reid::Rng& rng, std::size_t species, std::size_t identities_lo,
                                    std::size_t identities_hi, std::size_t min_size, std::size_t max_size) {
  std::vector<reid::Annotation> anns;
  reid::PolicyTable policies;
  std::size_t next = 0;
  for (std::size_t s = 0; s < species; ++s) {
    const std::string sp = "species" + std::to_string(s);
    reid::SpeciesPolicy pol;
    pol.species = sp;
    pol.viewpoint_splits_identity = false;
    policies.emplace(sp, pol);
    const std::size_t n_ident = between(rng, identities_lo, identities_hi);
    std::size_t encounter = 0;
    for (std::size_t i = 0; i < n_ident; ++i) {
      const std::size_t size = between(rng, min_size, max_size);
      for (std::size_t j = 0; j < size; ++j) {
        reid::Annotation a;
        a.annotation_id = "ann" + std::to_string(next++);
        a.species = sp;
        a.individual_id = "ind" + std::to_string(i);
        // About one annotation in five joins its predecessor's encounter.
        if (j == 0 || reid::uniform_below(rng, 5) != 0) ++encounter;
        a.encounter_id = "enc" + std::to_string(encounter);
        anns.push_back(a);
      }
    }
  }
  return reid::Catalog(std::move(anns), std::move(policies));
}

struct ArcInstance {
  reid::arcface::ArcHead<double> head;
  std::vector<double> embeddings;
  std::vector<std::size_t> labels;
};

inline ArcInstance random_arc_instance(reid::Rng& rng, std::size_t max_batch, std::size_t max_classes,
                                       std::size_t max_subcenters, std::size_t max_dim) {
  ArcInstance in;
  const std::size_t batch = between(rng, 1, max_batch);
  auto& h = in.head;
  h.classes = between(rng, 2, max_classes);
  h.subcenters = between(rng, 1, max_subcenters);
  h.dim = between(rng, 2, max_dim);
  h.scale = 51.5;
  for (std::size_t i = 0; i < h.classes * h.subcenters * h.dim; ++i) h.weights.push_back(reid::standard_normal(rng));
  for (std::size_t c = 0; c < h.classes; ++c) h.margins.push_back(0.05 + 0.45 * reid::uniform01(rng));
  for (std::size_t i = 0; i < batch * h.dim; ++i) in.embeddings.push_back(reid::standard_normal(rng));
  for (std::size_t b = 0; b < batch; ++b) in.labels.push_back(reid::uniform_below(rng, h.classes));
  return in;
}

}  // namespace gen
