// Finite-difference check of the ArcFace gradients, shared by the unit and
// acceptance suites.
#pragma once

#include <algorithm>
#include <span>

#include "generators.hpp"
#include "oracles.hpp"
#include "reid/arcface.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-5;

// Largest componentwise relative error between arcface_backward and central
// differences of arcface_forward, over every embedding and weight entry.
inline double max_error(gen::ArcInstance in) {
  using namespace reid::arcface;
  const auto grads = arcface_backward<double>(in.embeddings, in.labels, in.head);
  auto loss = [&] { return arcface_forward<double>(in.embeddings, in.labels, in.head).loss; };
  double worst = 0.0;
  for (std::size_t i = 0; i < in.embeddings.size(); ++i) {
    const double n = oracle::central_difference(loss, in.embeddings[i], kStep);
    worst = std::max(worst, oracle::relative_error(grads.embeddings[i], n));
  }
  for (std::size_t i = 0; i < in.head.weights.size(); ++i) {
    const double n = oracle::central_difference(loss, in.head.weights[i], kStep);
    worst = std::max(worst, oracle::relative_error(grads.weights[i], n));
  }
  return worst;
}

}  // namespace gradcheck
