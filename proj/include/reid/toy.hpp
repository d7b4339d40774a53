#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "reid/arcface.hpp"

namespace reid::toy {

/// Labeled vectors, row-major samples x input_dim.
struct Dataset {
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::vector<double> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const { return {features.data() + i * input_dim, input_dim}; }
  std::vector<std::int64_t> class_counts() const;
};

/// Gaussian clusters: class c has counts[c] samples around a center drawn
/// with per-coordinate std `separation`; sample noise has std `noise`. With
/// distinct_centers = false every class shares one center.
struct ClusterSpec {
  std::vector<std::size_t> counts;
  std::size_t dim = 16;
  double separation = 3.0;
  double noise = 1.0;
  bool distinct_centers = true;
};

Dataset make_clusters(const ClusterSpec& spec, std::uint64_t seed);

/// The last `per_class` samples of each class go to the second dataset.
std::pair<Dataset, Dataset> hold_out(const Dataset& data, std::size_t per_class);

struct Config {
  std::size_t embed_dim = 32;
  std::size_t subcenters = 3;
  double scale = 51.5;
  arcface::MarginPolicy margins;
  arcface::LrSchedule schedule;
  std::size_t epochs = 40;
  std::size_t batch_size = arcface::kReferenceBatchSize;
  std::uint64_t seed = 0;
  bool batch_norm = true;
};

/// Linear projection followed by an optional per-feature affine
/// normalization with frozen statistics.
struct Model {
  std::size_t input_dim = 0;
  std::size_t embed_dim = 0;
  std::vector<double> projection;  // embed_dim x input_dim
  std::vector<double> bias;
  bool batch_norm = true;
  std::vector<double> bn_mean, bn_var, bn_gamma, bn_beta;
  arcface::ArcHead<double> head;

  std::vector<double> embed(std::span<const double> x) const;
  /// Embeddings of every sample, samples x embed_dim.
  std::vector<double> embed_all(const Dataset& data) const;
};

struct Result {
  Model model;
  std::vector<double> loss_trace;  // full-dataset loss after each epoch
  std::vector<double> lr_trace;
};

/// Adam on projection, normalization affine and head, learning rate from
/// lr_at per epoch, margins from the class counts. Deterministic in seed.
/// Throws DegenerateDataset (< 2 classes or < 4 samples in some class).
Result train(const Dataset& data, const Config& config);

}  // namespace reid::toy
