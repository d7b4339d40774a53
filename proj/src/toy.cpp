#include "reid/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "reid/error.hpp"
#include "reid/rng.hpp"

namespace reid::toy {

namespace {

constexpr double kBnEps = 1e-5;

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  std::size_t t = 0;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad, double lr, std::size_t tick) {
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(tick));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(tick));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

std::vector<double> project(const Model& model, std::span<const double> x) {
  std::vector<double> z(model.embed_dim);
  for (std::size_t o = 0; o < model.embed_dim; ++o) {
    double s = model.bias[o];
    const double* w = model.projection.data() + o * model.input_dim;
    for (std::size_t i = 0; i < model.input_dim; ++i) s += w[i] * x[i];
    z[o] = s;
  }
  return z;
}

void refresh_statistics(Model& model, const Dataset& data) {
  const std::size_t D = model.embed_dim;
  std::vector<double> mean(D, 0.0), var(D, 0.0);
  std::vector<std::vector<double>> zs;
  zs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) zs.push_back(project(model, data.sample(i)));
  for (const auto& z : zs) {
    for (std::size_t d = 0; d < D; ++d) mean[d] += z[d];
  }
  for (auto& v : mean) v /= static_cast<double>(zs.size());
  for (const auto& z : zs) {
    for (std::size_t d = 0; d < D; ++d) var[d] += (z[d] - mean[d]) * (z[d] - mean[d]);
  }
  for (auto& v : var) v /= static_cast<double>(zs.size());
  model.bn_mean = std::move(mean);
  model.bn_var = std::move(var);
}

double dataset_loss(const Model& model, const Dataset& data) {
  const auto emb = model.embed_all(data);
  return arcface::arcface_forward<double>(emb, data.labels, model.head).loss;
}

}  // namespace

std::vector<std::int64_t> Dataset::class_counts() const {
  std::vector<std::int64_t> counts(classes, 0);
  for (std::size_t l : labels) ++counts[l];
  return counts;
}

Dataset make_clusters(const ClusterSpec& spec, std::uint64_t seed) {
  Dataset data;
  data.input_dim = spec.dim;
  data.classes = spec.counts.size();
  std::vector<double> shared(spec.dim);
  Rng shared_rng = make_substream(seed, "center/shared");
  for (auto& v : shared) v = spec.separation * standard_normal(shared_rng);
  for (std::size_t c = 0; c < spec.counts.size(); ++c) {
    Rng rng = make_substream(seed, "class/" + std::to_string(c));
    std::vector<double> center(spec.dim);
    for (auto& v : center) v = spec.separation * standard_normal(rng);
    if (!spec.distinct_centers) center = shared;
    for (std::size_t i = 0; i < spec.counts[c]; ++i) {
      for (std::size_t d = 0; d < spec.dim; ++d) data.features.push_back(center[d] + spec.noise * standard_normal(rng));
      data.labels.push_back(c);
    }
  }
  return data;
}

std::pair<Dataset, Dataset> hold_out(const Dataset& data, std::size_t per_class) {
  Dataset train, held;
  train.input_dim = held.input_dim = data.input_dim;
  train.classes = held.classes = data.classes;
  const auto counts = data.class_counts();
  std::vector<std::size_t> seen(data.classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = data.labels[i];
    const bool to_held = seen[c]++ >= static_cast<std::size_t>(counts[c]) - std::min<std::size_t>(per_class, counts[c]);
    Dataset& dst = to_held ? held : train;
    const auto x = data.sample(i);
    dst.features.insert(dst.features.end(), x.begin(), x.end());
    dst.labels.push_back(c);
  }
  return {std::move(train), std::move(held)};
}

std::vector<double> Model::embed(std::span<const double> x) const {
  auto z = project(*this, x);
  if (batch_norm) {
    for (std::size_t d = 0; d < embed_dim; ++d) {
      z[d] = bn_gamma[d] * (z[d] - bn_mean[d]) / std::sqrt(bn_var[d] + kBnEps) + bn_beta[d];
    }
  }
  return z;
}

std::vector<double> Model::embed_all(const Dataset& data) const {
  std::vector<double> out;
  out.reserve(data.size() * embed_dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto e = embed(data.sample(i));
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

Result train(const Dataset& data, const Config& config) {
  if (data.classes < 2) throw Error(Errc::DegenerateDataset, "need at least 2 classes");
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 4) throw Error(Errc::DegenerateDataset, "class " + std::to_string(c) + " has < 4 samples");
  }
  if (config.embed_dim == 0 || config.subcenters == 0 || config.batch_size == 0) {
    throw Error(Errc::InvalidConfig, "embed_dim, subcenters and batch_size must be positive");
  }

  Rng rng = make_substream(config.seed, "toy/init");
  Model model;
  model.input_dim = data.input_dim;
  model.embed_dim = config.embed_dim;
  model.batch_norm = config.batch_norm;
  model.projection.resize(config.embed_dim * data.input_dim);
  const double init_scale = 1.0 / std::sqrt(static_cast<double>(data.input_dim));
  for (auto& w : model.projection) w = init_scale * standard_normal(rng);
  model.bias.assign(config.embed_dim, 0.0);
  model.bn_mean.assign(config.embed_dim, 0.0);
  model.bn_var.assign(config.embed_dim, 1.0);
  model.bn_gamma.assign(config.embed_dim, 1.0);
  model.bn_beta.assign(config.embed_dim, 0.0);

  auto& head = model.head;
  head.classes = data.classes;
  head.subcenters = config.subcenters;
  head.dim = config.embed_dim;
  head.scale = config.scale;
  head.weights.resize(head.classes * head.subcenters * head.dim);
  for (auto& w : head.weights) w = standard_normal(rng);
  head.margins = arcface::dynamic_margins(counts, config.margins);

  const std::size_t D = config.embed_dim, F = data.input_dim;
  Adam opt_proj(model.projection.size()), opt_bias(D), opt_gamma(D), opt_beta(D), opt_head(head.weights.size());

  Result result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = make_substream(config.seed, "toy/shuffle");
  std::size_t tick = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = arcface::lr_at(epoch, config.schedule);
    if (config.batch_norm) refresh_statistics(model, data);
    shuffle(order, shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t B = end - start;
      std::vector<double> z(B * D), y(B * D);
      std::vector<std::size_t> labels(B);
      for (std::size_t b = 0; b < B; ++b) {
        const auto x = data.sample(order[start + b]);
        const auto zb = project(model, x);
        std::copy(zb.begin(), zb.end(), z.begin() + static_cast<std::ptrdiff_t>(b * D));
        labels[b] = data.labels[order[start + b]];
        for (std::size_t d = 0; d < D; ++d) {
          y[b * D + d] = config.batch_norm ? model.bn_gamma[d] * (zb[d] - model.bn_mean[d]) /
                                                     std::sqrt(model.bn_var[d] + kBnEps) +
                                                 model.bn_beta[d]
                                           : zb[d];
        }
      }
      const auto grads = arcface::arcface_backward<double>(y, labels, head);

      std::vector<double> g_proj(model.projection.size(), 0.0), g_bias(D, 0.0), g_gamma(D, 0.0), g_beta(D, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        const auto x = data.sample(order[start + b]);
        for (std::size_t d = 0; d < D; ++d) {
          const double gy = grads.embeddings[b * D + d];
          double gz = gy;
          if (config.batch_norm) {
            const double inv_sigma = 1.0 / std::sqrt(model.bn_var[d] + kBnEps);
            g_gamma[d] += gy * (z[b * D + d] - model.bn_mean[d]) * inv_sigma;
            g_beta[d] += gy;
            gz = gy * model.bn_gamma[d] * inv_sigma;
          }
          g_bias[d] += gz;
          double* gw = g_proj.data() + d * F;
          for (std::size_t i = 0; i < F; ++i) gw[i] += gz * x[i];
        }
      }
      ++tick;
      opt_proj.step(model.projection, g_proj, lr, tick);
      opt_bias.step(model.bias, g_bias, lr, tick);
      if (config.batch_norm) {
        opt_gamma.step(model.bn_gamma, g_gamma, lr, tick);
        opt_beta.step(model.bn_beta, g_beta, lr, tick);
      }
      opt_head.step(head.weights, grads.weights, lr, tick);
    }

    if (config.batch_norm) refresh_statistics(model, data);
    result.loss_trace.push_back(dataset_loss(model, data));
    result.lr_trace.push_back(lr);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace reid::toy
