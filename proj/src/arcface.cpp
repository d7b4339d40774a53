#include "reid/arcface.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "reid/error.hpp"

namespace reid::arcface {

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, what);
  }
}

// Normalized copies of `rows` (count x dim) plus the original norms.
template <typename T>
void normalize_rows(std::span<const T> rows, std::size_t dim, std::vector<T>& unit, std::vector<T>& norms,
                    const char* what) {
  const std::size_t count = rows.size() / dim;
  unit.resize(rows.size());
  norms.resize(count);
  for (std::size_t r = 0; r < count; ++r) {
    const T* src = rows.data() + r * dim;
    const T norm = std::sqrt(dot(src, src, dim));
    if (!(norm > 0)) throw Error(Errc::NonFiniteInput, std::string(what) + " row " + std::to_string(r) + " has zero norm");
    norms[r] = norm;
    for (std::size_t d = 0; d < dim; ++d) unit[r * dim + d] = src[d] / norm;
  }
}

// Everything the backward pass needs from one forward evaluation.
template <typename T>
struct ForwardState {
  std::size_t batch = 0;
  std::vector<T> x, x_norm;   // normalized embeddings, norms
  std::vector<T> w, w_norm;   // normalized subcenters, norms
  std::vector<std::size_t> winner;  // batch x classes: winning subcenter
  std::vector<T> logits;            // batch x classes
  std::vector<T> target_slope;      // d(target logit cosine)/d(class cosine)
  T loss = 0;
};

template <typename T>
ForwardState<T> run_forward(std::span<const T> embeddings, std::span<const std::size_t> labels, const ArcHead<T>& head) {
  head.validate();
  const std::size_t C = head.classes, K = head.subcenters, D = head.dim;
  if (embeddings.empty() || embeddings.size() % D != 0) throw Error(Errc::DimensionMismatch, "embeddings not batch x dim");
  ForwardState<T> st;
  st.batch = embeddings.size() / D;
  if (labels.size() != st.batch) throw Error(Errc::DimensionMismatch, "labels size != batch");
  for (std::size_t l : labels) {
    if (l >= C) throw Error(Errc::LabelOutOfRange, std::to_string(l));
  }
  check_finite(embeddings, "embeddings");
  check_finite(std::span<const T>(head.weights), "weights");

  normalize_rows(embeddings, D, st.x, st.x_norm, "embedding");
  normalize_rows(std::span<const T>(head.weights), D, st.w, st.w_norm, "subcenter");

  const T s = head.scale;
  st.winner.resize(st.batch * C);
  st.logits.resize(st.batch * C);
  st.target_slope.resize(st.batch);
  T total = 0;
  for (std::size_t b = 0; b < st.batch; ++b) {
    const T* xb = st.x.data() + b * D;
    T* z = st.logits.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best_k = 0;
      T best = dot(xb, st.w.data() + (c * K) * D, D);
      for (std::size_t k = 1; k < K; ++k) {
        const T v = dot(xb, st.w.data() + (c * K + k) * D, D);
        if (v > best) {
          best = v;
          best_k = k;
        }
      }
      st.winner[b * C + c] = best_k;
      z[c] = best;
    }

    const std::size_t t = labels[b];
    const T m = head.margins[t];
    const T cos_t = std::clamp(z[t], T(-1), T(1));
    const T cos_m = std::cos(m), sin_m = std::sin(m);
    T phi, slope;
    if (cos_t > std::cos(std::numbers::pi_v<T> - m)) {
      const T sin_t = std::sqrt(std::max(T(0), T(1) - cos_t * cos_t));
      phi = cos_t * cos_m - sin_t * sin_m;
      slope = cos_m + sin_m * cos_t / std::max(sin_t, std::numeric_limits<T>::epsilon());
    } else {
      phi = cos_t - m * sin_m;
      slope = 1;
    }
    st.target_slope[b] = slope;
    z[t] = phi;
    for (std::size_t c = 0; c < C; ++c) z[c] *= s;

    const T zmax = *std::max_element(z, z + C);
    T sum = 0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - zmax);
    total += zmax + std::log(sum) - z[t];
  }
  st.loss = total / static_cast<T>(st.batch);
  return st;
}

}  // namespace

void MarginPolicy::validate() const {
  if (!(m_min > 0.0 && m_min < m_max && m_max < std::numbers::pi / 2)) {
    throw Error(Errc::InvalidConfig, "margin policy needs 0 < m_min < m_max < pi/2");
  }
  if (!(exponent > 0.0)) throw Error(Errc::InvalidConfig, "margin exponent must be > 0");
}

std::vector<double> dynamic_margins(std::span<const std::int64_t> class_counts, const MarginPolicy& policy) {
  policy.validate();
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    if (class_counts[c] < 1) throw Error(Errc::InvalidCount, std::to_string(c));
  }
  std::vector<double> out(class_counts.size(), policy.m_max);
  if (class_counts.empty()) return out;
  const auto [lo, hi] = std::minmax_element(class_counts.begin(), class_counts.end());
  if (*lo == *hi) return out;
  const double l = policy.exponent;
  const double top = std::pow(static_cast<double>(*lo), -l);
  const double bottom = std::pow(static_cast<double>(*hi), -l);
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    const double v = std::pow(static_cast<double>(class_counts[c]), -l);
    out[c] = policy.m_min + (policy.m_max - policy.m_min) * (v - bottom) / (top - bottom);
  }
  return out;
}

template <typename T>
void ArcHead<T>::validate() const {
  if (classes == 0 || subcenters == 0 || dim == 0) throw Error(Errc::InvalidConfig, "head dimensions must be positive");
  if (weights.size() != classes * subcenters * dim) throw Error(Errc::DimensionMismatch, "weights size");
  if (margins.size() != classes) throw Error(Errc::DimensionMismatch, "margins size");
  if (!(scale > 0)) throw Error(Errc::InvalidConfig, "scale must be > 0");
  for (T m : margins) {
    if (!(m >= 0 && m < std::numbers::pi_v<T> / 2)) throw Error(Errc::InvalidConfig, "margin outside [0, pi/2)");
  }
}

template <typename T>
ArcForward<T> arcface_forward(std::span<const T> embeddings, std::span<const std::size_t> labels,
                              const ArcHead<T>& head) {
  auto st = run_forward(embeddings, labels, head);
  return {st.loss, std::move(st.logits)};
}

template <typename T>
ArcGradients<T> arcface_backward(std::span<const T> embeddings, std::span<const std::size_t> labels,
                                 const ArcHead<T>& head) {
  const auto st = run_forward(embeddings, labels, head);
  const std::size_t C = head.classes, K = head.subcenters, D = head.dim, B = st.batch;
  const T s = head.scale;

  std::vector<T> grad_x(B * D, T(0));
  std::vector<T> grad_w(C * K * D, T(0));
  std::vector<T> prob(C);
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = st.logits.data() + b * C;
    const T zmax = *std::max_element(z, z + C);
    T sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
      prob[c] = std::exp(z[c] - zmax);
      sum += prob[c];
    }
    const T* xb = st.x.data() + b * D;
    T* gx = grad_x.data() + b * D;
    for (std::size_t c = 0; c < C; ++c) {
      T g = (prob[c] / sum - (c == labels[b] ? T(1) : T(0))) / static_cast<T>(B) * s;
      if (c == labels[b]) g *= st.target_slope[b];
      const std::size_t row = c * K + st.winner[b * C + c];
      const T* wk = st.w.data() + row * D;
      T* gw = grad_w.data() + row * D;
      for (std::size_t d = 0; d < D; ++d) {
        gx[d] += g * wk[d];
        gw[d] += g * xb[d];
      }
    }
  }

  // Chain through v -> v / |v|: (g - (g.u) u) / |v|.
  ArcGradients<T> out;
  out.loss = st.loss;
  out.embeddings.resize(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    const T* u = st.x.data() + b * D;
    const T* g = grad_x.data() + b * D;
    const T gu = dot(g, u, D);
    for (std::size_t d = 0; d < D; ++d) out.embeddings[b * D + d] = (g[d] - gu * u[d]) / st.x_norm[b];
  }
  out.weights.resize(C * K * D);
  for (std::size_t r = 0; r < C * K; ++r) {
    const T* u = st.w.data() + r * D;
    const T* g = grad_w.data() + r * D;
    const T gu = dot(g, u, D);
    for (std::size_t d = 0; d < D; ++d) out.weights[r * D + d] = (g[d] - gu * u[d]) / st.w_norm[r];
  }
  return out;
}

template <typename T>
std::vector<T> gem_pool(std::span<const T> features, std::size_t height, std::size_t width, std::size_t depth,
                        const GemPool& pool) {
  const std::size_t positions = height * width;
  if (positions == 0 || depth == 0 || features.size() != positions * depth) {
    throw Error(Errc::DimensionMismatch, "features not height x width x depth");
  }
  if (!(pool.p > 0.0) || !std::isfinite(pool.p)) throw Error(Errc::InvalidConfig, "GeM p must be finite and > 0");
  check_finite(features, "features");
  const T p = static_cast<T>(pool.p);
  const T eps = static_cast<T>(pool.epsilon);
  std::vector<T> out(depth, T(0));
  for (std::size_t i = 0; i < positions; ++i) {
    for (std::size_t d = 0; d < depth; ++d) out[d] += std::pow(std::max(features[i * depth + d], eps), p);
  }
  for (auto& v : out) v = std::pow(v / static_cast<T>(positions), T(1) / p);
  return out;
}

template <typename T>
GemGradients<T> gem_pool_backward(std::span<const T> features, std::size_t height, std::size_t width,
                                  std::size_t depth, const GemPool& pool, std::span<const T> grad_out) {
  const auto pooled = gem_pool(features, height, width, depth, pool);
  if (grad_out.size() != depth) throw Error(Errc::DimensionMismatch, "grad_out size");
  const std::size_t positions = height * width;
  const T n = static_cast<T>(positions);
  const T p = static_cast<T>(pool.p);
  const T eps = static_cast<T>(pool.epsilon);

  GemGradients<T> out;
  out.features.assign(features.size(), T(0));
  for (std::size_t d = 0; d < depth; ++d) {
    const T y = pooled[d];
    const T mean_pow = std::pow(y, p);  // mean of x^p
    T mean_pow_log = 0;
    for (std::size_t i = 0; i < positions; ++i) {
      const T raw = features[i * depth + d];
      const T x = std::max(raw, eps);
      const T xp = std::pow(x, p);
      mean_pow_log += xp * std::log(x) / n;
      // Clamped entries do not move the output.
      if (raw > eps) out.features[i * depth + d] = grad_out[d] * std::pow(x, p - 1) * std::pow(mean_pow, T(1) / p - 1) / n;
    }
    const T dy_dp = y * (-std::log(mean_pow) / (p * p) + mean_pow_log / (p * mean_pow));
    out.p += grad_out[d] * dy_dp;
  }
  return out;
}

double lr_at(std::size_t epoch, const LrSchedule& schedule) {
  if (epoch < schedule.warmup_epochs) {
    return schedule.lr_start + (schedule.lr_peak - schedule.lr_start) * static_cast<double>(epoch) /
                                   static_cast<double>(schedule.warmup_epochs);
  }
  return schedule.lr_peak * std::pow(schedule.decay, static_cast<double>(epoch - schedule.warmup_epochs));
}

template struct ArcHead<float>;
template struct ArcHead<double>;
template ArcForward<float> arcface_forward(std::span<const float>, std::span<const std::size_t>, const ArcHead<float>&);
template ArcForward<double> arcface_forward(std::span<const double>, std::span<const std::size_t>, const ArcHead<double>&);
template ArcGradients<float> arcface_backward(std::span<const float>, std::span<const std::size_t>, const ArcHead<float>&);
template ArcGradients<double> arcface_backward(std::span<const double>, std::span<const std::size_t>,
                                               const ArcHead<double>&);
template std::vector<float> gem_pool(std::span<const float>, std::size_t, std::size_t, std::size_t, const GemPool&);
template std::vector<double> gem_pool(std::span<const double>, std::size_t, std::size_t, std::size_t, const GemPool&);
template GemGradients<float> gem_pool_backward(std::span<const float>, std::size_t, std::size_t, std::size_t,
                                               const GemPool&, std::span<const float>);
template GemGradients<double> gem_pool_backward(std::span<const double>, std::size_t, std::size_t, std::size_t,
                                                const GemPool&, std::span<const double>);

}  // namespace reid::arcface
