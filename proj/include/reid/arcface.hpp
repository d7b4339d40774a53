#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace reid::arcface {

/// Frequency-based margins: rarest class gets m_max, most frequent m_min.
struct MarginPolicy {
  double m_min = 0.05;
  double m_max = 0.5;
  double exponent = 0.25;

  /// 0 < m_min < m_max < pi/2 and exponent > 0. Throws InvalidConfig.
  void validate() const;
};

/// m_c = m_min + (m_max - m_min) * (n_c^-l - n_max^-l) / (n_min^-l - n_max^-l);
/// all m_max when every count is equal. Throws InvalidCount for counts < 1.
std::vector<double> dynamic_margins(std::span<const std::int64_t> class_counts, const MarginPolicy& policy);

/// Sub-center ArcFace classifier head. Weights are stored unnormalized as
/// classes x subcenters x dim; the forward pass normalizes them.
template <typename T>
struct ArcHead {
  std::size_t classes = 0;
  std::size_t subcenters = 3;
  std::size_t dim = 0;
  std::vector<T> weights;
  T scale = T(51.5);
  std::vector<T> margins;  // per class, in [0, pi/2)

  /// Throws InvalidConfig.
  void validate() const;
  std::span<const T> subcenter(std::size_t c, std::size_t k) const {
    return {weights.data() + (c * subcenters + k) * dim, dim};
  }
};

template <typename T>
struct ArcForward {
  T loss = 0;
  std::vector<T> logits;  // batch x classes, already scaled
};

template <typename T>
struct ArcGradients {
  T loss = 0;
  std::vector<T> embeddings;  // batch x dim
  std::vector<T> weights;     // classes x subcenters x dim
};

/// Embeddings are batch x dim, row-major. The class cosine is the max over
/// its subcenters (lowest index on ties); the target angle gets +m, or
/// cos - m*sin(m) once theta + m would pass pi. Loss is mean cross-entropy.
/// Throws LabelOutOfRange, NonFiniteInput, DimensionMismatch.
template <typename T>
ArcForward<T> arcface_forward(std::span<const T> embeddings, std::span<const std::size_t> labels,
                              const ArcHead<T>& head);

/// Analytic gradients of arcface_forward's loss.
template <typename T>
ArcGradients<T> arcface_backward(std::span<const T> embeddings, std::span<const std::size_t> labels,
                                 const ArcHead<T>& head);

struct GemPool {
  double p = 3.0;
  bool learnable = false;
  double epsilon = 1e-6;
};

/// Generalized-mean pooling over a height x width x depth map (depth
/// contiguous): out_d = (mean x^p)^(1/p), inputs clamped to >= epsilon.
/// Throws NonFiniteInput, DimensionMismatch.
template <typename T>
std::vector<T> gem_pool(std::span<const T> features, std::size_t height, std::size_t width, std::size_t depth,
                        const GemPool& pool);

template <typename T>
struct GemGradients {
  std::vector<T> features;
  T p = 0;  // d(sum_d grad_out_d * out_d)/dp
};

template <typename T>
GemGradients<T> gem_pool_backward(std::span<const T> features, std::size_t height, std::size_t width,
                                  std::size_t depth, const GemPool& pool, std::span<const T> grad_out);

/// Linear warmup from lr_start to lr_peak over warmup_epochs, then
/// lr_peak * decay^(epoch - warmup_epochs).
struct LrSchedule {
  std::size_t warmup_epochs = 15;
  double lr_start = 1.5e-5;
  double lr_peak = 1.5e-3;
  double decay = 0.8;
};

double lr_at(std::size_t epoch, const LrSchedule& schedule);

// Recorded for reference; the toy trainer works on vectors, not images.
inline constexpr std::size_t kReferenceBatchSize = 112;
inline constexpr std::size_t kReferenceImageSize = 256;
inline constexpr std::size_t kReferenceSubcenters = 3;
inline constexpr double kReferenceScale = 51.5;

}  // namespace reid::arcface
