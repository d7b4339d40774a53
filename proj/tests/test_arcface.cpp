#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "generators.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "reid/arcface.hpp"
#include "reid/error.hpp"

using namespace reid;
using namespace reid::arcface;

namespace {

Errc error_code(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::IoError;
}

ArcHead<double> axis_head(double scale, double margin) {
  ArcHead<double> h;
  h.classes = 2;
  h.subcenters = 1;
  h.dim = 2;
  h.weights = {1, 0, 0, 1};
  h.scale = scale;
  h.margins = {margin, margin};
  return h;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_SUITE("arcface") {
  TEST_CASE("equal counts give the top margin everywhere") {
    const std::vector<std::int64_t> counts{7, 7, 7, 7};
    for (double m : dynamic_margins(counts, MarginPolicy{})) CHECK(m == 0.5);
  }

  TEST_CASE("rarest and most frequent classes hit the bounds exactly") {
    const std::vector<std::int64_t> counts{40, 3, 900, 12};
    const auto m = dynamic_margins(counts, MarginPolicy{});
    CHECK(m[1] == 0.5);
    CHECK(m[2] == 0.05);
    CHECK(m[0] > 0.05);
    CHECK(m[0] < m[3]);
  }

  TEST_CASE("margins for 3, 48, 768 follow the scalar formula") {
    const std::vector<std::int64_t> counts{3, 48, 768};
    const auto m = dynamic_margins(counts, MarginPolicy{0.05, 0.5, 0.25});
    for (std::size_t c = 0; c < counts.size(); ++c) {
      CHECK(m[c] == doctest::Approx(oracle::dynamic_margin(counts, c, 0.05, 0.5, 0.25)).epsilon(1e-14));
    }
    // 48^-0.25 = 1/(2 * 3^0.25) sits between 3^-0.25 and 768^-0.25 = 1/(4 * 3^0.25).
    const double t = std::pow(3.0, -0.25);
    CHECK(m[1] == doctest::Approx(0.05 + 0.45 * (t / 2 - t / 4) / (t - t / 4)).epsilon(1e-14));
    CHECK(m[1] == doctest::Approx(0.2).epsilon(1e-12));
  }

  TEST_CASE("margin errors") {
    const std::vector<std::int64_t> bad{3, 0, 4};
    CHECK(error_code([&] { dynamic_margins(bad, MarginPolicy{}); }) == Errc::InvalidCount);
    const std::vector<std::int64_t> ok{1, 2};
    CHECK(error_code([&] { dynamic_margins(ok, MarginPolicy{0.5, 0.05, 0.25}); }) == Errc::InvalidConfig);
    CHECK(error_code([&] { dynamic_margins(ok, MarginPolicy{0.0, 0.5, 0.25}); }) == Errc::InvalidConfig);
    CHECK(error_code([&] { dynamic_margins(ok, MarginPolicy{0.05, 1.6, 0.25}); }) == Errc::InvalidConfig);
    CHECK(error_code([&] { dynamic_margins(ok, MarginPolicy{0.05, 0.5, 0.0}); }) == Errc::InvalidConfig);
  }

  TEST_CASE("property: larger classes never get larger margins") {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
      std::vector<std::int64_t> counts(gen::between(rng, 1, 12));
      for (auto& c : counts) c = static_cast<std::int64_t>(gen::between(rng, 1, 1000));
      const MarginPolicy pol{0.01 + 0.2 * uniform01(rng), 0.3 + 1.2 * uniform01(rng), 0.05 + 2 * uniform01(rng)};
      const auto m = dynamic_margins(counts, pol);
      for (std::size_t a = 0; a < counts.size(); ++a) {
        CHECK(m[a] >= pol.m_min - 1e-15);
        CHECK(m[a] <= pol.m_max + 1e-15);
        for (std::size_t b = 0; b < counts.size(); ++b) {
          if (counts[a] <= counts[b]) CHECK(m[a] >= m[b]);
        }
      }
    }
  }

  TEST_CASE("two axis classes, embedding on the target axis, no margin") {
    for (double s : {51.5, 4.0, 1.0}) {
      const auto head = axis_head(s, 0.0);
      const std::vector<double> x{1, 0};
      const std::vector<std::size_t> y{0};
      const auto f = arcface_forward<double>(x, y, head);
      CHECK(f.logits[0] == s);
      CHECK(f.logits[1] == 0.0);
      const double want = -std::log(std::exp(s) / (std::exp(s) + std::exp(0.0)));
      CHECK(f.loss == doctest::Approx(want).epsilon(1e-12));
    }
  }

  TEST_CASE("zero margin equals cosine softmax") {
    Rng rng(21);
    for (int t = 0; t < 50; ++t) {
      auto in = gen::random_arc_instance(rng, 4, 5, 3, 8);
      std::fill(in.head.margins.begin(), in.head.margins.end(), 0.0);
      const double got = arcface_forward<double>(in.embeddings, in.labels, in.head).loss;
      CHECK(got == doctest::Approx(oracle::cosine_softmax_loss(in.embeddings, in.labels, in.head)).epsilon(1e-6));
    }
  }

  TEST_CASE("one subcenter equals plain ArcFace") {
    Rng rng(22);
    for (int t = 0; t < 100; ++t) {
      auto in = gen::random_arc_instance(rng, 4, 5, 1, 8);
      // Large margins and reversed embeddings reach the theta + m > pi branch.
      if (t % 3 == 0) {
        for (auto& m : in.head.margins) m = 1.0 + 0.5 * uniform01(rng);
        for (std::size_t b = 0; b < in.labels.size(); ++b) {
          for (std::size_t d = 0; d < in.head.dim; ++d) {
            in.embeddings[b * in.head.dim + d] = -in.head.subcenter(in.labels[b], 0)[d] + 0.1 * standard_normal(rng);
          }
        }
      }
      const double got = arcface_forward<double>(in.embeddings, in.labels, in.head).loss;
      const double want = oracle::plain_arcface_loss(in.embeddings, in.labels, in.head.weights, in.head.classes,
                                                     in.head.dim, in.head.scale, in.head.margins);
      CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
  }

  TEST_CASE("class cosine is the best subcenter") {
    ArcHead<double> h;
    h.classes = 2;
    h.subcenters = 3;
    h.dim = 3;
    // Class 0: two subcenters antipodal to x, one aligned. Class 1 orthogonal.
    h.weights = {-1, 0, 0, 2, 0, 0, -3, 0, 0, 0, 1, 0, 0, 0, 1, 0, -1, 0};
    h.scale = 10;
    h.margins = {0.0, 0.0};
    const std::vector<double> x{5, 0, 0};
    const std::vector<std::size_t> y{1};
    const auto f = arcface_forward<double>(x, y, h);
    CHECK(f.logits[0] == doctest::Approx(10.0));
    CHECK(f.logits[1] == doctest::Approx(0.0));
  }

  TEST_CASE("gradients match finite differences, seed 7") {
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
      const auto in = gen::random_arc_instance(rng, 4, 5, 3, 8);
      CHECK(gradcheck::max_error(in) < 1e-4);
    }
  }

  TEST_CASE("embedding gradient is orthogonal to the embedding") {
    // Symmetric point: x on the z axis, every class equally far from it.
    ArcHead<double> h;
    h.classes = 3;
    h.subcenters = 1;
    h.dim = 3;
    h.scale = 51.5;
    h.margins = {0, 0, 0};
    for (int c = 0; c < 3; ++c) {
      const double a = 2 * std::numbers::pi * c / 3;
      h.weights.insert(h.weights.end(), {std::cos(a), std::sin(a), 1.0});
    }
    const std::vector<double> x{0, 0, 2};
    const std::vector<std::size_t> y{1};
    const auto f = arcface_forward<double>(x, y, h);
    CHECK(f.logits[0] == doctest::Approx(f.logits[1]));
    CHECK(f.logits[1] == doctest::Approx(f.logits[2]));
    CHECK(f.loss == doctest::Approx(std::log(3.0)));
    const auto g = arcface_backward<double>(x, y, h);
    CHECK(std::abs(dot(g.embeddings, x)) < 1e-12);

    Rng rng(8);
    for (int t = 0; t < 30; ++t) {
      const auto in = gen::random_arc_instance(rng, 1, 5, 3, 8);
      const auto gr = arcface_backward<double>(in.embeddings, in.labels, in.head);
      const double scale = std::sqrt(dot(gr.embeddings, gr.embeddings) * dot(in.embeddings, in.embeddings));
      CHECK(std::abs(dot(gr.embeddings, in.embeddings)) <= 1e-12 * std::max(scale, 1.0));
    }
  }

  TEST_CASE("a subcenter tie sends the gradient to the lower index") {
    ArcHead<double> h;
    h.classes = 2;
    h.subcenters = 2;
    h.dim = 3;
    h.weights = {1, 0.5, 0, 1, 0.5, 0, 0, 1, 1, 0, -1, 1};
    h.scale = 51.5;
    h.margins = {0.3, 0.3};
    const std::vector<double> x{1, 0.2, 0.1};
    const std::vector<std::size_t> y{0};
    const auto g = arcface_backward<double>(x, y, h);
    double first = 0, second = 0;
    for (std::size_t d = 0; d < 3; ++d) {
      first += std::abs(g.weights[d]);
      second += std::abs(g.weights[3 + d]);
    }
    CHECK(first > 0);
    CHECK(second == 0);

    // Nudging subcenter 0 toward x makes it the unique max; its gradient
    // approaches the tie value.
    auto nudged = h;
    nudged.weights[2] += 1e-7;
    const auto gn = arcface_backward<double>(x, y, nudged);
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(gn.weights[d] == doctest::Approx(g.weights[d]).epsilon(1e-4));
      CHECK(gn.weights[3 + d] == 0);
    }
  }

  TEST_CASE("forward ignores input scale") {
    Rng rng(31);
    for (int t = 0; t < 50; ++t) {
      auto in = gen::random_arc_instance(rng, 4, 5, 3, 8);
      const auto base = arcface_forward<double>(in.embeddings, in.labels, in.head);
      const double alpha = std::exp(4 * (uniform01(rng) - 0.5) * std::log(10.0));
      for (auto& v : in.embeddings) v *= alpha;
      const auto scaled = arcface_forward<double>(in.embeddings, in.labels, in.head);
      CHECK(scaled.loss == doctest::Approx(base.loss).epsilon(1e-6));
      for (std::size_t i = 0; i < base.logits.size(); ++i) {
        CHECK(scaled.logits[i] == doctest::Approx(base.logits[i]).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("single and double precision agree") {
    Rng rng(32);
    for (int t = 0; t < 30; ++t) {
      const auto in = gen::random_arc_instance(rng, 4, 5, 3, 8);
      ArcHead<float> hf;
      hf.classes = in.head.classes;
      hf.subcenters = in.head.subcenters;
      hf.dim = in.head.dim;
      hf.scale = static_cast<float>(in.head.scale);
      for (double w : in.head.weights) hf.weights.push_back(static_cast<float>(w));
      for (double m : in.head.margins) hf.margins.push_back(static_cast<float>(m));
      std::vector<float> xf(in.embeddings.begin(), in.embeddings.end());
      const auto d = arcface_forward<double>(in.embeddings, in.labels, in.head);
      const auto f = arcface_forward<float>(xf, in.labels, hf);
      CHECK(f.loss == doctest::Approx(d.loss).epsilon(1e-3).scale(1.0));
      const auto gd = arcface_backward<double>(in.embeddings, in.labels, in.head);
      const auto gf = arcface_backward<float>(xf, in.labels, hf);
      for (std::size_t i = 0; i < gd.weights.size(); ++i) {
        CHECK(std::abs(gf.weights[i] - gd.weights[i]) <= 1e-2 * std::max(1.0, std::abs(gd.weights[i])));
      }
    }
  }

  TEST_CASE("forward errors") {
    auto head = axis_head(10, 0.2);
    const std::vector<double> x{1, 0};
    CHECK(error_code([&] { arcface_forward<double>(x, std::vector<std::size_t>{2}, head); }) == Errc::LabelOutOfRange);
    const std::vector<double> nan{std::numeric_limits<double>::quiet_NaN(), 0};
    CHECK(error_code([&] { arcface_forward<double>(nan, std::vector<std::size_t>{0}, head); }) ==
          Errc::NonFiniteInput);
    const std::vector<double> zero{0, 0};
    CHECK(error_code([&] { arcface_forward<double>(zero, std::vector<std::size_t>{0}, head); }) ==
          Errc::NonFiniteInput);
    const std::vector<double> odd{1, 0, 1};
    CHECK(error_code([&] { arcface_forward<double>(odd, std::vector<std::size_t>{0}, head); }) ==
          Errc::DimensionMismatch);
    CHECK(error_code([&] { arcface_backward<double>(x, std::vector<std::size_t>{5}, head); }) ==
          Errc::LabelOutOfRange);
    head.margins = {0.2, 1.6};
    CHECK(error_code([&] { arcface_forward<double>(x, std::vector<std::size_t>{0}, head); }) == Errc::InvalidConfig);
    head = axis_head(10, 0.2);
    head.weights[1] = std::numeric_limits<double>::infinity();
    CHECK(error_code([&] { arcface_forward<double>(x, std::vector<std::size_t>{0}, head); }) == Errc::NonFiniteInput);
  }

  TEST_CASE("GeM on a constant map returns the constant") {
    const std::vector<double> map(5 * 4 * 3, 2.75);
    for (double p : {0.5, 1.0, 3.0, 10.0}) {
      for (double v : gem_pool<double>(map, 5, 4, 3, GemPool{p})) CHECK(v == doctest::Approx(2.75).epsilon(1e-12));
    }
  }

  TEST_CASE("GeM with p = 1 is the mean") {
    Rng rng(41);
    std::vector<double> map(6 * 7 * 4);
    for (auto& v : map) v = 0.01 + 5 * uniform01(rng);
    const auto out = gem_pool<double>(map, 6, 7, 4, GemPool{1.0});
    for (std::size_t d = 0; d < 4; ++d) {
      double sum = 0;
      for (std::size_t i = 0; i < 42; ++i) sum += map[i * 4 + d];
      CHECK(std::abs(out[d] - sum / 42) < 1e-9);
    }
  }

  TEST_CASE("GeM of 1, 2, 3, 4 with p = 3") {
    const std::vector<double> map{1, 2, 3, 4};
    const auto out = gem_pool<double>(map, 2, 2, 1, GemPool{3.0});
    CHECK(out[0] == doctest::Approx(std::cbrt(25.0)).epsilon(1e-14));
    CHECK(out[0] == doctest::Approx(2.9240).epsilon(1e-4));
    const auto big = gem_pool<double>(map, 2, 2, 1, GemPool{200.0});
    CHECK(big[0] > 3.9);
  }

  TEST_CASE("property: GeM lies between min and max") {
    Rng rng(42);
    for (int t = 0; t < 100; ++t) {
      const std::size_t h = gen::between(rng, 1, 5), w = gen::between(rng, 1, 5), d = gen::between(rng, 1, 4);
      std::vector<double> map(h * w * d);
      for (auto& v : map) v = 3 * uniform01(rng);
      const double p = 1 + 6 * uniform01(rng);
      const auto out = gem_pool<double>(map, h, w, d, GemPool{p});
      for (std::size_t k = 0; k < d; ++k) {
        double lo = 1e300, hi = 0;
        for (std::size_t i = 0; i < h * w; ++i) {
          lo = std::min(lo, std::max(map[i * d + k], 1e-6));
          hi = std::max(hi, std::max(map[i * d + k], 1e-6));
        }
        CHECK(out[k] >= lo * (1 - 1e-12));
        CHECK(out[k] <= hi * (1 + 1e-12));
      }
    }
  }

  TEST_CASE("GeM backward matches finite differences") {
    Rng rng(43);
    for (int t = 0; t < 20; ++t) {
      const std::size_t h = 3, w = 2, d = 3;
      std::vector<double> map(h * w * d);
      for (auto& v : map) v = 0.1 + 2 * uniform01(rng);
      std::vector<double> grad_out(d);
      for (auto& g : grad_out) g = standard_normal(rng);
      GemPool pool{1 + 4 * uniform01(rng)};
      auto objective = [&] {
        const auto out = gem_pool<double>(map, h, w, d, pool);
        return dot(out, grad_out);
      };
      const auto g = gem_pool_backward<double>(map, h, w, d, pool, grad_out);
      for (std::size_t i = 0; i < map.size(); ++i) {
        const double n = oracle::central_difference(objective, map[i], 1e-6);
        CHECK(oracle::relative_error(g.features[i], n) < 1e-5);
      }
      const double np = oracle::central_difference(objective, pool.p, 1e-6);
      CHECK(oracle::relative_error(g.p, np) < 1e-5);
    }
  }

  TEST_CASE("GeM errors") {
    const std::vector<double> map{1, 2, 3};
    CHECK(error_code([&] { gem_pool<double>(map, 2, 2, 1, GemPool{}); }) == Errc::DimensionMismatch);
    const std::vector<double> bad{1, std::numeric_limits<double>::quiet_NaN()};
    CHECK(error_code([&] { gem_pool<double>(bad, 1, 2, 1, GemPool{}); }) == Errc::NonFiniteInput);
    CHECK(error_code([&] { gem_pool<double>(std::vector<double>{1.0}, 1, 1, 1, GemPool{0.0}); }) ==
          Errc::InvalidConfig);
  }

  TEST_CASE("learning rate schedule") {
    const LrSchedule s;
    CHECK(lr_at(0, s) == 1.5e-5);
    CHECK(lr_at(15, s) == 1.5e-3);
    CHECK(lr_at(17, s) == doctest::Approx(9.6e-4).epsilon(1e-14));
    CHECK(lr_at(16, s) == doctest::Approx(1.5e-3 * 0.8).epsilon(1e-14));
    for (std::size_t e = 1; e < 15; ++e) {
      CHECK(lr_at(e, s) > lr_at(e - 1, s));
      CHECK(lr_at(e, s) == doctest::Approx(1.5e-5 + (1.5e-3 - 1.5e-5) * static_cast<double>(e) / 15.0));
    }
    // The warmup line meets the peak at the boundary.
    const double slope = (lr_at(14, s) - lr_at(13, s));
    CHECK(lr_at(14, s) + slope == doctest::Approx(lr_at(15, s)).epsilon(1e-12));
    for (std::size_t e = 16; e < 40; ++e) CHECK(lr_at(e, s) < lr_at(e - 1, s));
  }

  TEST_CASE("reference constants") {
    CHECK(kReferenceBatchSize == 112);
    CHECK(kReferenceImageSize == 256);
    CHECK(kReferenceSubcenters == ArcHead<double>{}.subcenters);
    CHECK(kReferenceScale == ArcHead<double>{}.scale);
  }
}
