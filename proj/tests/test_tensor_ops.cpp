#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "zootune/kernels.hpp"
#include "zootune/rng.hpp"
#include "zootune/tensor.hpp"

using namespace zootune;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Independent convolution reference: direct definition, different loop
// structure from the production kernel.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w,
                              const Tensor<double>* bias, int stride, int pad) {
  int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = w.dim(0), k = w.dim(2);
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, co, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = bias != nullptr ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
          for (int c = 0; c < ci; ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                int src_i = i * stride + u - pad;
                int src_j = j * stride + v - pad;
                if (src_i < 0 || src_i >= h || src_j < 0 || src_j >= wd) continue;
                acc += x(b, c, src_i, src_j) * w(o, c, u, v);
              }
          y(b, o, i, j) = acc;
        }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor construction and access") {
  Tensor<double> t({2, 3});
  REQUIRE(t.size() == 6);
  REQUIRE(t.ndim() == 2);
  for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == 0.0);
  t(1, 2) = 5.0;
  REQUIRE(t[5] == 5.0);

  Tensor<double> id = Tensor<double>::identity(3);
  REQUIRE(id(0, 0) == 1.0);
  REQUIRE(id(0, 1) == 0.0);
  REQUIRE(id(2, 2) == 1.0);

  REQUIRE_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  Tensor<double> r = t.reshaped({3, 2});
  REQUIRE(r.dim(0) == 3);
  REQUIRE(r[5] == 5.0);

  Tensor<double> bad({2}, {1.0, std::nan("")});
  REQUIRE_THROWS_AS(bad.require_finite("x"), ValueError);
}

TEST_CASE("conv2d known values") {
  // 2x2 input, 1x1 kernel of value 2: output is the doubled input.
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 1, 1}, {2});
  Tensor<double> y = detail::conv2d_fwd(x, w, static_cast<const Tensor<double>*>(nullptr), 1, 0);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
  REQUIRE(y[0] == 2.0);
  REQUIRE(y[3] == 8.0);

  // 3x3 all-ones kernel with pad 1 on all-ones 3x3 input: center sees 9.
  Tensor<double> x3 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> w3 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> y3 = detail::conv2d_fwd(x3, w3, static_cast<const Tensor<double>*>(nullptr), 1, 1);
  REQUIRE(y3(0, 0, 1, 1) == 9.0);
  REQUIRE(y3(0, 0, 0, 0) == 4.0);
  REQUIRE(y3(0, 0, 0, 1) == 6.0);

  Tensor<double> b({1}, {0.5});
  Tensor<double> yb = detail::conv2d_fwd(x3, w3, &b, 1, 1);
  REQUIRE(yb(0, 0, 1, 1) == 9.5);
}

TEST_CASE("conv2d matches reference on random shapes") {
  Rng rng(42);
  struct Case { int n, ci, co, h, k, stride, pad; };
  const Case cases[] = {
      {2, 3, 4, 8, 3, 1, 1}, {1, 2, 5, 7, 3, 2, 1}, {3, 4, 2, 6, 1, 1, 0},
      {2, 1, 1, 5, 3, 1, 0}, {1, 3, 3, 9, 3, 2, 1},
  };
  for (const Case& c : cases) {
    Tensor<double> x = random_tensor({c.n, c.ci, c.h, c.h}, rng);
    Tensor<double> w = random_tensor({c.co, c.ci, c.k, c.k}, rng);
    Tensor<double> bias = random_tensor({c.co}, rng);
    Tensor<double> got = detail::conv2d_fwd(x, w, &bias, c.stride, c.pad);
    Tensor<double> want = conv_reference(x, w, &bias, c.stride, c.pad);
    REQUIRE(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv2d is linear in the weight") {
  Rng rng(7);
  Tensor<double> x = random_tensor({2, 3, 6, 6}, rng);
  Tensor<double> w1 = random_tensor({4, 3, 3, 3}, rng);
  Tensor<double> w2 = random_tensor({4, 3, 3, 3}, rng);
  double a = 0.37, b = -1.21;
  Tensor<double> wc(w1.shape());
  for (std::size_t i = 0; i < wc.size(); ++i) wc[i] = a * w1[i] + b * w2[i];
  auto nb = static_cast<const Tensor<double>*>(nullptr);
  Tensor<double> lhs = detail::conv2d_fwd(x, wc, nb, 1, 1);
  Tensor<double> y1 = detail::conv2d_fwd(x, w1, nb, 1, 1);
  Tensor<double> y2 = detail::conv2d_fwd(x, w2, nb, 1, 1);
  double max_rel = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    double rhs = a * y1[i] + b * y2[i];
    double denom = std::max(std::fabs(lhs[i]), 1.0);
    max_rel = std::max(max_rel, std::fabs(lhs[i] - rhs) / denom);
  }
  REQUIRE(max_rel < 1e-10);
}

TEST_CASE("conv2d rejects bad shapes") {
  Tensor<double> x({1, 2, 4, 4});
  Tensor<double> w({1, 3, 3, 3});
  auto nb = static_cast<const Tensor<double>*>(nullptr);
  REQUIRE_THROWS_AS(detail::conv2d_fwd(x, w, nb, 1, 1), ShapeError);
  Tensor<double> wk({1, 2, 5, 5});
  REQUIRE_THROWS_AS(detail::conv2d_fwd(x, wk, nb, 1, 0), GeometryError);
}

TEST_CASE("matmul variants") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor<double> c = detail::matmul_nn(a, b);
  REQUIRE(c.shape() == std::vector<int>{2, 2});
  REQUIRE(c(0, 0) == 58.0);
  REQUIRE(c(0, 1) == 64.0);
  REQUIRE(c(1, 0) == 139.0);
  REQUIRE(c(1, 1) == 154.0);

  Rng rng(3);
  Tensor<double> p = random_tensor({4, 5}, rng);
  Tensor<double> q = random_tensor({6, 5}, rng);
  // nt(p, q) == nn(p, q^T)
  Tensor<double> qt({5, 6});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j) qt(j, i) = q(i, j);
  REQUIRE(max_abs_diff(detail::matmul_nt(p, q), detail::matmul_nn(p, qt)) < 1e-14);
  // tn(p, r) == nn(p^T, r)
  Tensor<double> r = random_tensor({4, 3}, rng);
  Tensor<double> pt({5, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) pt(j, i) = p(i, j);
  REQUIRE(max_abs_diff(detail::matmul_tn(p, r), detail::matmul_nn(pt, r)) < 1e-14);
}

TEST_CASE("relu and sigmoid point values") {
  Tensor<double> x({4}, {-1.0, 0.0, 2.5, -0.001});
  Tensor<double> y = detail::relu_fwd(x);
  REQUIRE(y[0] == 0.0);
  REQUIRE(y[1] == 0.0);
  REQUIRE(y[2] == 2.5);
  REQUIRE(y[3] == 0.0);

  Tensor<double> s({3}, {0.0, std::log(0.25), -std::log(0.25)});
  Tensor<double> sv = detail::sigmoid_fwd(s);
  REQUIRE(sv[0] == 0.5);
  REQUIRE(sv[1] == Catch::Approx(0.2).epsilon(1e-12));
  REQUIRE(sv[2] == Catch::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("global average pool") {
  Tensor<double> x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  Tensor<double> y = detail::gap_fwd(x);
  REQUIRE(y.size() == 2);
  REQUIRE(y[0] == 2.5);
  REQUIRE(y[1] == 25.0);
}

TEST_CASE("affine forward") {
  Tensor<double> x({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor<double> w({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({2}, {0.5, -0.5});
  Tensor<double> y = detail::affine_fwd(x, w, b);
  REQUIRE(y(0, 0) == 1.5);
  REQUIRE(y(0, 1) == 3.5);
  REQUIRE(y(1, 0) == 2.5);
  REQUIRE(y(1, 1) == 4.5);
}

TEST_CASE("weighted sum left fold") {
  Tensor<double> a({2}, {1.0, 2.0});
  Tensor<double> b({2}, {10.0, 20.0});
  std::vector<const Tensor<double>*> terms{&a, &b};
  Tensor<double> y = detail::weighted_sum(terms, std::vector<double>{0.5, 0.25});
  REQUIRE(y[0] == 3.0);
  REQUIRE(y[1] == 6.0);
  REQUIRE_THROWS_AS(
      detail::weighted_sum(terms, std::vector<double>{0.5}), ShapeError);
}

TEST_CASE("batch norm eval uses running statistics") {
  // Known stats: mean 1, var 4 -> (x-1)/sqrt(4+eps)*gamma+beta.
  Tensor<double> x({1, 1, 1, 2}, {3.0, -1.0});
  Tensor<double> gamma({1}, {2.0});
  Tensor<double> beta({1}, {0.5});
  Tensor<double> rm({1}, {1.0});
  Tensor<double> rv({1}, {4.0});
  Tensor<double> y = detail::batch_norm_fwd(
      x, gamma, beta, &rm, &rv, false, 0.1, 1e-5,
      static_cast<Tensor<double>*>(nullptr),
      static_cast<std::vector<double>*>(nullptr));
  double inv = 1.0 / std::sqrt(4.0 + 1e-5);
  REQUIRE(y[0] == Catch::Approx(2.0 * 2.0 * inv + 0.5).epsilon(1e-12));
  REQUIRE(y[1] == Catch::Approx(-2.0 * 2.0 * inv + 0.5).epsilon(1e-12));
  // Eval mode must not touch the running stats.
  REQUIRE(rm[0] == 1.0);
  REQUIRE(rv[0] == 4.0);
}

TEST_CASE("batch norm train normalizes the batch") {
  Rng rng(11);
  Tensor<double> x = random_tensor({4, 3, 5, 5}, rng);
  Tensor<double> gamma = Tensor<double>::full({3}, 1.0);
  Tensor<double> beta({3});
  Tensor<double> rm({3});
  Tensor<double> rv = Tensor<double>::full({3}, 1.0);
  Tensor<double> y = detail::batch_norm_fwd(
      x, gamma, beta, &rm, &rv, true, 0.1, 1e-5,
      static_cast<Tensor<double>*>(nullptr),
      static_cast<std::vector<double>*>(nullptr));
  // Per-channel mean ~0, variance ~1.
  int n = 4, h = 5, w = 5;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) mean += y(b, c, i, j);
    mean /= n * h * w;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          double d = y(b, c, i, j) - mean;
          var += d * d;
        }
    var /= n * h * w;
    REQUIRE(std::fabs(mean) < 1e-10);
    REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));
  }
  // Running stats moved toward the batch stats.
  REQUIRE(rm[0] != 0.0);
  REQUIRE(rv[0] != 1.0);
}

TEST_CASE("pad helper") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> p = detail::pad_nchw(x, 1);
  REQUIRE(p.shape() == std::vector<int>{1, 1, 4, 4});
  REQUIRE(p(0, 0, 0, 0) == 0.0);
  REQUIRE(p(0, 0, 1, 1) == 1.0);
  REQUIRE(p(0, 0, 2, 2) == 4.0);
}
