#include <cmath>
#include <utility>

#include "doctest.h"
#include "promptvm/error.hpp"
#include "promptvm/relu_gadgets.hpp"
#include "support.hpp"

using namespace promptvm;

namespace {

Pl1D sampled(double lo, double hi, std::size_t k, double (*f)(double)) {
  Vector t(k), v(k);
  for (std::size_t i = 0; i < k; ++i) {
    t[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k - 1);
    v[i] = f(t[i]);
  }
  return Pl1D(t, v);
}

double scalar(const TwoLayerNet& net, double t) { return net(Vector{t})[0]; }

double product_sup_error(const Gadget& g, double b, std::size_t grid) {
  double worst = 0.0;
  for (std::size_t i = 0; i < grid; ++i)
    for (std::size_t j = 0; j < grid; ++j) {
      const double x = -b + 2.0 * b * static_cast<double>(i) / static_cast<double>(grid - 1);
      const double y = -b + 2.0 * b * static_cast<double>(j) / static_cast<double>(grid - 1);
      worst = std::max(worst, std::abs(g.net(Vector{x, y})[0] - x * y));
    }
  return worst;
}

}  // namespace

TEST_CASE("exact_affine reproduces U u + c") {
  const TwoLayerNet id = exact_affine(Matrix::identity(2), Vector{0.0, 0.0});
  const Vector out = id(Vector{3.0, -4.0});
  CHECK(out[0] == 3.0);
  CHECK(out[1] == -4.0);

  const TwoLayerNet c = exact_affine(Matrix(1, 2), Vector{5.0});
  CHECK(c(Vector{1.0, 2.0})[0] == 5.0);

  std::mt19937_64 rng(11);
  const Matrix u = test::uniform_matrix(rng, 4, 3, -2.0, 2.0);
  const Vector off = test::uniform_vector(rng, 4, -1.0, 1.0);
  const TwoLayerNet net = exact_affine(u, off);
  CHECK(net.hidden_width() == 6);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = test::uniform_vector(rng, 3, -10.0, 10.0);
    const Vector y = net(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double e = off[r];
      for (std::size_t i = 0; i < 3; ++i) e += u(r, i) * x[i];
      CHECK(std::abs(y[r] - e) <= 1e-12 * (1.0 + std::abs(e)));
    }
  }
  CHECK_THROWS_AS(exact_affine(u, Vector{1.0}), InvalidArgument);
}

TEST_CASE("pl_to_relu is exact on |x| and on the t^2 interpolant") {
  const Pl1D absf = sampled(-1.0, 1.0, 33, [](double t) { return std::abs(t); });
  const TwoLayerNet a = pl_to_relu(absf);
  const Pl1D sq = sampled(-1.0, 1.0, 33, [](double t) { return t * t; });
  const TwoLayerNet s = pl_to_relu(sq);
  for (std::size_t i = 0; i < 33; ++i) {
    const double t = absf.knots()[i];
    CHECK(std::abs(scalar(a, t) - std::abs(t)) <= 1e-10);
    CHECK(std::abs(scalar(s, t) - t * t) <= 1e-10);
  }
  for (double t = -1.0; t <= 1.0; t += 0.01) {
    CHECK(std::abs(scalar(a, t) - absf(t)) <= 1e-10);
    CHECK(std::abs(scalar(s, t) - sq(t)) <= 1e-10);
  }
  // linear continuation outside the knot span
  CHECK(scalar(a, 2.0) == doctest::Approx(2.0));
  CHECK(scalar(a, -3.0) == doctest::Approx(3.0));
}

TEST_CASE("pl interpolation input validation") {
  const std::pair<double, double> dup[] = {{0.0, 1.0}, {0.0, 2.0}, {1.0, 0.0}};
  CHECK_THROWS_AS(pl_interpolate(dup), InvalidArgument);
  const std::pair<double, double> ok[] = {{-1.0, 1.0}, {0.0, 0.0}, {2.0, 4.0}};
  const Pl1D p = pl_interpolate(ok);
  CHECK(p(1.0) == doctest::Approx(2.0));
  CHECK(p.slope(1) == doctest::Approx(2.0));
  CHECK_THROWS_AS(Pl1D(Vector{1.0, 0.0}, Vector{0.0, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(pl_to_relu(Pl1D(Vector{0.0}, Vector{1.0})), InvalidArgument);
}

TEST_CASE("square gadget bound") {
  const Gadget g = square_gadget(2.0, 33);
  CHECK(g.error_bound == doctest::Approx(0.00390625));
  CHECK(g.knot_count == 33);
  double worst = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double t = -2.0 + 4.0 * i / 4000.0;
    worst = std::max(worst, std::abs(scalar(g.net, t) - t * t));
  }
  CHECK(worst <= g.error_bound * (1.0 + 1e-12));
  CHECK(worst >= 0.9 * g.error_bound);
  CHECK_THROWS_AS(square_gadget(2.0, 32), InvalidArgument);
  CHECK_THROWS_AS(square_gadget(0.0, 33), InvalidArgument);
}

TEST_CASE("product gadget") {
  const Gadget g = product_gadget(1.0, 65);
  CHECK(g.error_bound <= 0.000488282);
  const double err11 = std::abs(g.net(Vector{1.0, 1.0})[0] - 1.0);
  CHECK(err11 <= 0.000488282);

  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vector xy = test::uniform_vector(rng, 2, -1.0, 1.0);
    CHECK(std::abs(g.net(Vector{0.0, xy[1]})[0]) <= 1e-15);
    CHECK(std::abs(g.net(Vector{xy[0], 0.0})[0]) <= 1e-15);
    CHECK(g.net(xy)[0] == doctest::Approx(g.net(Vector{xy[1], xy[0]})[0]).epsilon(1e-14));
    CHECK(std::abs(g.net(xy)[0] - xy[0] * xy[1]) <= g.error_bound * (1.0 + 1e-12));
  }

  // halving the spacing quarters the sup error
  const double e33 = product_sup_error(product_gadget(1.0, 33), 1.0, 129);
  const double e65 = product_sup_error(product_gadget(1.0, 65), 1.0, 129);
  CHECK(e33 / e65 >= 3.5);
  CHECK(e33 / e65 <= 4.5);
}

TEST_CASE("asymmetric product gadget and knot sizing") {
  const Gadget g = product_gadget(3.0, 0.5, 33);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(-3.0, 3.0), uy(-0.5, 0.5);
  for (int i = 0; i < 500; ++i) {
    const double x = ux(rng), y = uy(rng);
    CHECK(std::abs(g.net(Vector{x, y})[0] - x * y) <= g.error_bound * (1.0 + 1e-12));
  }
  for (double eps : {1e-2, 1e-4, 1e-6}) {
    const std::size_t k = product_knots_for(2.0, 1.5, eps);
    CHECK(k % 2 == 1);
    CHECK(product_gadget(2.0, 1.5, k).error_bound <= eps);
    if (k > 3) CHECK(product_gadget(2.0, 1.5, k - 2).error_bound > eps);
  }
}

TEST_CASE("stack_parallel places nets side by side") {
  const TwoLayerNet id = exact_affine(Matrix::identity(1), Vector{0.0});
  Matrix neg(1, 1);
  neg(0, 0) = -1.0;
  const TwoLayerNet ng = exact_affine(neg, Vector{0.0});
  const TwoLayerNet both[] = {id, ng};
  const TwoLayerNet s = stack_parallel(both);
  CHECK(s.output_dim() == 2);
  const Vector out = s(Vector{2.0});
  CHECK(out[0] == 2.0);
  CHECK(out[1] == -2.0);
  CHECK_THROWS_AS(stack_parallel(std::span<const TwoLayerNet>{}), InvalidArgument);
}
