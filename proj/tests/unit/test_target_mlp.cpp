#include <cmath>

#include "doctest.h"
#include "promptvm/error.hpp"
#include "promptvm/target_mlp.hpp"
#include "support.hpp"

using namespace promptvm;

TEST_CASE("single relu unit") {
  Matrix w(1, 1);
  w(0, 0) = 1.0;
  const ReluMlp n = one_hidden_layer(w, Vector{0.0}, Vector{1.0}, 0.0);
  CHECK(mlp_forward(n, Vector{2.0}) == 2.0);
  CHECK(mlp_forward(n, Vector{-2.0}) == 0.0);
  CHECK(n.depth() == 3);
  CHECK(n.hidden_width() == 1);
  CHECK(n.a(0) == 1.0);
  CHECK(n.c() == 0.0);
  CHECK_THROWS_AS(mlp_forward(n, Vector{1.0, 2.0}), InvalidArgument);
}

TEST_CASE("pl network of sin on 41 knots") {
  const std::size_t k = 41;
  Vector t(k), v(k);
  for (std::size_t i = 0; i < k; ++i) {
    t[i] = -1.0 + 2.0 * static_cast<double>(i) / (k - 1);
    v[i] = std::sin(t[i]);
  }
  const ReluMlp n = mlp_from_pl1d(Pl1D(t, v));
  CHECK(n.input_dim() == 1);
  double worst = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = -1.0 + 2.0 * i / 10000.0;
    worst = std::max(worst, std::abs(mlp_forward(n, Vector{x}) - std::sin(x)));
  }
  CHECK(worst <= 3.125e-4);
}

TEST_CASE("random networks") {
  const MlpShapeClass shape{3, 5, 3, 1.5, 1.0};
  CHECK(random_mlp(shape, 42) == random_mlp(shape, 42));
  CHECK_FALSE(random_mlp(shape, 42) == random_mlp(shape, 43));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ReluMlp n = random_mlp(shape, seed);
    CHECK(shape.admits(n));
    CHECK(n.max_abs_entry() <= 1.5);
    CHECK(n.hidden_width() == 5);
    CHECK(n.input_dim() == 3);
  }

  const MlpShapeClass zero{2, 4, 3, 0.0, 1.0};
  const ReluMlp z = random_mlp(zero, 1);
  CHECK(z.max_abs_entry() == 0.0);
  CHECK(mlp_forward(z, Vector{0.3, -0.9}) == 0.0);

  CHECK_THROWS_AS(random_mlp(MlpShapeClass{1, 1, 4, 1.0, 1.0}, 0), UnsupportedShape);
}

TEST_CASE("declared bounds are enforced") {
  Matrix w(1, 1);
  w(0, 0) = 2.0;
  CHECK_THROWS_AS(one_hidden_layer(w, Vector{0.0}, Vector{1.0}, 0.0, 1.0), InvalidArgument);
  CHECK_NOTHROW(one_hidden_layer(w, Vector{0.0}, Vector{1.0}, 0.0, 2.0));
  CHECK_THROWS_AS(one_hidden_layer(w, Vector{0.0, 1.0}, Vector{1.0}, 0.0), InvalidArgument);
  w(0, 0) = NAN;
  CHECK_THROWS_AS(one_hidden_layer(w, Vector{0.0}, Vector{1.0}, 0.0), InvalidArgument);

  const MlpShapeClass small{1, 2, 3, 0.5, 1.0};
  Matrix w2(2, 1, 0.25);
  CHECK(small.admits(one_hidden_layer(w2, Vector{0.1, 0.1}, Vector{0.2, 0.2}, 0.0)));
  CHECK_FALSE(small.admits(one_hidden_layer(w2, Vector{0.1, 0.9}, Vector{0.2, 0.2}, 0.0)));
  Matrix w3(3, 1, 0.25);
  CHECK_FALSE(small.admits(one_hidden_layer(w3, Vector(3, 0.0), Vector(3, 0.0), 0.0)));
}

TEST_CASE("networks are piecewise linear") {
  // without biases the network is positively homogeneous, and along any
  // segment the second differences vanish except near a kink
  const MlpShapeClass shape{2, 6, 3, 1.0, 1.0};
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ReluMlp n = random_mlp(shape, seed);
    const ReluMlp h = one_hidden_layer(n.w(), Vector(6, 0.0), Vector(n.layers()[1].weights.row(0).begin(),
                                                                       n.layers()[1].weights.row(0).end()),
                                       0.0);
    const Vector x = test::uniform_vector(rng, 2, -1.0, 1.0);
    for (double s : {0.1, 0.5, 2.0, 7.0})
      CHECK(mlp_forward(h, Vector{s * x[0], s * x[1]}) ==
            doctest::Approx(s * mlp_forward(h, x)).epsilon(1e-12));

    const Vector dir = test::uniform_vector(rng, 2, -1.0, 1.0);
    std::size_t curved = 0;
    const int steps = 400;
    for (int i = 1; i < steps; ++i) {
      auto at = [&](int k) {
        const double a = -1.0 + 2.0 * k / steps;
        return mlp_forward(n, Vector{0.5 * a * dir[0], 0.5 * a * dir[1]});
      };
      if (std::abs(at(i - 1) - 2.0 * at(i) + at(i + 1)) > 1e-12) ++curved;
    }
    CHECK(curved <= 2 * 6);
  }
}
