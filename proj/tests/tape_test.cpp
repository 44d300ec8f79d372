#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mvi/tape.hpp"

using namespace mvi;
using tape::Var;

namespace {

// Forward-difference reference for gradient checks with rough functions.
template <class F>
std::vector<double> central_diff(F&& f, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("gradient of a polynomial is exact") {
  // f = 3 x^2 y + y^3; df/dx = 6 x y, df/dy = 3 x^2 + 3 y^2.
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) {
        const Var& x = in[0];
        const Var& y = in[1];
        return std::vector<Var>{3.0 * x * x * y + y * y * y};
      },
      std::vector<double>{1.5, -0.75});
  CHECK(vals[0] == doctest::Approx(3.0 * 1.5 * 1.5 * -0.75 + std::pow(-0.75, 3)));
  const std::vector<double> seed{1.0};
  const std::vector<double> g = t.gradient(seed);
  CHECK(g[0] == 6.0 * 1.5 * -0.75);           // exact in double arithmetic
  CHECK(g[1] == 3.0 * 1.5 * 1.5 + 3.0 * 0.75 * 0.75);
}

TEST_CASE("transcendental chain matches hand derivative to machine precision") {
  // f = exp(sin(x) * log(y)) / sqrt(y)
  const double x0 = 0.6, y0 = 2.5;
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) {
        return std::vector<Var>{exp(sin(in[0]) * log(in[1])) / sqrt(in[1])};
      },
      std::vector<double>{x0, y0});
  const double f = std::exp(std::sin(x0) * std::log(y0)) / std::sqrt(y0);
  CHECK(vals[0] == doctest::Approx(f).epsilon(1e-15));
  const std::vector<double> g = t.gradient(std::vector<double>{1.0});
  const double dfdx = f * std::cos(x0) * std::log(y0);
  const double dfdy = f * (std::sin(x0) / y0) - 0.5 * f / y0;
  CHECK(g[0] == doctest::Approx(dfdx).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(dfdy).epsilon(1e-14));
}

TEST_CASE("reverse sweep satisfies the dot product identity") {
  // For any tape: <J v, w> == <v, J^T w>. J v by forward differences of the
  // recorded function, J^T w by a sweep.
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  std::vector<double> x(6);
  for (double& xi : x) xi = unif(rng);

  auto func = [](const std::vector<Var>& in) {
    std::vector<Var> out;
    Var s = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * in[(i + 1) % in.size()];
    out.push_back(sqrt(s));
    out.push_back(in[0] * exp(-in[3]) + pow(in[5], 1.7));
    out.push_back(sabs(in[2] - in[4], 0.05));
    return out;
  };
  auto scalar_func = [&](const std::vector<double>& xs, std::size_t k) {
    std::vector<double> s(xs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i] * xs[(i + 1) % xs.size()];
    const double o0 = std::sqrt(acc);
    const double o1 = xs[0] * std::exp(-xs[3]) + std::pow(xs[5], 1.7);
    const double o2 = std::sqrt((xs[2] - xs[4]) * (xs[2] - xs[4]) + 0.05 * 0.05);
    return k == 0 ? o0 : (k == 1 ? o1 : o2);
  };

  auto [vals, t] = tape::record(func, x);
  REQUIRE(t.num_outputs() == 3);

  std::vector<double> v(6), w(3);
  for (double& e : v) e = unif(rng) - 1.25;
  for (double& e : w) e = unif(rng) - 1.25;

  // <v, J^T w>
  const std::vector<double> jtw = t.gradient(w);
  double lhs = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) lhs += v[i] * jtw[i];

  // <J v, w> via directional finite difference per output
  const double h = 1e-7;
  double rhs = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xp[i] += h * v[i];
      xm[i] -= h * v[i];
    }
    const double jv = (scalar_func(xp, k) - scalar_func(xm, k)) / (2.0 * h);
    rhs += jv * w[k];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("repeated sweeps are bitwise reproducible and reuse the workspace") {
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) {
        Var y = 1.0;
        for (const Var& v : in) y = y * sin(v) + cos(y);
        return std::vector<Var>{y, y * y};
      },
      std::vector<double>{0.3, 1.1, 2.2, 0.7});

  tape::SweepWorkspace ws;
  std::vector<double> g1(4), g2(4), seed{0.7, -0.2};
  t.sweep(seed, ws, g1);
  t.sweep(seed, ws, g2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g1[i] == g2[i]);
  // Workspace buffer must be all-zero between sweeps.
  for (double a : ws.adjoint) CHECK(a == 0.0);
}

TEST_CASE("gradients with respect to unused inputs are exactly zero") {
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) {
        return std::vector<Var>{in[1] * in[1]};
      },
      std::vector<double>{3.0, 2.0, 5.0});
  const std::vector<double> g = t.gradient(std::vector<double>{1.0});
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("constant folding keeps untraced arithmetic off the tape") {
  tape::Tape t;
  {
    tape::Recording rec(t);
    Var a = tape::input(2.0);
    Var c = Var(3.0) * Var(4.0) + Var(1.0);  // pure constants, no records
    Var y = a * c;
    t.mark_output(y.id);
  }
  // Exactly two records: the input and the multiply-by-constant.
  CHECK(t.num_records() == 2);
  CHECK(t.gradient(std::vector<double>{1.0})[0] == 13.0);
}

TEST_CASE("replay verifies bitwise against recorded values") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.1, 3.0);
  std::vector<double> x(10);
  for (double& xi : x) xi = unif(rng);
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) {
        Var y = 0.0;
        for (std::size_t i = 0; i + 1 < in.size(); ++i) {
          y += sabs(in[i] - in[i + 1], 0.01) * log(in[i] + 1.0);
          y = y / (1.0 + y * y) + sqrt(in[i + 1]) + pow(in[i], 2.5);
        }
        return std::vector<Var>{y, exp(-y)};
      },
      x);
  CHECK(t.replay_verify() == 0);
}

TEST_CASE("smooth min and max blend correctly away from the kink") {
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) {
        return std::vector<Var>{tape::smin(in[0], in[1], 1e-6),
                                tape::smax(in[0], in[1], 1e-6)};
      },
      std::vector<double>{1.0, 4.0});
  CHECK(vals[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(vals[1] == doctest::Approx(4.0).epsilon(1e-9));
  tape::SweepWorkspace ws;
  std::vector<double> g(2);
  t.sweep(std::vector<double>{1.0, 0.0}, ws, g);
  CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-6));  // min follows in[0]
  CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("seed dimension mismatches are rejected") {
  auto [vals, t] = tape::record(
      [](const std::vector<Var>& in) { return std::vector<Var>{in[0] + in[1]}; },
      std::vector<double>{1.0, 2.0});
  tape::SweepWorkspace ws;
  std::vector<double> g(2);
  CHECK_THROWS_AS(t.sweep(std::vector<double>{1.0, 2.0}, ws, g),
                  SeedDimensionMismatchError);
  std::vector<double> g_short(1);
  CHECK_THROWS_AS(t.sweep(std::vector<double>{1.0}, ws, g_short),
                  SeedDimensionMismatchError);
}

TEST_CASE("rough composite gradient agrees with central differences") {
  std::vector<double> x{0.8, 1.7, 0.45};
  auto f = [](const auto& in) ->
      std::vector<std::decay_t<decltype(in[0])>> {
        auto r = in[0] * sin(in[1]) / (in[2] + 0.3);
        auto q = pow(in[1], 0.5) * exp(in[2] * in[2]);
        return {r * q + r + q};
      };
  auto fd = [&](const std::vector<double>& xs) {
    const double r = xs[0] * std::sin(xs[1]) / (xs[2] + 0.3);
    const double q = std::pow(xs[1], 0.5) * std::exp(xs[2] * xs[2]);
    return r * q + r + q;
  };
  auto [vals, t] = tape::record(f, x);
  const std::vector<double> g = t.gradient(std::vector<double>{1.0});
  const std::vector<double> gref = central_diff(fd, x, 1e-6);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(g[i] == doctest::Approx(gref[i]).epsilon(1e-7));
}

TEST_CASE("second activation on the same thread is rejected") {
  tape::Tape t1, t2;
  tape::Recording rec(t1);
  CHECK_THROWS_AS(tape::Recording rec2(t2), Error);
}
