#include "doctest.h"
#include "helpers.hpp"
#include "wsr/tps.hpp"

#include <cmath>

using namespace wsr;
using wsrtest::fd_max_rel_err;
using wsrtest::fill_uniform;

TEST_CASE("tps kernel limits") {
  CHECK(tps_kernel_sq(0.0) == 0.0);
  CHECK(tps_kernel_sq(1.0) == 0.0);  // r = 1: log(1) = 0
  CHECK(tps_kernel_sq(4.0) == doctest::Approx(4.0 * std::log(4.0)));
}

TEST_CASE("control grid corners and distinctness") {
  auto g = ControlGrid::regular(8);
  CHECK(g.count() == 64);
  CHECK(g.xs[0] == -1.0);
  CHECK(g.ys[0] == -1.0);
  CHECK(g.xs[63] == 1.0);
  CHECK(g.ys[63] == 1.0);
}

TEST_CASE("zero-shift targets solve to identity affine part") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 16, 16);
  // interpolate f(x, y) = x: non-affine weights ~0, affine = (0, 1, 0)
  std::vector<double> targets(static_cast<size_t>(g.count()));
  for (int i = 0; i < g.count(); ++i) targets[static_cast<size_t>(i)] = g.xs[static_cast<size_t>(i)];
  auto w = sys.solve(targets);
  for (int i = 0; i < g.count(); ++i) CHECK(std::fabs(w[static_cast<size_t>(i)]) < 1e-9);
  CHECK(w[static_cast<size_t>(g.count()) + 0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(w[static_cast<size_t>(g.count()) + 1] == doctest::Approx(1.0));
  CHECK(w[static_cast<size_t>(g.count()) + 2] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("bending weights are zero exactly for affine targets, nonzero otherwise") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 8, 8);
  std::vector<double> affine(static_cast<size_t>(g.count()));
  for (int i = 0; i < g.count(); ++i)
    affine[static_cast<size_t>(i)] = 0.3 + 0.5 * g.xs[static_cast<size_t>(i)] - 0.2 * g.ys[static_cast<size_t>(i)];
  auto w = sys.solve(affine);
  double nonaffine_norm = 0;
  for (int i = 0; i < g.count(); ++i) nonaffine_norm += w[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
  CHECK(std::sqrt(nonaffine_norm) < 1e-8);

  Rng rng(4);
  std::vector<double> bent = affine;
  for (auto& t : bent) t += rng.uniform(-0.05, 0.05);
  auto wb = sys.solve(bent);
  double norm2 = 0;
  for (int i = 0; i < g.count(); ++i) norm2 += wb[static_cast<size_t>(i)] * wb[static_cast<size_t>(i)];
  CHECK(std::sqrt(norm2) > 1e-6);
}

TEST_CASE("tps_grid: zero shifts give the identity grid") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 32, 32);
  auto shifts = Tensor<double>::zeros({128});
  auto field = tps_grid<double>(nullptr, shifts, sys);
  CHECK(field.shape() == Shape{2, 32, 32});
  double worst = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      worst = std::max(worst, std::fabs(field.values()[static_cast<size_t>(y) * 32 + x] -
                                        pixel_center_coord(x, 32)));
      worst = std::max(worst, std::fabs(field.values()[1024 + static_cast<size_t>(y) * 32 + x] -
                                        pixel_center_coord(y, 32)));
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("tps_grid: uniform shift is a pure translation") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 24, 24);
  const double dx = 0.07, dy = -0.045;
  std::vector<double> sh(128);
  for (int j = 0; j < 64; ++j) {
    sh[static_cast<size_t>(j)] = dx;
    sh[static_cast<size_t>(64 + j)] = dy;
  }
  auto field = tps_grid<double>(nullptr, Tensor<double>::from_values({128}, sh), sys);
  double worst = 0;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      worst = std::max(worst, std::fabs(field.values()[static_cast<size_t>(y) * 24 + x] -
                                        (pixel_center_coord(x, 24) + dx)));
      worst = std::max(worst, std::fabs(field.values()[576 + static_cast<size_t>(y) * 24 + x] -
                                        (pixel_center_coord(y, 24) + dy)));
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("tps_grid interpolates shifted control points exactly") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 16, 16);
  Rng rng(31);
  for (int rep = 0; rep < 4; ++rep) {
    std::vector<double> sh(128);
    for (auto& v : sh) v = rng.uniform(-0.2, 0.2);
    // direct evaluation oracle: solve for each coordinate function and
    // evaluate the fitted spline at every control point
    std::vector<double> tx(64), ty(64);
    for (int j = 0; j < 64; ++j) {
      tx[static_cast<size_t>(j)] = g.xs[static_cast<size_t>(j)] + sh[static_cast<size_t>(j)];
      ty[static_cast<size_t>(j)] = g.ys[static_cast<size_t>(j)] + sh[static_cast<size_t>(64 + j)];
    }
    auto wx = sys.solve(tx);
    auto wy = sys.solve(ty);
    double worst = 0;
    for (int j = 0; j < 64; ++j) {
      const double ex = sys.evaluate(wx, g.xs[static_cast<size_t>(j)], g.ys[static_cast<size_t>(j)]);
      const double ey = sys.evaluate(wy, g.xs[static_cast<size_t>(j)], g.ys[static_cast<size_t>(j)]);
      worst = std::max(worst, std::fabs(ex - tx[static_cast<size_t>(j)]));
      worst = std::max(worst, std::fabs(ey - ty[static_cast<size_t>(j)]));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("tps_grid rejects bad shift vectors") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 8, 8);
  CHECK_THROWS_AS(tps_grid<double>(nullptr, Tensor<double>::zeros({100}), sys), Error);
  auto nan_shifts = Tensor<double>::zeros({128});
  nan_shifts.mutable_values()[3] = std::nan("");
  CHECK_THROWS_AS(tps_grid<double>(nullptr, nan_shifts, sys), Error);
}

TEST_CASE("grid_sample: identity field reproduces the input exactly") {
  Rng rng(6);
  auto f = Tensor<double>::zeros({3, 16, 16});
  fill_uniform(f, rng, 0.0, 1.0);
  auto field = translation_field<double>(16, 16, 0.0, 0.0);
  auto out = grid_sample<double>(nullptr, f, field);
  CHECK(wsrtest::max_abs_diff(out.values(), f.values()) == 0.0);
}

TEST_CASE("grid_sample: one-pixel shift with border clamping") {
  Rng rng(61);
  const int n = 8;
  auto f = Tensor<double>::zeros({1, n, n});
  fill_uniform(f, rng, 0.0, 1.0);
  // shift sampling coordinates one pixel to the right in normalized units
  auto field = translation_field<double>(n, n, 2.0 / n, 0.0);
  auto out = grid_sample<double>(nullptr, f, field);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n - 1; ++x)
      CHECK(out.values()[static_cast<size_t>(y) * n + x] ==
            doctest::Approx(f.values()[static_cast<size_t>(y) * n + x + 1]).epsilon(1e-12));
    // last column clamps to the edge
    CHECK(out.values()[static_cast<size_t>(y) * n + n - 1] ==
          doctest::Approx(f.values()[static_cast<size_t>(y) * n + n - 1]).epsilon(1e-12));
  }
}

TEST_CASE("grid_sample preserves constant images for any finite field") {
  auto f = Tensor<double>::full({2, 8, 8}, 0.625);
  Rng rng(9);
  auto field = Tensor<double>::zeros({2, 8, 8});
  fill_uniform(field, rng, -3.0, 3.0);  // wildly out of range on purpose
  auto out = grid_sample<double>(nullptr, f, field);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("grid_sample rejects non-finite fields") {
  auto f = Tensor<double>::zeros({1, 4, 4});
  auto field = translation_field<double>(4, 4, 0.0, 0.0);
  field.mutable_values()[5] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(grid_sample<double>(nullptr, f, field), Error);
}

TEST_CASE("grid_sample gradients vs finite differences, off the integer lattice") {
  Rng rng(23);
  auto f = Tensor<double>::zeros({2, 6, 6}, true);
  fill_uniform(f, rng, 0.0, 1.0);
  // quarter-pixel offset keeps every coordinate away from the kinks
  auto base = translation_field<double>(6, 6, 0.25 * 2.0 / 6, 0.25 * 2.0 / 6);
  auto field = Tensor<double>::zeros({2, 6, 6}, true);
  for (int64_t i = 0; i < field.size(); ++i)
    field.mutable_values()[static_cast<size_t>(i)] =
        base.values()[static_cast<size_t>(i)] + rng.uniform(-0.05, 0.05) * 2.0 / 6;

  const double err = fd_max_rel_err({f, field}, [&](Tape<double>* tp) {
    auto out = grid_sample(tp, f, field);
    return reduce_sum(tp, mul(tp, out, out));
  });
  CHECK(err < 1e-3);
}

TEST_CASE("tps_grid gradient vs finite differences") {
  auto g = ControlGrid::regular(8);
  TpsSystem sys(g, 12, 12);
  Rng rng(41);
  auto shifts = Tensor<double>::zeros({128}, true);
  fill_uniform(shifts, rng, -0.1, 0.1);
  auto probe = Tensor<double>::zeros({2, 12, 12});
  fill_uniform(probe, rng);
  const double err = fd_max_rel_err({shifts}, [&](Tape<double>* tp) {
    auto field = tps_grid(tp, shifts, sys);
    return reduce_sum(tp, mul(tp, field, probe));
  });
  CHECK(err < 1e-3);
}

TEST_CASE("integer translation composes with pre-shifted image sampling") {
  // sample with a one-pixel-shift field vs sampling the pre-shifted image
  // with the identity field: interior must agree to ~1e-10
  Rng rng(3);
  const int n = 12;
  auto img = Tensor<double>::zeros({1, n, n});
  fill_uniform(img, rng, 0.0, 1.0);

  auto shifted = Tensor<double>::zeros({1, n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      shifted.mutable_values()[static_cast<size_t>(y) * n + x] =
          img.values()[static_cast<size_t>(y) * n + std::min(x + 1, n - 1)];

  auto out1 = grid_sample<double>(nullptr, img, translation_field<double>(n, n, 2.0 / n, 0.0));
  auto out2 = grid_sample<double>(nullptr, shifted, translation_field<double>(n, n, 0.0, 0.0));
  double m = 0;
  for (int y = 1; y < n - 1; ++y)
    for (int x = 1; x < n - 1; ++x)
      m += std::pow(out1.values()[static_cast<size_t>(y) * n + x] -
                        out2.values()[static_cast<size_t>(y) * n + x],
                    2.0);
  CHECK(m / ((n - 2) * (n - 2)) < 1e-10);
}
