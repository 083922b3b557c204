#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fpvc/smoothing.hpp"
#include "support.hpp"

using namespace fpvc;
using testing_support::Rng;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Weighted least squares through Eigen, no sweeping and no shortcuts.
std::optional<double> reference_line(const std::vector<double>& t, const std::vector<double>& y, double t0, double h) {
  std::vector<double> w;
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double u = (t[k] - t0) / h;
    if (std::abs(u) < 1.0) {
      w.push_back(0.75 * (1 - u * u));
      idx.push_back(k);
    }
  }
  if (idx.size() < 2) return std::nullopt;
  Eigen::MatrixXd X(idx.size(), 2);
  Eigen::VectorXd Y(idx.size()), W(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    X(k, 0) = 1;
    X(k, 1) = t[idx[k]] - t0;
    Y(k) = y[idx[k]];
    W(k) = w[k];
  }
  const Eigen::MatrixXd A = X.transpose() * W.asDiagonal() * X;
  if (std::abs(A.determinant()) < 1e-12 * A(0, 0) * A(0, 0)) return std::nullopt;
  return (A.ldlt().solve(X.transpose() * W.asDiagonal() * Y))(0);
}

double reference_plane(const SurfacePoints& p, double s0, double t0, double h) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (std::abs(p.s[k] - s0) < h && std::abs(p.t[k] - t0) < h) idx.push_back(k);
  Eigen::MatrixXd X(idx.size(), 3);
  Eigen::VectorXd Y(idx.size()), W(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto j = idx[k];
    X.row(k) << 1, p.s[j] - s0, p.t[j] - t0;
    Y(k) = p.c[j];
    W(k) = epanechnikov((p.s[j] - s0) / h) * epanechnikov((p.t[j] - t0) / h);
  }
  const Eigen::MatrixXd A = X.transpose() * W.asDiagonal() * X;
  return (A.ldlt().solve(X.transpose() * W.asDiagonal() * Y))(0);
}

ScatterPoints scatter(Rng& rng, std::size_t n, double lo, double hi, const std::function<double(double)>& f) {
  std::uniform_real_distribution<double> u(lo, hi);
  ScatterPoints p;
  for (std::size_t k = 0; k < n; ++k) {
    p.t.push_back(u(rng));
    p.y.push_back(f(p.t.back()));
    p.subject.push_back(static_cast<std::uint32_t>(k));
  }
  p.canonicalize();
  return p;
}

// Symmetric pair set: every subject contributes both orderings of each pair.
SurfacePoints pairs_from(const LongitudinalDataset& ds, const std::function<double(double, double)>& c) {
  SurfacePoints p;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& t = ds.subject(i).times;
    for (std::size_t r = 0; r < t.size(); ++r)
      for (std::size_t l = 0; l < t.size(); ++l) {
        if (r == l) continue;
        p.s.push_back(t[r]);
        p.t.push_back(t[l]);
        p.c.push_back(c(t[r], t[l]));
        p.subject.push_back(static_cast<std::uint32_t>(i));
      }
  }
  p.canonicalize();
  return p;
}

LongitudinalDataset sparse_times(Rng& rng, std::size_t n, double lambda = 6) {
  return testing_support::random_dataset(rng, n, lambda, 0, kTwoPi, [](std::size_t, double, Rng&) { return 0.0; });
}

MeanCurve zero_mean(const EvalGrid& grid) { return {grid, std::vector<double>(grid.size(), 0.0), 1.0}; }

}  // namespace

TEST(EvalGrid, Basics) {
  const EvalGrid g(Interval{0, 2}, 21);
  EXPECT_DOUBLE_EQ(g.spacing(), 0.1);
  EXPECT_EQ(g[20], 2.0);
  EXPECT_THROW(EvalGrid(Interval{0, 1}, 20), InputError);
  std::vector<double> v(21);
  for (std::size_t k = 0; k < 21; ++k) v[k] = 3 * g[k] - 1;
  EXPECT_NEAR(g.interpolate(v, 1.234), 3 * 1.234 - 1, 1e-12);
  EXPECT_NEAR(g.interpolate(v, 5.0), 5.0, 1e-12);
}

TEST(LocalLinearMean, ReproducesConstantsAndLines) {
  Rng rng(1);
  std::uniform_real_distribution<double> coef(-3, 3), bw(0.3, 3);
  for (int rep = 0; rep < 20; ++rep) {
    const double a = coef(rng), b = rep % 2 ? coef(rng) : 0.0, h = bw(rng);
    const auto ds = testing_support::random_dataset(rng, 40, 4, 0, kTwoPi,
                                                    [&](std::size_t, double t, Rng&) { return a + b * t; });
    const EvalGrid grid(ds.domain(), 51);
    const auto mean = local_linear_mean(ds, h, grid);
    for (std::size_t m = 0; m < grid.size(); ++m) EXPECT_NEAR(mean.values[m], a + b * grid[m], 1e-10);
  }
}

TEST(LocalLinearMean, MatchesReferenceFit) {
  Rng rng(2);
  const auto p = scatter(rng, 300, 0, 1, [&](double t) { return std::cos(4 * t) + std::normal_distribution<double>()(rng); });
  const EvalGrid grid(Interval{0, 1}, 41);
  for (double h : {0.05, 0.1, 0.3}) {
    const auto fit = local_linear_curve(p, h, grid);
    for (std::size_t m = 0; m < grid.size(); ++m) {
      const auto ref = reference_line(p.t, p.y, grid[m], h);
      ASSERT_TRUE(ref);
      EXPECT_NEAR(fit[m], *ref, 1e-10);
    }
  }
}

TEST(LocalLinearMean, WidensAcrossGaps) {
  // No data in (0.3, 0.7): the grid points there need a wider window.
  ScatterPoints p;
  for (double t : {0.0, 0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 1.0}) {
    p.t.push_back(t);
    p.y.push_back(2 * t);
    p.subject.push_back(0);
  }
  const EvalGrid grid(Interval{0, 1}, 21);
  const auto fit = local_linear_curve(p, 0.12, grid);
  for (std::size_t m = 0; m < grid.size(); ++m) EXPECT_NEAR(fit[m], 2 * grid[m], 1e-10);
  EXPECT_THROW(local_linear_curve(p, 0.01, grid), NumericalError);
}

TEST(LocalLinearMean, SineRecovery) {
  Rng rng(20240601);
  std::normal_distribution<double> noise(0, 0.5);
  const auto ds = testing_support::random_dataset(rng, 200, 6, 0, kTwoPi,
                                                  [&](std::size_t, double t, Rng& g) { return std::sin(t) + noise(g); });
  const double h = select_bandwidth(ds, BandwidthTarget::mean);
  const EvalGrid grid(ds.domain(), 51);
  const auto mean = local_linear_mean(ds, h, grid);
  double worst = 0;
  for (std::size_t m = 0; m < grid.size(); ++m)
    if (grid[m] >= 0.1 * kTwoPi && grid[m] <= 0.9 * kTwoPi) worst = std::max(worst, std::abs(mean.values[m] - std::sin(grid[m])));
  EXPECT_LE(worst, 0.15);
}

TEST(RawCovariance, ProductDefinition) {
  LongitudinalDataset ds("y", {{"a", {0, 1}, {1, -2}}, {"b", {0.5}, {3}}}, Interval{0, 1});
  const EvalGrid grid(ds.domain(), 21);
  const auto raw = raw_covariance(ds, zero_mean(grid));
  ASSERT_EQ(raw.off_diagonal.size(), 2u);
  EXPECT_EQ(raw.off_diagonal.s, (std::vector<double>{0, 1}));
  EXPECT_EQ(raw.off_diagonal.t, (std::vector<double>{1, 0}));
  EXPECT_EQ(raw.off_diagonal.c, (std::vector<double>{-2, -2}));
  EXPECT_EQ(raw.diagonal.y, (std::vector<double>{1, 9, 4}));
}

TEST(RawCovariance, ZeroResiduals) {
  Rng rng(3);
  const auto ds = testing_support::random_dataset(rng, 20, 3, 0, 1, [](std::size_t, double t, Rng&) { return 1 + t; });
  const EvalGrid grid(ds.domain(), 21);
  MeanCurve mean{grid, {}, 1};
  for (double t : grid.points()) mean.values.push_back(1 + t);
  const auto raw = raw_covariance(ds, mean);
  for (double c : raw.off_diagonal.c) EXPECT_NEAR(c, 0.0, 1e-14);
}

TEST(RawCovariance, RankOneExpectation) {
  // y = xi phi(t) at fixed times (1, 2); the average product estimates lambda phi(1) phi(2).
  Rng rng(4);
  const double lambda = 2.0;
  std::normal_distribution<double> nd(0, std::sqrt(lambda));
  auto phi = [](double t) { return std::sin(t) / std::sqrt(std::numbers::pi); };
  std::vector<Subject> subjects;
  const std::size_t n = 20000;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = nd(rng);
    subjects.push_back({testing_support::subject_id(i), {1.0, 2.0}, {xi * phi(1.0), xi * phi(2.0)}});
  }
  const LongitudinalDataset ds("y", subjects, Interval{0, kTwoPi});
  const EvalGrid grid(ds.domain(), 21);
  const auto raw = raw_covariance(ds, zero_mean(grid));
  double sum = 0, sq = 0;
  for (std::size_t k = 0; k < raw.off_diagonal.size(); k += 2) {
    sum += raw.off_diagonal.c[k];
    sq += raw.off_diagonal.c[k] * raw.off_diagonal.c[k];
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, lambda * phi(1.0) * phi(2.0), 4 * se);
}

TEST(LocalLinearSurface, ReproducesConstant) {
  Rng rng(5);
  const auto ds = sparse_times(rng, 300);
  const EvalGrid grid(ds.domain(), 31);
  for (double h : {0.6, 1.2, 2.5}) {
    const auto flat = local_linear_surface(pairs_from(ds, [](double, double) { return 1.7; }), h, grid);
    EXPECT_LE((flat.array() - 1.7).abs().maxCoeff(), 1e-10);
  }
}

TEST(LocalLinearSurface, ReproducesProductOnLattice) {
  // Pairs on two interleaved lattices, mirror-symmetric about every interior
  // grid point, so the bilinear term drops out of the local intercept.
  SurfacePoints p;
  for (int a = 0; a <= 40; ++a)
    for (int b = 0; b < 40; ++b) {
      const double u = 0.025 * a, v = 0.025 * b + 0.0125;
      for (auto [s, t] : {std::pair{u, v}, std::pair{v, u}}) {
        p.s.push_back(s);
        p.t.push_back(t);
        p.c.push_back(s * t);
        p.subject.push_back(static_cast<std::uint32_t>(a));
      }
    }
  p.canonicalize();
  const EvalGrid grid(Interval{0, 1}, 41);
  for (double h : {0.06, 0.1, 0.2}) {
    const auto g = local_linear_surface(p, h, grid);
    for (std::size_t a = 0; a < grid.size(); ++a)
      for (std::size_t b = 0; b < grid.size(); ++b) {
        const bool interior = grid[a] >= h && grid[a] <= 1 - h && grid[b] >= h && grid[b] <= 1 - h;
        if (interior) EXPECT_NEAR(g(a, b), grid[a] * grid[b], 1e-10);
      }
  }
}

TEST(LocalLinearSurface, ExactlySymmetric) {
  Rng rng(6);
  std::normal_distribution<double> nd;
  const auto ds = sparse_times(rng, 60, 3);
  auto pairs = pairs_from(ds, [&](double, double) { return nd(rng); });
  const EvalGrid grid(ds.domain(), 25);
  const auto g = local_linear_surface(pairs, 1.5, grid);
  EXPECT_TRUE((g.array() == g.transpose().array()).all());
}

TEST(LocalLinearSurface, SweepMatchesReferencePlane) {
  Rng rng(7);
  std::normal_distribution<double> nd;
  const auto ds = sparse_times(rng, 150, 4);
  const auto pairs = pairs_from(ds, [&](double s, double t) { return std::sin(s) * std::cos(t) + nd(rng); });
  const EvalGrid grid(ds.domain(), 21);
  const double h = 1.3;
  const auto fit = detail::local_plane_grid(pairs, h, grid, detail::order_by_t(pairs), false).values;
  for (std::size_t a = 0; a < grid.size(); a += 2)
    for (std::size_t b = 0; b < grid.size(); b += 3) EXPECT_NEAR(fit(a, b), reference_plane(pairs, grid[a], grid[b], h), 1e-8);
}

TEST(LocalLinearSurface, SineProductRecovery) {
  Rng rng(8);
  // Scores of +-1 keep the target exactly sin(s) sin(t) in sample, so the
  // tolerance measures smoothing error rather than the spread of xi^2.
  std::normal_distribution<double> nd(0, 0.25);
  std::vector<double> xi(500);
  for (auto& x : xi) x = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  const auto ds = testing_support::random_dataset(rng, 500, 6, 0, kTwoPi,
                                                  [&](std::size_t i, double t, Rng& g) { return xi[i] * std::sin(t) + nd(g); });
  const EvalGrid grid(ds.domain(), 51);
  const auto mean = local_linear_mean(ds, select_bandwidth(ds, BandwidthTarget::mean), grid);
  const double h = select_bandwidth(ds, BandwidthTarget::surface, &mean);
  const auto g = local_linear_surface(raw_covariance(ds, mean).off_diagonal, h, grid);
  double worst = 0;
  for (std::size_t a = 0; a < grid.size(); ++a)
    for (std::size_t b = 0; b < grid.size(); ++b) {
      const bool central = grid[a] >= 0.25 * kTwoPi && grid[a] <= 0.75 * kTwoPi && grid[b] >= 0.25 * kTwoPi &&
                           grid[b] <= 0.75 * kTwoPi;
      if (central) worst = std::max(worst, std::abs(g(a, b) - std::sin(grid[a]) * std::sin(grid[b])));
    }
  EXPECT_LE(worst, 0.2);
}

TEST(EstimateSigma2, WhiteNoise) {
  Rng rng(9);
  std::normal_distribution<double> nd(0, 0.5);
  const auto ds = testing_support::random_dataset(rng, 400, 6, 0, kTwoPi, [&](std::size_t, double, Rng& g) { return nd(g); });
  const EvalGrid grid(ds.domain(), 51);
  const auto mean = local_linear_mean(ds, select_bandwidth(ds, BandwidthTarget::mean), grid);
  const auto raw = raw_covariance(ds, mean);
  const double hg = select_bandwidth(ds, BandwidthTarget::surface, &mean);
  const auto g = local_linear_surface(raw.off_diagonal, hg, grid);
  const double hv = select_bandwidth_curve(raw.diagonal, ds.domain());
  EXPECT_NEAR(estimate_sigma2(raw.diagonal, g, grid, hv), 0.25, 0.04);
}

TEST(EstimateSigma2, NoiselessCommonDesign) {
  // Per-subject constants on a shared design: the diagonal and off-diagonal
  // smoothers see the same values, so the gap is zero.
  Rng rng(10);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> nd;
  std::vector<double> times(8);
  for (auto& t : times) t = u(rng);
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < 60; ++i) subjects.push_back({testing_support::subject_id(i), times, std::vector<double>(8, nd(rng))});
  const LongitudinalDataset ds("y", subjects, Interval{0, 1});
  const EvalGrid grid(ds.domain(), 21);
  const auto mean = local_linear_mean(ds, 0.5, grid);
  const auto raw = raw_covariance(ds, mean);
  const auto g = local_linear_surface(raw.off_diagonal, 0.5, grid);
  EXPECT_NEAR(estimate_sigma2(raw.diagonal, g, grid, 0.5), 0.0, 1e-10);
}

TEST(EstimateSigma2, ClampedAtZero) {
  const EvalGrid grid(Interval{0, 1}, 21);
  ScatterPoints diag;
  for (double t : grid.points()) {
    diag.t.push_back(t);
    diag.y.push_back(1.0);
    diag.subject.push_back(0);
  }
  const Eigen::MatrixXd surface = Eigen::MatrixXd::Constant(21, 21, 3.0);
  EXPECT_EQ(estimate_sigma2(diag, surface, grid, 0.3), 0.0);
}

TEST(EstimateSigma2, NeverNegative) {
  Rng rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    std::normal_distribution<double> nd(0, 0.1 * rep);
    const auto ds = testing_support::rank_two_dataset(rng, 60, {2.0, 0.5, 0.01 * rep * rep}, 4);
    const EvalGrid grid(ds.domain(), 31);
    const auto mean = local_linear_mean(ds, 1.5, grid);
    const auto raw = raw_covariance(ds, mean);
    const auto g = local_linear_surface(raw.off_diagonal, 1.5, grid);
    EXPECT_GE(estimate_sigma2(raw.diagonal, g, grid, 1.0), 0.0);
  }
}

TEST(SelectBandwidth, CandidateGrid) {
  ScatterPoints p;
  for (int k = 0; k <= 100; ++k) {
    p.t.push_back(0.01 * k);
    p.y.push_back(0);
    p.subject.push_back(0);
  }
  const auto c = bandwidth_candidates(p, Interval{0, 1}, 10);
  ASSERT_EQ(c.size(), 10u);
  EXPECT_NEAR(c.front(), 0.02, 1e-12);
  EXPECT_NEAR(c.back(), 0.5, 1e-12);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_NEAR(c[k] / c[k - 1], std::pow(25.0, 1.0 / 9), 1e-12);
}

TEST(SelectBandwidth, TieGoesToLargerBandwidth) {
  EXPECT_EQ(detail::pick_bandwidth({0.1, 0.2}, {0.0, 0.0}, 1.0), 0.2);
  EXPECT_EQ(detail::pick_bandwidth({0.1, 0.2, 0.4}, {1.0, 0.5, 0.7}, 1.0), 0.2);
  EXPECT_THROW(detail::pick_bandwidth({0.1}, {std::numeric_limits<double>::infinity()}, 1.0), NumericalError);
  Rng rng(12);
  const auto p = scatter(rng, 200, 0, 1, [](double t) { return 1 - 2 * t; });
  const auto c = bandwidth_candidates(p, Interval{0, 1}, 10);
  EXPECT_EQ(select_bandwidth_curve(p, Interval{0, 1}), c.back());
}

TEST(SelectBandwidth, WhiteNoiseFavoursLargest) {
  // GCV on pure noise picks the widest window in most replicates; the rest
  // are chance dips of the residual sum.
  std::vector<int> hits(10, 0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd;
    const auto p = scatter(rng, 400, 0, 1, [&](double) { return nd(rng); });
    const auto c = bandwidth_candidates(p, Interval{0, 1}, 10);
    ++hits[std::find(c.begin(), c.end(), select_bandwidth_curve(p, Interval{0, 1})) - c.begin()];
  }
  EXPECT_EQ(std::max_element(hits.begin(), hits.end()) - hits.begin(), 9);
  EXPECT_GE(hits[9], 60);
}

TEST(SelectBandwidth, SmoothSignalInterior) {
  Rng rng(16);
  std::normal_distribution<double> nd(0, 0.3);
  const auto p = scatter(rng, 2000, 0, 1, [&](double t) { return std::sin(6 * t) + nd(rng); });
  const auto c = bandwidth_candidates(p, Interval{0, 1}, 10);
  const double h = select_bandwidth_curve(p, Interval{0, 1});
  EXPECT_GT(h, c.front());
  EXPECT_LT(h, c.back());
  // the GCV curve decreases then increases around the minimizer
  std::vector<double> score;
  for (double b : c) score.push_back(detail::gcv_curve(p, b));
  const auto best = std::min_element(score.begin(), score.end()) - score.begin();
  for (auto k = best; k + 1 < static_cast<std::ptrdiff_t>(c.size()); ++k) EXPECT_LE(score[k], score[k + 1]);
}

TEST(SelectBandwidth, SweepMatchesPointwiseFits) {
  Rng rng(17);
  std::normal_distribution<double> nd;
  auto p = scatter(rng, 500, 0, 10, [&](double t) { return t + nd(rng); });
  // duplicated times exercise ties
  for (int k = 0; k < 20; ++k) {
    p.t.push_back(p.t[k * 7]);
    p.y.push_back(nd(rng));
    p.subject.push_back(0);
  }
  p.canonicalize();
  for (double h : {0.08, 0.3, 1.0, 5.0}) {
    const auto sweep = detail::local_line_at_points(p, h);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto direct = detail::local_line_widening(p, p.t[k], h);
      ASSERT_TRUE(direct);
      EXPECT_NEAR(sweep[k].intercept, direct->intercept, 1e-8 * (1 + std::abs(direct->intercept)));
      EXPECT_NEAR(sweep[k].self_hat, direct->self_hat, 1e-8);
    }
  }
}

TEST(SelectBandwidth, LeaveOneCurveOutRuns) {
  Rng rng(18);
  std::normal_distribution<double> nd(0, 0.3);
  const auto ds = testing_support::random_dataset(rng, 80, 5, 0, kTwoPi, [&](std::size_t, double t, Rng& g) { return std::sin(t) + nd(g); });
  BandwidthOptions opt;
  opt.method = BandwidthMethod::leave_one_curve_out;
  const double h = select_bandwidth(ds, BandwidthTarget::mean, nullptr, opt);
  const auto c = bandwidth_candidates(pooled_observations(ds), ds.domain(), 10);
  EXPECT_NE(std::find(c.begin(), c.end(), h), c.end());
}

TEST(Smoothing, SubjectOrderBitIdentical) {
  Rng rng(19);
  const auto ds = testing_support::rank_two_dataset(rng, 80);
  const auto rev = testing_support::reversed(ds);
  const EvalGrid grid(ds.domain(), 51);
  const double hm = select_bandwidth(ds, BandwidthTarget::mean);
  EXPECT_EQ(hm, select_bandwidth(rev, BandwidthTarget::mean));
  const auto m1 = local_linear_mean(ds, hm, grid);
  const auto m2 = local_linear_mean(rev, hm, grid);
  EXPECT_EQ(m1.values, m2.values);
  const auto r1 = raw_covariance(ds, m1);
  const auto r2 = raw_covariance(rev, m2);
  const double hg = select_bandwidth(ds, BandwidthTarget::surface, &m1);
  EXPECT_EQ(hg, select_bandwidth(rev, BandwidthTarget::surface, &m2));
  const auto g1 = local_linear_surface(r1.off_diagonal, hg, grid);
  const auto g2 = local_linear_surface(r2.off_diagonal, hg, grid);
  EXPECT_TRUE((g1.array() == g2.array()).all());
  EXPECT_EQ(estimate_sigma2(r1.diagonal, g1, grid, hm), estimate_sigma2(r2.diagonal, g2, grid, hm));
}
