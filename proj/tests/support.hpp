#pragma once

// Seeded generators and small builders shared by the unit suites.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/data.hpp"
#include "fpvc/sim.hpp"

namespace testing_support {

using Rng = std::mt19937_64;

inline Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

inline Eigen::MatrixXd genotype_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double maf, int trials = 2) {
  std::binomial_distribution<int> bd(trials, maf);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = bd(rng);
  return m;
}

inline std::string subject_id(std::size_t i) { return fpvc::sim_subject_id(i); }

/// n subjects with Poisson(lambda)+min_obs uniform times on [lo, hi]; value(i, t, rng) per observation.
inline fpvc::LongitudinalDataset random_dataset(Rng& rng, std::size_t n, double lambda, double lo, double hi,
                                                const std::function<double(std::size_t, double, Rng&)>& value,
                                                std::size_t min_obs = 2, std::string label = "y") {
  std::poisson_distribution<int> pois(lambda);
  std::uniform_real_distribution<double> unif(lo, hi);
  std::vector<fpvc::Subject> subjects;
  for (std::size_t i = 0; i < n; ++i) {
    fpvc::Subject s{subject_id(i), {}, {}};
    const std::size_t r = static_cast<std::size_t>(pois(rng)) + min_obs;
    for (std::size_t k = 0; k < r; ++k) s.times.push_back(unif(rng));
    std::sort(s.times.begin(), s.times.end());
    for (double t : s.times) s.values.push_back(value(i, t, rng));
    subjects.push_back(std::move(s));
  }
  return fpvc::LongitudinalDataset(std::move(label), std::move(subjects), fpvc::Interval{lo, hi});
}

/// Rank-2 process with orthonormal eigenfunctions on [0, 2 pi] plus N(0, sigma2) noise.
struct RankTwo {
  double lambda1 = 4.0, lambda2 = 1.0, sigma2 = 0.25;
  static double phi1(double t) { return std::sin(t) / std::sqrt(std::numbers::pi); }
  static double phi2(double t) { return std::cos(t) / std::sqrt(std::numbers::pi); }
};

inline fpvc::LongitudinalDataset rank_two_dataset(Rng& rng, std::size_t n, const RankTwo& p = {}, double lambda_pois = 6.0,
                                                  Eigen::MatrixXd* true_scores = nullptr) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd xi(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    xi(static_cast<Eigen::Index>(i), 0) = std::sqrt(p.lambda1) * nd(rng);
    xi(static_cast<Eigen::Index>(i), 1) = std::sqrt(p.lambda2) * nd(rng);
  }
  if (true_scores) *true_scores = xi;
  const double sd = std::sqrt(p.sigma2);
  return random_dataset(rng, n, lambda_pois, 0.0, 2.0 * std::numbers::pi, [&](std::size_t i, double t, Rng& g) {
    const auto ii = static_cast<Eigen::Index>(i);
    return xi(ii, 0) * RankTwo::phi1(t) + xi(ii, 1) * RankTwo::phi2(t) + sd * nd(g);
  });
}

/// Subject list of a dataset in reversed order.
inline fpvc::LongitudinalDataset reversed(const fpvc::LongitudinalDataset& ds) {
  auto subjects = ds.subjects();
  std::reverse(subjects.begin(), subjects.end());
  return fpvc::LongitudinalDataset(ds.label(), std::move(subjects), ds.domain());
}

}  // namespace testing_support
