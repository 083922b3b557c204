#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/error.hpp"

namespace fpvc {

/// B-spline basis of a given degree on [lo, hi] with the supplied interior
/// knots; boundary knots are repeated degree + 1 times. Includes every basis
/// function, so the functions sum to one on [lo, hi].
class BSplineBasis {
public:
  BSplineBasis(double lo, double hi, std::vector<double> interior, int degree)
      : lo_(lo), hi_(hi), degree_(degree) {
    if (!(hi > lo)) throw InputError("B-spline range is empty");
    if (degree < 0) throw InputError("B-spline degree must be nonnegative");
    std::sort(interior.begin(), interior.end());
    for (double k : interior)
      if (!(k > lo && k < hi)) throw InputError("interior knots must lie strictly inside the range");
    knots_.assign(static_cast<std::size_t>(degree + 1), lo);
    knots_.insert(knots_.end(), interior.begin(), interior.end());
    knots_.insert(knots_.end(), static_cast<std::size_t>(degree + 1), hi);
  }

  /// Cubic basis with df functions: df - 4 interior knots at quantiles of
  /// `times`. Below df = 4 the degree drops to df - 1 with no interior knots.
  static BSplineBasis from_df(std::vector<double> times, int df) {
    if (df < 1) throw InputError("B-spline df must be positive");
    if (times.empty()) throw InputError("no times for B-spline knots");
    std::sort(times.begin(), times.end());
    const double lo = times.front(), hi = times.back();
    if (df < 4) return BSplineBasis(lo, hi, {}, df - 1);
    const int n_interior = df - 4;
    std::vector<double> interior;
    for (int k = 1; k <= n_interior; ++k) {
      // type-7 sample quantile
      const double pos = static_cast<double>(k) / (n_interior + 1) * static_cast<double>(times.size() - 1);
      const auto a = static_cast<std::size_t>(std::floor(pos));
      const auto b = std::min(a + 1, times.size() - 1);
      interior.push_back(times[a] + (pos - static_cast<double>(a)) * (times[b] - times[a]));
    }
    return BSplineBasis(lo, hi, std::move(interior), 3);
  }

  int degree() const noexcept { return degree_; }
  int size() const noexcept { return static_cast<int>(knots_.size()) - degree_ - 1; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  /// Values of every basis function at t (clamped to the range).
  Eigen::VectorXd evaluate(double t) const {
    t = std::clamp(t, lo_, hi_);
    const int nb = size();
    const int m = static_cast<int>(knots_.size());
    // span index mu with knots[mu] <= t < knots[mu+1]; the right end uses the last nonempty span
    int mu = degree_;
    if (t >= hi_) {
      mu = m - degree_ - 2;
    } else {
      while (mu + 1 < m - degree_ - 1 && knots_[static_cast<std::size_t>(mu + 1)] <= t) ++mu;
    }
    std::vector<double> b(static_cast<std::size_t>(degree_ + 1), 0.0);
    b[0] = 1.0;
    for (int d = 1; d <= degree_; ++d) {
      std::vector<double> next(static_cast<std::size_t>(degree_ + 1), 0.0);
      for (int j = 0; j < d; ++j) {
        const int i = mu - d + 1 + j;  // basis index of b[j] at degree d - 1
        const double left = knots_[static_cast<std::size_t>(i)];
        const double right = knots_[static_cast<std::size_t>(i + d)];
        const double w = right > left ? b[static_cast<std::size_t>(j)] / (right - left) : 0.0;
        next[static_cast<std::size_t>(j)] += w * (right - t);
        next[static_cast<std::size_t>(j + 1)] += w * (t - left);
      }
      b.swap(next);
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(nb);
    for (int j = 0; j <= degree_; ++j) {
      const int idx = mu - degree_ + j;
      if (idx >= 0 && idx < nb) out(idx) = b[static_cast<std::size_t>(j)];
    }
    return out;
  }

private:
  double lo_, hi_;
  int degree_;
  std::vector<double> knots_;
};

}  // namespace fpvc
