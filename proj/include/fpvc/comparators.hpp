#pragma once

// Pre-specified-basis score estimators: random-coefficient mixed models on a
// polynomial or B-spline basis in time, with AIC selection over df.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/bspline.hpp"
#include "fpvc/data.hpp"
#include "fpvc/error.hpp"
#include "fpvc/mixed_model.hpp"
#include "fpvc/scores.hpp"

namespace fpvc {

enum class BasisKind { polynomial, bspline };

struct TimeScaling {
  double center = std::numbers::pi;
  double half_width = std::numbers::pi;
  double apply(double t) const noexcept { return (t - center) / half_width; }
};

struct ComparatorResult {
  ScoreMatrix scores;
  int df = 0;
  std::vector<double> aic;  ///< per df tried, NaN where the fit failed
};

namespace detail {

using BasisFn = std::function<Eigen::RowVectorXd(double)>;

/// Random-coefficient model: fixed and random effects share the basis, D diagonal.
inline MixedModelFit fit_basis_model(const LongitudinalDataset& ds, const BasisFn& basis, int df,
                                     const MixedModelOptions& base) {
  MixedModelData data;
  double ss = 0.0, sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : ds.subjects()) {
    const auto r = static_cast<Eigen::Index>(s.times.size());
    Eigen::MatrixXd B(r, df);
    Eigen::VectorXd y(r);
    for (Eigen::Index j = 0; j < r; ++j) {
      B.row(j) = basis(s.times[static_cast<std::size_t>(j)]);
      y(j) = s.values[static_cast<std::size_t>(j)];
      sum += y(j);
      ss += y(j) * y(j);
    }
    count += s.times.size();
    data.y.push_back(std::move(y));
    data.X.push_back(B);
    data.Z.push_back(std::move(B));
  }
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(ss / static_cast<double>(count) - mean * mean, 1e-8);
  MixedModelOptions opt = base;
  opt.structure = CovarianceStructure::diagonal;
  const Eigen::MatrixXd D0 = Eigen::MatrixXd::Identity(df, df) * (0.5 * var / df);
  return fit_mixed_model(data, D0, 0.5 * var, opt);
}

}  // namespace detail

/// BLUPs from y = b0 + b1 t~ + xi_1 + xi_2 t~ + e with t~ the scaled time.
inline ScoreMatrix linear_comparator_scores(const LongitudinalDataset& ds, TimeScaling ts = {},
                                            const MixedModelOptions& opt = {}) {
  const auto fit = detail::fit_basis_model(
      ds, [&](double t) { return Eigen::RowVector2d(1.0, ts.apply(t)); }, 2, opt);
  return ScoreMatrix{ds.ids(), fit.blups, ScoreKind::blup, ds.label()};
}

inline Eigen::RowVectorXd polynomial_row(double tt, int df) {
  Eigen::RowVectorXd row(df);
  double v = 1.0;
  for (int k = 0; k < df; ++k) {
    row(k) = v;
    v *= tt;
  }
  return row;
}

/// AIC-selected basis model over df in [df_min, df_max]. The AIC counts df
/// fixed effects, df variance components and the residual variance, with the
/// likelihood evaluated at the REML estimates.
inline ComparatorResult basis_comparator_scores(const LongitudinalDataset& ds, BasisKind kind, int df_min = 2,
                                                int df_max = 6, TimeScaling ts = {},
                                                const MixedModelOptions& opt = {}) {
  if (df_min < 1 || df_max < df_min) throw InputError("invalid df range");
  std::vector<double> pooled;
  for (const auto& s : ds.subjects()) pooled.insert(pooled.end(), s.times.begin(), s.times.end());

  ComparatorResult best;
  best.df = 0;
  double best_aic = std::numeric_limits<double>::infinity();
  std::string last_error;
  for (int df = df_min; df <= df_max; ++df) {
    detail::BasisFn basis;
    if (kind == BasisKind::polynomial) {
      basis = [ts, df](double t) { return polynomial_row(ts.apply(t), df); };
    } else {
      auto bs = std::make_shared<BSplineBasis>(BSplineBasis::from_df(pooled, df));
      basis = [bs](double t) { return Eigen::RowVectorXd(bs->evaluate(t).transpose()); };
    }
    try {
      const auto fit = detail::fit_basis_model(ds, basis, df, opt);
      const double aic = -2.0 * fit.ml_loglik + 2.0 * (2.0 * df + 1.0);
      best.aic.push_back(aic);
      if (aic < best_aic) {
        best_aic = aic;
        best.df = df;
        best.scores = ScoreMatrix{ds.ids(), fit.blups, ScoreKind::blup, ds.label()};
      }
    } catch (const Error& e) {
      best.aic.push_back(std::numeric_limits<double>::quiet_NaN());
      last_error = e.what();
    }
  }
  if (best.df == 0) throw NumericalError("every basis model failed: " + last_error);
  return best;
}

}  // namespace fpvc
