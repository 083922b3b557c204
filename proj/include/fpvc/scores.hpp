#pragma once

#include <span>
#include <unordered_map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/data.hpp"
#include "fpvc/error.hpp"
#include "fpvc/fpca.hpp"
#include "fpvc/mixed_model.hpp"

namespace fpvc {

enum class ScoreKind { blup, refit };

inline std::string to_string(ScoreKind k) { return k == ScoreKind::blup ? "blup" : "refit"; }

struct ScoreMatrix {
  std::vector<std::string> ids;
  Eigen::MatrixXd scores;  ///< subjects x K
  ScoreKind kind = ScoreKind::blup;
  std::string outcome_label;

  std::size_t size() const noexcept { return ids.size(); }
  Eigen::Index K() const noexcept { return scores.cols(); }

  /// Rows reordered to match `order`; every id must be present.
  ScoreMatrix select(const std::vector<std::string>& order) const {
    std::unordered_map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < ids.size(); ++i) pos.emplace(ids[i], static_cast<Eigen::Index>(i));
    ScoreMatrix out{order, Eigen::MatrixXd(static_cast<Eigen::Index>(order.size()), scores.cols()), kind, outcome_label};
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto it = pos.find(order[i]);
      if (it == pos.end()) throw InputError("no scores for subject '" + order[i] + "'");
      out.scores.row(static_cast<Eigen::Index>(i)) = scores.row(it->second);
    }
    return out;
  }
};

struct RefitCovariance {
  Eigen::MatrixXd D;
  double sigma2 = 0.0;
  double reml_loglik = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

/// Basis values phi_k(t_r), r x K.
inline Eigen::MatrixXd basis_at(const FpcaModel& model, std::span<const double> times) {
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(model.K()));
  for (std::size_t r = 0; r < times.size(); ++r)
    for (std::size_t k = 0; k < model.K(); ++k)
      phi(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = model.eigenfunction_at(k, times[r]);
  return phi;
}

/// Sigma_y for one subject: G(t_r, t_l) + sigma2 on the diagonal.
inline Eigen::MatrixXd subject_covariance(const FpcaModel& model, std::span<const double> times) {
  const auto r = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd S(r, r);
  for (Eigen::Index a = 0; a < r; ++a)
    for (Eigen::Index b = a; b < r; ++b) {
      const double v = model.covariance_at(times[static_cast<std::size_t>(a)], times[static_cast<std::size_t>(b)]);
      S(a, b) = v;
      S(b, a) = v;
    }
  S.diagonal().array() += model.sigma2;
  return S;
}

/// Solves Sigma x = rhs, adding 1e-8 * trace / r to the diagonal when Sigma is
/// numerically singular (condition estimate above 1e12).
inline Eigen::MatrixXd solve_covariance(Eigen::MatrixXd S, const Eigen::MatrixXd& rhs) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  // rcond() alone misses exact zero pivots, so check the pivot ratio too
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  const bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() && d.minCoeff() > 1e-12 * d.maxCoeff() &&
                  ldlt.rcond() > 1e-12;
  if (!ok) {
    const double ridge = 1e-8 * S.trace() / static_cast<double>(S.rows());
    S.diagonal().array() += ridge > 0.0 ? ridge : 1e-300;
    ldlt.compute(S);
    if (ldlt.info() != Eigen::Success) throw NumericalError("subject covariance is singular after ridge");
  }
  return ldlt.solve(rhs);
}

/// Residuals y - mu(t) on the model's scale.
inline Eigen::VectorXd model_residuals(const FpcaModel& model, const Subject& s) {
  Eigen::VectorXd res(static_cast<Eigen::Index>(s.times.size()));
  for (std::size_t r = 0; r < s.times.size(); ++r)
    res(static_cast<Eigen::Index>(r)) = model.scaling.apply(s.values[r]) - model.mean_at(s.times[r]);
  return res;
}

/// xi_k = lambda_k phi_k' Sigma^{-1} (y - mu) for one subject.
inline Eigen::VectorXd blup_subject(const FpcaModel& model, std::span<const double> times, const Eigen::VectorXd& residual) {
  const Eigen::MatrixXd phi = basis_at(model, times);
  const Eigen::VectorXd w = solve_covariance(subject_covariance(model, times), residual);
  Eigen::VectorXd xi = phi.transpose() * w;
  for (std::size_t k = 0; k < model.K(); ++k) xi(static_cast<Eigen::Index>(k)) *= model.eigenvalues[k];
  return xi;
}

/// Conditional-expectation scores. Outcomes are mapped with the model's scaling first.
inline ScoreMatrix blup_scores(const FpcaModel& model, const LongitudinalDataset& ds) {
  ScoreMatrix out{ds.ids(), Eigen::MatrixXd(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(model.K())),
                  ScoreKind::blup, ds.label()};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.subject(i);
    out.scores.row(static_cast<Eigen::Index>(i)) = blup_subject(model, s.times, model_residuals(model, s)).transpose();
  }
  return out;
}

/// Scores from a mixed model on the estimated basis with unstructured D,
/// variance parameters by REML.
inline std::pair<ScoreMatrix, RefitCovariance> refit_scores(const FpcaModel& model, const LongitudinalDataset& ds,
                                                            MixedModelOptions opt = {}) {
  const auto K = static_cast<Eigen::Index>(model.K());
  if (ds.size() < model.K() + 2) throw InputError("refit needs at least K + 2 subjects");
  MixedModelData data;
  double ss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.subject(i);
    data.y.push_back(model_residuals(model, s));
    data.X.emplace_back(static_cast<Eigen::Index>(s.times.size()), 0);
    data.Z.push_back(basis_at(model, s.times));
    ss += data.y.back().squaredNorm();
    count += s.times.size();
  }
  Eigen::MatrixXd D0 = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index k = 0; k < K; ++k) D0(k, k) = model.eigenvalues[static_cast<std::size_t>(k)];
  const double s0 = std::max(model.sigma2, 1e-3 * ss / static_cast<double>(count));
  opt.structure = CovarianceStructure::unstructured;
  const auto fit = fit_mixed_model(data, D0, s0, opt);

  ScoreMatrix scores{ds.ids(), fit.blups, ScoreKind::refit, ds.label()};
  RefitCovariance cov{fit.D, fit.sigma2, fit.reml_loglik, fit.iterations, fit.trace};
  return {std::move(scores), std::move(cov)};
}

}  // namespace fpvc
