#pragma once

// Genotype-given-covariate models: centered genotypes z* = z - E(z | x), the
// gradient of the fitted mean in the parameters, and the influence vectors
// U(x) = I^{-1} x used to correct the null covariance.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/error.hpp"

namespace fpvc {

enum class NuisanceKind { empirical, logistic, binomial };

inline std::string to_string(NuisanceKind k) {
  switch (k) {
    case NuisanceKind::empirical: return "empirical";
    case NuisanceKind::logistic: return "logistic";
    case NuisanceKind::binomial: return "binomial";
  }
  return "?";
}

struct NuisanceModel {
  NuisanceKind kind = NuisanceKind::logistic;
  Eigen::VectorXd theta;        ///< GLM coefficients, or stratum means for the empirical kind
  Eigen::MatrixXd fisher_info;  ///< n^{-1} sum v x x'
  bool converged = false;
  bool degenerate = false;      ///< constant genotype column; z* and U are identically 0
  int iterations = 0;
  std::vector<std::vector<double>> strata;  ///< distinct covariate rows (empirical kind)

  Eigen::Index dim() const noexcept { return theta.size(); }
};

namespace detail {

inline double trials(NuisanceKind k) { return k == NuisanceKind::binomial ? 2.0 : 1.0; }

inline double expit(double eta) {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

inline std::vector<double> row_key(const Eigen::MatrixXd& x, Eigen::Index i) {
  std::vector<double> key(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) key[static_cast<std::size_t>(c)] = x(i, c);
  return key;
}

inline std::size_t stratum_index(const NuisanceModel& m, const std::vector<double>& key) {
  const auto it = std::lower_bound(m.strata.begin(), m.strata.end(), key);
  if (it == m.strata.end() || *it != key) throw InputError("covariate pattern not seen when fitting the empirical model");
  return static_cast<std::size_t>(it - m.strata.begin());
}

}  // namespace detail

/// Fitted mean g(theta, x) on the genotype scale.
inline double nuisance_mean(const NuisanceModel& m, const Eigen::RowVectorXd& x) {
  if (m.kind == NuisanceKind::empirical) {
    const Eigen::MatrixXd xm = x;
    return m.theta(static_cast<Eigen::Index>(detail::stratum_index(m, detail::row_key(xm, 0))));
  }
  return detail::trials(m.kind) * detail::expit(x.dot(m.theta));
}

/// d g / d theta at x.
inline Eigen::VectorXd nuisance_gradient(const NuisanceModel& m, const Eigen::RowVectorXd& x) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.dim());
  if (m.degenerate) return g;
  if (m.kind == NuisanceKind::empirical) {
    const Eigen::MatrixXd xm = x;
    g(static_cast<Eigen::Index>(detail::stratum_index(m, detail::row_key(xm, 0)))) = 1.0;
    return g;
  }
  const double p = detail::expit(x.dot(m.theta));
  return detail::trials(m.kind) * p * (1.0 - p) * x.transpose();
}

/// U(x) = I^{-1} times the design vector (stratum indicator for the empirical kind).
inline Eigen::VectorXd nuisance_influence(const NuisanceModel& m, const Eigen::RowVectorXd& x) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(m.dim());
  if (m.degenerate) return u;
  if (m.kind == NuisanceKind::empirical) {
    const Eigen::MatrixXd xm = x;
    const auto s = static_cast<Eigen::Index>(detail::stratum_index(m, detail::row_key(xm, 0)));
    u(s) = 1.0 / m.fisher_info(s, s);
    return u;
  }
  return m.fisher_info.ldlt().solve(x.transpose());
}

/// Fits E(z | x). Logistic needs z in [0, 1], binomial z in [0, 2]; x includes the intercept column.
inline NuisanceModel fit_nuisance(const Eigen::VectorXd& z, const Eigen::MatrixXd& x, NuisanceKind kind) {
  const auto n = z.size();
  const auto d = x.cols();
  if (x.rows() != n) throw InputError("genotype and covariate rows differ");
  if (!z.allFinite()) throw InputError("genotype column has missing values; impute first");
  NuisanceModel m;
  m.kind = kind;

  if (kind == NuisanceKind::empirical) {
    std::map<std::vector<double>, std::pair<double, double>> acc;  // sum z, count
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& a = acc[detail::row_key(x, i)];
      a.first += z(i);
      a.second += 1.0;
    }
    const auto S = static_cast<Eigen::Index>(acc.size());
    m.theta.resize(S);
    m.fisher_info = Eigen::MatrixXd::Zero(S, S);
    Eigen::Index s = 0;
    for (const auto& [key, a] : acc) {
      m.strata.push_back(key);
      m.theta(s) = a.first / a.second;
      m.fisher_info(s, s) = a.second / static_cast<double>(n);
      ++s;
    }
    m.converged = true;
    m.degenerate = (z.array() == z(0)).all();
    return m;
  }

  const double cap = detail::trials(kind);
  if (n <= d) throw InputError("nuisance model needs more subjects than covariates");
  if ((z.array() < 0.0).any() || (z.array() > cap).any())
    throw InputError(kind == NuisanceKind::logistic ? "logistic nuisance model needs genotypes in [0, 1]"
                                                    : "binomial nuisance model needs genotypes in [0, 2]");
  m.theta = Eigen::VectorXd::Zero(d);
  if ((z.array() == z(0)).all()) {
    // constant column: the fit is exact and carries no information
    m.degenerate = true;
    m.converged = true;
    m.fisher_info = Eigen::MatrixXd::Identity(d, d);
    const double p = z(0) / cap;
    if (p > 0.0 && p < 1.0) m.theta(0) = std::log(p / (1.0 - p));
    else m.theta(0) = p <= 0.0 ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    return m;
  }

  const double zbar = z.mean() / cap;
  m.theta(0) = std::log(zbar / (1.0 - zbar));
  Eigen::VectorXd mu(n), v(n);
  auto update_moments = [&] {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = detail::expit(x.row(i).dot(m.theta));
      mu(i) = cap * p;
      v(i) = cap * p * (1.0 - p);
    }
  };
  constexpr int kMaxIter = 100;
  update_moments();
  for (int it = 1; it <= kMaxIter; ++it) {
    m.iterations = it;
    const Eigen::MatrixXd info = x.transpose() * v.asDiagonal() * x;
    const Eigen::VectorXd score = x.transpose() * (z - mu);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14)
      throw NumericalError("nuisance design is singular (collinear covariates or separation); try the empirical kind");
    const Eigen::VectorXd step = ldlt.solve(score);
    m.theta += step;
    if (!m.theta.allFinite() || m.theta.norm() > 1e3)
      throw NumericalError("nuisance model coefficients diverge (separation); use the empirical kind");
    update_moments();
    if (step.cwiseAbs().maxCoeff() < 1e-10 * (1.0 + m.theta.cwiseAbs().maxCoeff())) {
      m.converged = true;
      break;
    }
  }
  if (!m.converged)
    throw NumericalError("nuisance model did not converge; possible separation, try the empirical kind");
  m.fisher_info = x.transpose() * v.asDiagonal() * x / static_cast<double>(n);
  return m;
}

/// Default nuisance kind for a genotype coding: logistic for 0/1 data, binomial otherwise.
inline NuisanceKind default_nuisance_kind(bool dominant) {
  return dominant ? NuisanceKind::logistic : NuisanceKind::binomial;
}

struct CenteredGenotypes {
  Eigen::MatrixXd zstar;                   ///< n x s
  std::vector<Eigen::MatrixXd> gradient;   ///< per marker, n x dim_j
  std::vector<Eigen::MatrixXd> influence;  ///< per marker, n x dim_j

  Eigen::Index subjects() const noexcept { return zstar.rows(); }
  Eigen::Index markers() const noexcept { return zstar.cols(); }
};

inline CenteredGenotypes center_genotypes(const std::vector<NuisanceModel>& models, const Eigen::MatrixXd& z,
                                          const Eigen::MatrixXd& x) {
  if (static_cast<Eigen::Index>(models.size()) != z.cols()) throw InputError("one nuisance model per marker is required");
  if (z.rows() != x.rows()) throw InputError("genotype and covariate subjects differ");
  const auto n = z.rows();
  CenteredGenotypes out;
  out.zstar.resize(n, z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const auto& m = models[static_cast<std::size_t>(j)];
    Eigen::MatrixXd grad(n, m.dim()), infl(n, m.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::RowVectorXd xi = x.row(i);
      out.zstar(i, j) = m.degenerate ? 0.0 : z(i, j) - nuisance_mean(m, xi);
      grad.row(i) = nuisance_gradient(m, xi).transpose();
      infl.row(i) = nuisance_influence(m, xi).transpose();
    }
    out.gradient.push_back(std::move(grad));
    out.influence.push_back(std::move(infl));
  }
  return out;
}

/// Fits one model per column and centers.
inline CenteredGenotypes center_window(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, NuisanceKind kind) {
  std::vector<NuisanceModel> models;
  models.reserve(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) models.push_back(fit_nuisance(z.col(j), x, kind));
  return center_genotypes(models, z, x);
}

/// A_kj = n^{-1} sum_i xi_ik gdot_j(x_i)'; one K x dim_j matrix per marker.
inline std::vector<Eigen::MatrixXd> coupling_matrices(const Eigen::MatrixXd& scores, const CenteredGenotypes& cg) {
  if (scores.rows() != cg.subjects()) throw InputError("scores and genotypes cover different subjects");
  std::vector<Eigen::MatrixXd> out;
  out.reserve(cg.gradient.size());
  const double inv_n = 1.0 / static_cast<double>(scores.rows());
  for (const auto& g : cg.gradient) out.push_back(inv_n * scores.transpose() * g);
  return out;
}

}  // namespace fpvc
