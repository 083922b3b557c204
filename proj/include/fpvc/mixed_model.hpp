#pragma once

// Linear mixed model y_i = X_i beta + Z_i b_i + e_i, b_i ~ N(0, D), e_i ~ N(0, sigma2 I),
// fitted by REML-EM with explicit per-subject E-steps.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/error.hpp"

namespace fpvc {

struct MixedModelData {
  std::vector<Eigen::VectorXd> y;
  std::vector<Eigen::MatrixXd> X;  ///< may have zero columns
  std::vector<Eigen::MatrixXd> Z;

  std::size_t subjects() const noexcept { return y.size(); }
  Eigen::Index fixed_dim() const noexcept { return X.empty() ? 0 : X.front().cols(); }
  Eigen::Index random_dim() const noexcept { return Z.empty() ? 0 : Z.front().cols(); }
  std::size_t observations() const noexcept {
    std::size_t n = 0;
    for (const auto& v : y) n += static_cast<std::size_t>(v.size());
    return n;
  }
};

enum class CovarianceStructure { unstructured, diagonal };

struct MixedModelOptions {
  CovarianceStructure structure = CovarianceStructure::unstructured;
  int max_iterations = 500;
  double tolerance = 1e-8;  ///< relative change in the restricted log-likelihood
  double min_eigenvalue = 1e-10;
  double min_sigma2 = 1e-10;
  bool accelerate = true;
};

struct MixedModelFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd D;
  double sigma2 = 0.0;
  double reml_loglik = 0.0;
  double ml_loglik = 0.0;
  int iterations = 0;
  std::vector<double> trace;  ///< restricted log-likelihood after each iteration, starting value first
  Eigen::MatrixXd blups;      ///< subjects x random_dim
};

namespace detail {

struct EmPass {
  double reml = 0.0;
  double ml = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd blups;
  Eigen::MatrixXd D_next;
  double sigma2_next = 0.0;
};

/// One E-step at (D, sigma2): GLS beta, BLUPs, both log-likelihoods and the
/// M-step update. Sums are accumulated in subject order.
inline EmPass em_pass(const MixedModelData& data, const Eigen::MatrixXd& D, double sigma2) {
  const auto n = data.subjects();
  const auto p = data.fixed_dim();
  const auto q = data.random_dim();
  const double N = static_cast<double>(data.observations());

  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol(n);
  std::vector<Eigen::MatrixXd> WZ(n), WX(n);
  std::vector<Eigen::VectorXd> Wy(n);
  Eigen::MatrixXd XtWX = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd XtWy = Eigen::VectorXd::Zero(p);
  double logdet_v = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& Z = data.Z[i];
    const auto r = Z.rows();
    Eigen::MatrixXd V = Z * D * Z.transpose();
    V.diagonal().array() += sigma2;
    chol[i].compute(V);
    if (chol[i].info() != Eigen::Success) throw NumericalError("marginal covariance is not positive definite");
    const Eigen::MatrixXd L = chol[i].matrixL();
    logdet_v += 2.0 * L.diagonal().array().log().sum();
    WZ[i] = chol[i].solve(Z);
    Wy[i] = chol[i].solve(data.y[i]);
    if (p > 0) {
      WX[i] = chol[i].solve(data.X[i]);
      XtWX.noalias() += data.X[i].transpose() * WX[i];
      XtWy.noalias() += data.X[i].transpose() * Wy[i];
    } else {
      WX[i].resize(r, 0);
    }
  }

  EmPass out;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(p, p);
  double logdet_xwx = 0.0;
  out.beta = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    Eigen::LLT<Eigen::MatrixXd> cx(XtWX);
    if (cx.info() != Eigen::Success) throw NumericalError("fixed-effect design is rank deficient");
    C = cx.solve(Eigen::MatrixXd::Identity(p, p));
    out.beta = cx.solve(XtWy);
    const Eigen::MatrixXd L = cx.matrixL();
    logdet_xwx = 2.0 * L.diagonal().array().log().sum();
  }

  out.blups.resize(static_cast<Eigen::Index>(n), q);
  Eigen::MatrixXd D_sum = Eigen::MatrixXd::Zero(q, q);
  double e_sum = 0.0;
  double quad = 0.0;
  const double s4 = sigma2 * sigma2;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& Z = data.Z[i];
    const auto r = Z.rows();
    Eigen::VectorXd res = data.y[i];
    Eigen::VectorXd Wres = Wy[i];
    if (p > 0) {
      res.noalias() -= data.X[i] * out.beta;
      Wres.noalias() -= WX[i] * out.beta;
    }
    quad += res.dot(Wres);
    const Eigen::VectorXd b = D * (Z.transpose() * Wres);
    out.blups.row(static_cast<Eigen::Index>(i)) = b.transpose();

    // Var(b | y) = D - D Z'PZ D with the per-subject block of P.
    Eigen::MatrixXd ZtPZ = Z.transpose() * WZ[i];
    double tr_p = chol[i].solve(Eigen::MatrixXd::Identity(r, r)).trace();
    if (p > 0) {
      const Eigen::MatrixXd ZtWX = Z.transpose() * WX[i];
      ZtPZ.noalias() -= ZtWX * C * ZtWX.transpose();
      tr_p -= (C * (WX[i].transpose() * WX[i])).trace();
    }
    const Eigen::MatrixXd var_b = D - D * ZtPZ * D;
    D_sum.noalias() += b * b.transpose() + var_b;
    const Eigen::VectorXd e = res - Z * b;
    e_sum += e.squaredNorm() + sigma2 * static_cast<double>(r) - s4 * tr_p;
  }

  const double log2pi = std::log(2.0 * std::numbers::pi);
  out.ml = -0.5 * (logdet_v + quad + N * log2pi);
  out.reml = -0.5 * (logdet_v + logdet_xwx + quad + (N - static_cast<double>(p)) * log2pi);
  out.D_next = D_sum / static_cast<double>(n);
  out.sigma2_next = e_sum / N;
  return out;
}

inline Eigen::MatrixXd project_covariance(const Eigen::MatrixXd& D, CovarianceStructure structure, double floor) {
  if (structure == CovarianceStructure::diagonal) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(D.rows(), D.cols());
    for (Eigen::Index k = 0; k < D.rows(); ++k) out(k, k) = std::max(D(k, k), floor);
    return out;
  }
  const Eigen::MatrixXd sym = 0.5 * (D + D.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

inline void validate(const MixedModelData& data) {
  if (data.y.empty()) throw InputError("mixed model needs at least one subject");
  if (data.X.size() != data.y.size() || data.Z.size() != data.y.size())
    throw InputError("mixed model: y, X and Z must have one entry per subject");
  const auto p = data.fixed_dim();
  const auto q = data.random_dim();
  if (q == 0) throw InputError("mixed model needs at least one random effect");
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    if (data.y[i].size() == 0) throw InputError("mixed model: subject without observations");
    if (data.X[i].rows() != data.y[i].size() || data.Z[i].rows() != data.y[i].size() || data.X[i].cols() != p ||
        data.Z[i].cols() != q)
      throw InputError("mixed model: inconsistent design dimensions");
    if (!data.y[i].allFinite() || !data.X[i].allFinite() || !data.Z[i].allFinite())
      throw InputError("mixed model: non-finite input");
  }
}

/// REML-EM from the given starting values. With `accelerate`, each iteration
/// is a squared-extrapolation cycle over two EM steps; the extrapolated point
/// is kept only when it beats the plain EM step, so the trace stays monotone.
/// Throws ConvergenceError (with the log-likelihood trace) if the tolerance is
/// not met within max_iterations.
inline MixedModelFit fit_mixed_model(const MixedModelData& data, Eigen::MatrixXd D0, double sigma2_0,
                                     const MixedModelOptions& opt = {}) {
  validate(data);
  if (D0.rows() != data.random_dim() || D0.cols() != data.random_dim())
    throw InputError("starting covariance has the wrong dimension");
  const auto q = data.random_dim();

  struct State {
    Eigen::MatrixXd D;
    double sigma2;
    detail::EmPass pass;
  };
  auto make_state = [&](const Eigen::MatrixXd& D, double s2) {
    State st{detail::project_covariance(D, opt.structure, opt.min_eigenvalue), std::max(s2, opt.min_sigma2), {}};
    st.pass = detail::em_pass(data, st.D, st.sigma2);
    return st;
  };
  auto em_step = [&](const State& st) { return make_state(st.pass.D_next, st.pass.sigma2_next); };
  auto pack = [&](const State& st) {
    Eigen::VectorXd v(q * q + 1);
    v.head(q * q) = Eigen::Map<const Eigen::VectorXd>(st.D.data(), q * q);
    v(q * q) = st.sigma2;
    return v;
  };

  MixedModelFit fit;
  State cur = make_state(D0, sigma2_0);
  fit.trace.push_back(cur.pass.reml);
  bool converged = false;
  int it = 0;
  while (it < opt.max_iterations) {
    ++it;
    const double previous = cur.pass.reml;
    State next = em_step(cur);
    if (opt.accelerate) {
      State second = em_step(next);
      const Eigen::VectorXd r = pack(next) - pack(cur);
      const Eigen::VectorXd v = pack(second) - pack(next) - r;
      next = std::move(second);
      if (v.norm() > 0.0) {
        const double alpha = std::min(-1.0, -r.norm() / v.norm());
        const Eigen::VectorXd x = pack(cur) - 2.0 * alpha * r + alpha * alpha * v;
        const Eigen::MatrixXd Dx = Eigen::Map<const Eigen::MatrixXd>(x.data(), q, q);
        try {
          State jump = make_state(0.5 * (Dx + Dx.transpose()), x(q * q));
          if (std::isfinite(jump.pass.reml) && jump.pass.reml > next.pass.reml) next = std::move(jump);
        } catch (const NumericalError&) {
          // extrapolated point left the parameter space; keep the EM step
        }
      }
    }
    cur = std::move(next);
    fit.trace.push_back(cur.pass.reml);
    if (std::abs(cur.pass.reml - previous) < opt.tolerance * std::abs(previous)) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw ConvergenceError("REML-EM did not converge in " + std::to_string(opt.max_iterations) + " iterations",
                           fit.trace);
  fit.beta = cur.pass.beta;
  fit.D = cur.D;
  fit.sigma2 = cur.sigma2;
  fit.reml_loglik = cur.pass.reml;
  fit.ml_loglik = cur.pass.ml;
  fit.iterations = it;
  fit.blups = cur.pass.blups;
  return fit;
}

}  // namespace fpvc
