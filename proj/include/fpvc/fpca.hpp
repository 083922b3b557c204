#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/data.hpp"
#include "fpvc/error.hpp"
#include "fpvc/smoothing.hpp"

namespace fpvc {

/// Eigenpairs of the integral operator with kernel G on the grid, sorted by
/// eigenvalue (nonincreasing). Columns of `functions` have unit quadrature norm.
struct EigenDecomposition {
  std::vector<double> values;
  Eigen::MatrixXd functions;
};

namespace detail {

/// Nonnegative integral; near-zero integrals defer to the midpoint value,
/// then to the first clearly nonzero value.
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> phi) {
  const double sum = phi.sum();
  const double mass = phi.cwiseAbs().sum();
  double sign = 0.0;
  if (std::abs(sum) > 1e-10 * mass) {
    sign = sum;
  } else {
    const double mid = phi(phi.size() / 2);
    const double peak = phi.cwiseAbs().maxCoeff();
    if (std::abs(mid) > 1e-8 * peak) {
      sign = mid;
    } else {
      for (Eigen::Index m = 0; m < phi.size(); ++m)
        if (std::abs(phi(m)) > 1e-8 * peak) {
          sign = phi(m);
          break;
        }
    }
  }
  if (sign < 0.0) phi = -phi;
}

}  // namespace detail

/// Solves the symmetric eigenproblem of G * spacing (rectangle-rule quadrature).
inline EigenDecomposition eigendecompose(const Eigen::MatrixXd& surface, const EvalGrid& grid) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  if (surface.rows() != m || surface.cols() != m) throw InputError("surface does not match the grid");
  if (!surface.allFinite()) throw NumericalError("covariance surface has non-finite entries");
  const double delta = grid.spacing();
  const Eigen::MatrixXd op = 0.5 * (surface + surface.transpose()) * delta;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(op);
  if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  EigenDecomposition out;
  out.values.resize(static_cast<std::size_t>(m));
  out.functions.resize(m, m);
  const double scale = 1.0 / std::sqrt(delta);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index src = m - 1 - k;
    out.values[static_cast<std::size_t>(k)] = solver.eigenvalues()(src);
    out.functions.col(k) = solver.eigenvectors().col(src) * scale;
    detail::fix_sign(out.functions.col(k));
  }
  return out;
}

/// Fraction of the positive spectrum carried by the first k eigenvalues.
inline double fraction_explained(std::span<const double> eigenvalues, std::size_t k) {
  double total = 0.0, head = 0.0;
  for (std::size_t j = 0; j < eigenvalues.size(); ++j) {
    if (eigenvalues[j] > 0.0) {
      total += eigenvalues[j];
      if (j < k) head += eigenvalues[j];
    }
  }
  return total > 0.0 ? head / total : 0.0;
}

/// Smallest K whose leading eigenvalues explain at least `threshold` of the
/// positive spectrum. Eigenvalues must be sorted nonincreasing.
inline std::size_t select_K(std::span<const double> eigenvalues, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InputError("FVE threshold must lie in (0, 1]");
  double total = 0.0;
  std::size_t positive = 0;
  for (double v : eigenvalues)
    if (v > 0.0) {
      total += v;
      ++positive;
    }
  if (positive == 0) throw NumericalError("covariance operator has no positive eigenvalue");
  double head = 0.0;
  for (std::size_t k = 0; k < positive; ++k) {
    head += eigenvalues[k];
    // relative slack absorbs rounding in the cumulative sum
    if (head >= threshold * total * (1.0 - 1e-12)) return k + 1;
  }
  return positive;
}

struct FpcaConfig {
  double fve = 0.99;
  std::size_t grid_points = 51;
  std::optional<double> mean_bandwidth;
  std::optional<double> surface_bandwidth;
  std::optional<double> diagonal_bandwidth;
  BandwidthOptions bandwidth;
  bool standardize = true;
};

struct FpcaModel {
  std::string outcome_label;
  EvalGrid grid;
  MeanCurve mean;
  std::vector<double> eigenvalues;      ///< retained, length K
  Eigen::MatrixXd eigenfunctions;       ///< grid.size() x K
  std::vector<double> all_eigenvalues;  ///< full spectrum, nonincreasing
  Eigen::MatrixXd covariance;           ///< positive part of the smoothed surface
  double sigma2 = 0.0;
  double fve = 0.0;
  double fve_threshold = 0.99;
  double surface_bandwidth = 0.0;
  double diagonal_bandwidth = 0.0;
  OutcomeScaling scaling;  ///< maps raw outcomes onto the scale the model was fitted on

  std::size_t K() const noexcept { return eigenvalues.size(); }

  double mean_at(double t) const noexcept { return mean(t); }

  double eigenfunction_at(std::size_t k, double t) const noexcept {
    const auto [m, f] = grid.locate(t);
    const auto kk = static_cast<Eigen::Index>(k);
    const auto a = static_cast<Eigen::Index>(m);
    return eigenfunctions(a, kk) + f * (eigenfunctions(a + 1, kk) - eigenfunctions(a, kk));
  }

  double covariance_at(double s, double t) const noexcept { return grid.interpolate(covariance, s, t); }
};

/// Model invariants: unit quadrature norm, mutual orthogonality, sorted
/// positive eigenvalues. Returns the worst orthonormality violation.
inline double orthonormality_error(const FpcaModel& model) {
  const Eigen::MatrixXd gram = model.eigenfunctions.transpose() * model.eigenfunctions * model.grid.spacing();
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

/// Builds a model from an already smoothed mean, surface and noise variance.
inline FpcaModel model_from_surface(std::string label, const MeanCurve& mean, const Eigen::MatrixXd& surface,
                                    double sigma2, double fve_threshold, double zero_tolerance = 0.0) {
  const auto& grid = mean.grid;
  auto eig = eigendecompose(surface, grid);
  for (auto& v : eig.values)
    if (v <= zero_tolerance) v = std::min(v, 0.0);
  const auto k = select_K(eig.values, fve_threshold);

  FpcaModel model;
  model.outcome_label = std::move(label);
  model.grid = grid;
  model.mean = mean;
  model.all_eigenvalues = eig.values;
  model.eigenvalues.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k));
  model.eigenfunctions = eig.functions.leftCols(static_cast<Eigen::Index>(k));
  model.fve = fraction_explained(eig.values, k);
  model.fve_threshold = fve_threshold;
  model.sigma2 = sigma2;
  const auto m = static_cast<Eigen::Index>(grid.size());
  model.covariance = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double v = eig.values[static_cast<std::size_t>(j)];
    if (v > 0.0) model.covariance.noalias() += v * eig.functions.col(j) * eig.functions.col(j).transpose();
  }
  model.covariance = (0.5 * (model.covariance + model.covariance.transpose())).eval();
  return model;
}

/// Smoothing, eigendecomposition and truncation in one pass.
inline FpcaModel fit_fpca(const LongitudinalDataset& raw, const FpcaConfig& cfg = {}) {
  OutcomeScaling scaling;
  LongitudinalDataset ds = raw;
  if (cfg.standardize) std::tie(ds, scaling) = standardize_outcome(raw);

  const EvalGrid grid(ds.domain(), cfg.grid_points);
  BandwidthOptions bw = cfg.bandwidth;
  bw.grid_points = cfg.grid_points;
  const auto obs = pooled_observations(ds);
  const double h_mean = cfg.mean_bandwidth ? *cfg.mean_bandwidth : select_bandwidth_curve(obs, ds.domain(), bw);
  const MeanCurve mean{grid, local_linear_curve(obs, h_mean, grid), h_mean};

  const auto rawcov = raw_covariance(ds, mean);
  if (rawcov.off_diagonal.size() < 3) throw InputError("no subject has two or more observations; covariance is not estimable");
  const double h_surface = cfg.surface_bandwidth
                               ? *cfg.surface_bandwidth
                               : select_bandwidth_surface(rawcov.off_diagonal, obs, ds.domain(), bw);
  const Eigen::MatrixXd surface = local_linear_surface(rawcov.off_diagonal, h_surface, grid);
  const double h_diag = cfg.diagonal_bandwidth ? *cfg.diagonal_bandwidth
                                               : select_bandwidth_curve(rawcov.diagonal, ds.domain(), bw);
  const double sigma2 = estimate_sigma2(rawcov.diagonal, surface, grid, h_diag);

  // Eigenvalues indistinguishable from rounding noise relative to the data's
  // second moment count as zero.
  double second_moment = 0.0;
  for (double y : obs.y) second_moment += y * y;
  second_moment /= static_cast<double>(obs.size());
  const double zero_tol = 1e-12 * second_moment * ds.domain().length();

  auto model = model_from_surface(ds.label(), mean, surface, sigma2, cfg.fve, zero_tol);
  model.surface_bandwidth = h_surface;
  model.diagonal_bandwidth = h_diag;
  model.scaling = scaling;
  return model;
}

struct Trajectory {
  EvalGrid grid;
  std::vector<double> values;
};

/// mean + sum_k score_k * phi_k on the grid, on the model's scale.
inline Trajectory predict_trajectory(const FpcaModel& model, std::span<const double> scores) {
  if (scores.size() != model.K())
    throw InputError("expected " + std::to_string(model.K()) + " scores, got " + std::to_string(scores.size()));
  Trajectory out{model.grid, model.mean.values};
  for (std::size_t m = 0; m < out.values.size(); ++m)
    for (std::size_t k = 0; k < scores.size(); ++k)
      out.values[m] += scores[k] * model.eigenfunctions(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  return out;
}

/// Maps a trajectory back to the outcome's original units.
inline Trajectory to_original_units(Trajectory traj, const OutcomeScaling& scaling) {
  for (auto& v : traj.values) v = scaling.invert(v);
  return traj;
}

// Text model format, one record per line:
//   fpvc-fpca-model 1
//   outcome <label>
//   grid <M> <lo> <hi>
//   scaling <mean> <sd>
//   bandwidths <mean> <surface> <diagonal>
//   sigma2 <v>
//   fve <threshold> <achieved>
//   K <K>
//   mean <M values>
//   spectrum <count> <values...>
//   eigenvalues <K values>
//   eigenfunction <k> <M values>         (K lines)
//   covariance <row> <M values>          (M lines)

inline void save_model(std::ostream& out, const FpcaModel& model) {
  out << std::setprecision(17);
  out << "fpvc-fpca-model 1\n";
  out << "outcome " << model.outcome_label << '\n';
  out << "grid " << model.grid.size() << ' ' << model.grid.domain().lo << ' ' << model.grid.domain().hi << '\n';
  out << "scaling " << model.scaling.mean << ' ' << model.scaling.sd << '\n';
  out << "bandwidths " << model.mean.bandwidth << ' ' << model.surface_bandwidth << ' ' << model.diagonal_bandwidth << '\n';
  out << "sigma2 " << model.sigma2 << '\n';
  out << "fve " << model.fve_threshold << ' ' << model.fve << '\n';
  out << "K " << model.K() << '\n';
  out << "mean";
  for (double v : model.mean.values) out << ' ' << v;
  out << "\nspectrum " << model.all_eigenvalues.size();
  for (double v : model.all_eigenvalues) out << ' ' << v;
  out << "\neigenvalues";
  for (double v : model.eigenvalues) out << ' ' << v;
  out << '\n';
  for (Eigen::Index k = 0; k < model.eigenfunctions.cols(); ++k) {
    out << "eigenfunction " << k + 1;
    for (Eigen::Index m = 0; m < model.eigenfunctions.rows(); ++m) out << ' ' << model.eigenfunctions(m, k);
    out << '\n';
  }
  for (Eigen::Index a = 0; a < model.covariance.rows(); ++a) {
    out << "covariance " << a + 1;
    for (Eigen::Index b = 0; b < model.covariance.cols(); ++b) out << ' ' << model.covariance(a, b);
    out << '\n';
  }
}

inline FpcaModel load_model(std::istream& in) {
  auto expect = [&](const std::string& key) {
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      std::istringstream ls(line);
      std::string word;
      ls >> word;
      if (word != key) throw InputError("model file: expected '" + key + "', found '" + word + "'");
      std::string rest;
      std::getline(ls, rest);
      return std::istringstream(rest);
    }
    throw InputError("model file: missing '" + key + "' record");
  };
  auto read_doubles = [](std::istringstream& ls, std::size_t count, const std::string& what) {
    std::vector<double> v(count);
    for (auto& x : v)
      if (!(ls >> x)) throw InputError("model file: short '" + what + "' record");
    return v;
  };
  FpcaModel model;
  {
    auto ls = expect("fpvc-fpca-model");
    int version = 0;
    ls >> version;
    if (version != 1) throw InputError("model file: unsupported version");
  }
  {
    auto ls = expect("outcome");
    std::string label;
    std::getline(ls, label);
    model.outcome_label = std::string(text::trim(label));
  }
  std::size_t m = 0;
  {
    auto ls = expect("grid");
    double lo = 0, hi = 0;
    if (!(ls >> m >> lo >> hi)) throw InputError("model file: bad grid record");
    model.grid = EvalGrid({lo, hi}, m);
  }
  {
    auto ls = expect("scaling");
    if (!(ls >> model.scaling.mean >> model.scaling.sd)) throw InputError("model file: bad scaling record");
  }
  double h_mean = 0;
  {
    auto ls = expect("bandwidths");
    if (!(ls >> h_mean >> model.surface_bandwidth >> model.diagonal_bandwidth)) throw InputError("model file: bad bandwidths");
  }
  {
    auto ls = expect("sigma2");
    if (!(ls >> model.sigma2)) throw InputError("model file: bad sigma2");
  }
  {
    auto ls = expect("fve");
    if (!(ls >> model.fve_threshold >> model.fve)) throw InputError("model file: bad fve");
  }
  std::size_t k = 0;
  {
    auto ls = expect("K");
    if (!(ls >> k)) throw InputError("model file: bad K");
  }
  {
    auto ls = expect("mean");
    model.mean = MeanCurve{model.grid, read_doubles(ls, m, "mean"), h_mean};
  }
  {
    auto ls = expect("spectrum");
    std::size_t count = 0;
    ls >> count;
    model.all_eigenvalues = read_doubles(ls, count, "spectrum");
  }
  {
    auto ls = expect("eigenvalues");
    model.eigenvalues = read_doubles(ls, k, "eigenvalues");
  }
  model.eigenfunctions.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j) {
    auto ls = expect("eigenfunction");
    std::size_t idx = 0;
    ls >> idx;
    const auto v = read_doubles(ls, m, "eigenfunction");
    for (std::size_t a = 0; a < m; ++a) model.eigenfunctions(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) = v[a];
  }
  model.covariance.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a) {
    auto ls = expect("covariance");
    std::size_t idx = 0;
    ls >> idx;
    const auto v = read_doubles(ls, m, "covariance");
    for (std::size_t b = 0; b < m; ++b) model.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v[b];
  }
  return model;
}

}  // namespace fpvc
