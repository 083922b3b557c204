#pragma once

// Simulation design with two functional outcomes driven by a single marker,
// and the type-I / power experiment driver.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/comparators.hpp"
#include "fpvc/data.hpp"
#include "fpvc/error.hpp"
#include "fpvc/fpca.hpp"
#include "fpvc/log.hpp"
#include "fpvc/nuisance.hpp"
#include "fpvc/parallel.hpp"
#include "fpvc/scan.hpp"
#include "fpvc/scores.hpp"
#include "fpvc/vc_test.hpp"

namespace fpvc {

struct SimConfig {
  std::size_t n = 200;
  double lambda_pois = 6.0;
  double alpha = 0.0;
  double gamma = 1.0;
  double beta = 0.0;
  double maf = 0.1;
  std::size_t n_reps = 1000;
  std::uint64_t seed = 1;
  double level = 0.05;

  void validate() const {
    if (n < 5) throw InputError("simulation needs at least 5 subjects");
    if (!(lambda_pois >= 0.0)) throw InputError("Poisson rate must be nonnegative");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InputError("gamma must lie in [0, 1]");
    if (!std::isfinite(beta)) throw InputError("beta must be finite");
    if (!(maf > 0.0 && maf < 1.0)) throw InputError("maf must lie in (0, 1)");
    if (!(level > 0.0 && level < 1.0)) throw InputError("level must lie in (0, 1)");
  }
};

inline constexpr double kSimT = 2.0 * std::numbers::pi;

struct SimTruth {
  Eigen::VectorXd b0;  ///< shared random intercepts
  Eigen::MatrixXd b1;  ///< n x 2, outcome-specific
};

struct SimCohort {
  std::vector<LongitudinalDataset> outcomes;
  Eigen::VectorXd z;
  std::vector<std::string> ids;
  SimTruth truth;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of replicate r under a master seed.
inline std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t r) {
  return splitmix64(splitmix64(master) ^ splitmix64(r + 0x632be59bd9b4e019ULL));
}

/// Population mean of outcome m (1-based) without the genetic term.
inline double sim_mean(double t, int m, double gamma) {
  const double sign = m == 1 ? 1.0 : -1.0;
  return std::sin(t) + sign * gamma * (std::sin(t / 3.0) + std::cos(t));
}

inline double sim_genetic_effect(double t, double alpha) {
  return alpha * (std::cos(t) + std::cos(t / 10.0) - std::sin(3.0 * t)) + (1.0 - alpha) * t / 7.0;
}

inline std::string sim_subject_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", i + 1);
  return buf;
}

inline SimCohort simulate_cohort(const SimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> half(0.0, 0.5);  // sd 0.5, variance 0.25
  std::uniform_real_distribution<double> unif(0.0, kSimT);
  std::poisson_distribution<int> pois(cfg.lambda_pois);
  std::binomial_distribution<int> geno(2, cfg.maf);

  SimCohort out;
  const auto n = cfg.n;
  out.z.resize(static_cast<Eigen::Index>(n));
  out.truth.b0.resize(static_cast<Eigen::Index>(n));
  out.truth.b1.resize(static_cast<Eigen::Index>(n), 2);
  std::vector<std::vector<Subject>> subjects(2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double z = geno(rng);
    const double b0 = half(rng);
    const double b1[2] = {half(rng), half(rng)};
    const int r = pois(rng) + 2;
    std::vector<double> times(static_cast<std::size_t>(r));
    for (auto& t : times) t = unif(rng);
    out.z(ii) = z;
    out.truth.b0(ii) = b0;
    out.truth.b1(ii, 0) = b1[0];
    out.truth.b1(ii, 1) = b1[1];
    out.ids.push_back(sim_subject_id(i));
    for (int m = 1; m <= 2; ++m) {
      Subject s{out.ids.back(), times, std::vector<double>(times.size())};
      for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k];
        s.values[k] = sim_mean(t, m, cfg.gamma) +
                      (1.0 - cfg.gamma) * (b0 + 0.5 * b1[m - 1] * std::cos(t / 4.0)) +
                      cfg.beta * z * sim_genetic_effect(t, cfg.alpha) + half(rng);
      }
      subjects[static_cast<std::size_t>(m - 1)].push_back(std::move(s));
    }
  }
  for (int m = 0; m < 2; ++m)
    out.outcomes.emplace_back("y" + std::to_string(m + 1), std::move(subjects[static_cast<std::size_t>(m)]),
                              Interval{0.0, kSimT});
  return out;
}

/// Scan cohort: the simulation design's outcomes with the causal marker placed
/// at column `causal` among `markers` independent binomial(2, maf) markers.
struct ScanSimConfig {
  SimConfig base;
  std::size_t markers = 100;
  std::size_t causal = 0;
};

inline CohortInput simulate_scan_cohort(const ScanSimConfig& cfg, std::uint64_t seed, std::string name = "cohort") {
  if (cfg.causal >= cfg.markers) throw InputError("causal marker index out of range");
  const auto cohort = simulate_cohort(cfg.base, seed);
  std::mt19937_64 rng(splitmix64(seed ^ 0x5ca9e11dULL));
  std::binomial_distribution<int> geno(2, cfg.base.maf);
  const auto n = static_cast<Eigen::Index>(cfg.base.n);
  Eigen::MatrixXd g(n, static_cast<Eigen::Index>(cfg.markers));
  std::vector<Marker> markers;
  for (std::size_t j = 0; j < cfg.markers; ++j) {
    char id[32];
    std::snprintf(id, sizeof(id), "m%05zu", j + 1);
    markers.push_back({id, "1", static_cast<long long>(1000 * (j + 1))});
    const auto jj = static_cast<Eigen::Index>(j);
    if (j == cfg.causal) {
      g.col(jj) = cohort.z;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) g(i, jj) = geno(rng);
    }
  }
  CohortInput out;
  out.name = std::move(name);
  out.outcomes = cohort.outcomes;
  out.genotypes = GenotypeMatrix(cohort.ids, std::move(markers), std::move(g));
  return out;
}

enum class SimMethod { fpvc, refit, linear, bspline, polynomial };

inline std::string to_string(SimMethod m) {
  switch (m) {
    case SimMethod::fpvc: return "fpvc";
    case SimMethod::refit: return "refit";
    case SimMethod::linear: return "linear";
    case SimMethod::bspline: return "bspline";
    case SimMethod::polynomial: return "poly";
  }
  return "?";
}

inline SimMethod parse_sim_method(const std::string& s) {
  if (s == "fpvc") return SimMethod::fpvc;
  if (s == "refit") return SimMethod::refit;
  if (s == "linear") return SimMethod::linear;
  if (s == "bspline") return SimMethod::bspline;
  if (s == "poly" || s == "polynomial") return SimMethod::polynomial;
  throw InputError("unknown method '" + s + "'");
}

struct SimOptions {
  FpcaConfig fpca;
  VcTestOptions test;
  std::size_t threads = 1;
};

/// p-value per method for one simulated cohort; NaN marks a failed method.
inline std::vector<double> run_replicate(const SimCohort& cohort, const std::vector<SimMethod>& methods,
                                         const SimOptions& opt = {}) {
  const auto n = static_cast<Eigen::Index>(cohort.z.size());
  const auto x = Eigen::MatrixXd::Ones(n, 1).eval();
  const auto cg = center_window(cohort.z, x, NuisanceKind::binomial);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  bool need_fpca = false;
  for (auto m : methods) need_fpca |= m == SimMethod::fpvc || m == SimMethod::refit;
  std::vector<FpcaModel> models;
  std::string fpca_error;
  if (need_fpca) {
    try {
      for (const auto& ds : cohort.outcomes) models.push_back(fit_fpca(ds, opt.fpca));
    } catch (const Error& e) {
      models.clear();
      fpca_error = e.what();
    }
  }

  std::vector<double> out;
  for (auto method : methods) {
    try {
      std::vector<Eigen::MatrixXd> xi;
      switch (method) {
        case SimMethod::fpvc:
          if (models.empty()) throw NumericalError(fpca_error);
          for (std::size_t m = 0; m < models.size(); ++m) xi.push_back(blup_scores(models[m], cohort.outcomes[m]).scores);
          break;
        case SimMethod::refit:
          if (models.empty()) throw NumericalError(fpca_error);
          for (std::size_t m = 0; m < models.size(); ++m)
            xi.push_back(refit_scores(models[m], cohort.outcomes[m]).first.scores);
          break;
        case SimMethod::linear:
          for (const auto& ds : cohort.outcomes) xi.push_back(linear_comparator_scores(standardize_outcome(ds).first).scores);
          break;
        case SimMethod::bspline:
        case SimMethod::polynomial: {
          const auto kind = method == SimMethod::bspline ? BasisKind::bspline : BasisKind::polynomial;
          for (const auto& ds : cohort.outcomes)
            xi.push_back(basis_comparator_scores(standardize_outcome(ds).first, kind).scores.scores);
          break;
        }
      }
      out.push_back(vc_test(xi, cg, opt.test).p_value);
    } catch (const Error&) {
      out.push_back(nan);
    }
  }
  return out;
}

struct MethodSummary {
  SimMethod method;
  std::size_t replicates = 0;  ///< successful replicates
  std::size_t failures = 0;
  std::size_t rejections = 0;
  double rate = 0.0;
  double se = 0.0;
};

struct ExperimentResult {
  SimConfig config;
  std::vector<SimMethod> methods;
  std::vector<std::vector<double>> pvalues;  ///< [method][replicate], NaN on failure
  std::vector<MethodSummary> summary;
};

inline double binomial_se(double rate, std::size_t reps) {
  return reps == 0 ? 0.0 : std::sqrt(rate * (1.0 - rate) / static_cast<double>(reps));
}

inline MethodSummary summarize(SimMethod method, const std::vector<double>& pvalues, double level) {
  MethodSummary s{method};
  for (double p : pvalues) {
    if (std::isnan(p)) {
      ++s.failures;
      continue;
    }
    ++s.replicates;
    if (p < level) ++s.rejections;
  }
  s.rate = s.replicates ? static_cast<double>(s.rejections) / static_cast<double>(s.replicates) : 0.0;
  s.se = binomial_se(s.rate, s.replicates);
  return s;
}

/// Simulates cfg.n_reps cohorts (replicate r seeded by replicate_seed(cfg.seed, r))
/// and tests each with every method on the same data.
inline ExperimentResult run_experiment(const SimConfig& cfg, const std::vector<SimMethod>& methods,
                                       const SimOptions& opt = {}) {
  cfg.validate();
  if (methods.empty()) throw InputError("no methods requested");
  ExperimentResult res{cfg, methods, std::vector<std::vector<double>>(methods.size(), std::vector<double>(cfg.n_reps)), {}};
  {
    log::ScopedSilence quiet;
    parallel_for(cfg.n_reps, opt.threads, [&](std::size_t r) {
      const auto cohort = simulate_cohort(cfg, replicate_seed(cfg.seed, r));
      const auto p = run_replicate(cohort, methods, opt);
      for (std::size_t m = 0; m < methods.size(); ++m) res.pvalues[m][r] = p[m];
    });
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    res.summary.push_back(summarize(methods[m], res.pvalues[m], cfg.level));
    if (res.summary.back().failures > 0)
      log::warn(to_string(methods[m]) + ": " + std::to_string(res.summary.back().failures) +
                " replicate(s) failed and were excluded");
  }
  return res;
}

}  // namespace fpvc
