#pragma once

// Tail probabilities of sum_l a_l chi2_1: numerical inversion of the
// characteristic function (Davies' algorithm), with a four-moment
// chi-square approximation (Liu, Tang and Zhang) as fallback.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/non_central_chi_squared.hpp>

#include "fpvc/error.hpp"

namespace fpvc {

enum class TailMethod { cf_inversion, moment_matching };

inline std::string to_string(TailMethod m) {
  return m == TailMethod::cf_inversion ? "cf-inversion" : "moment-matching";
}

struct TailResult {
  double p = 1.0;
  TailMethod method = TailMethod::cf_inversion;
  int fault = 0;  ///< integration fault code, 0 when clean
};

namespace detail {

/// Distribution function of sum_j lb_j chi2(n_j, nc_j) + sigma N(0,1) at c.
/// Fault codes: 1 accuracy not reached, 2 possible round-off, 3 invalid
/// parameters, 4 integration parameters not located.
class DaviesQf {
public:
  struct Result {
    double cdf = -1.0;
    int fault = 0;
    int terms = 0;
  };

  DaviesQf(std::vector<double> lb, std::vector<double> nc, std::vector<int> n, double sigma)
      : lb_(std::move(lb)), nc_(std::move(nc)), n_(std::move(n)), sigma_(sigma), r_(static_cast<int>(lb_.size())) {}

  Result evaluate(double c, int lim, double acc) {
    Result res;
    try {
      res = run(c, lim, acc);
    } catch (const TooManyTerms&) {
      res.cdf = -1.0;
      res.fault = 4;
    }
    return res;
  }

private:
  struct TooManyTerms {};

  static constexpr double kLog28 = 0.0866;  // log(2) / 8
  static constexpr double kPi = std::numbers::pi;

  std::vector<double> lb_, nc_;
  std::vector<int> n_;
  double sigma_;
  int r_;

  std::vector<int> th_;
  double sigsq_ = 0, lmax_ = 0, lmin_ = 0, mean_ = 0, c_ = 0;
  double intl_ = 0, ersm_ = 0;
  int count_ = 0, lim_ = 0;
  bool ndtsrt_ = true, fail_ = false;

  static double exp1(double x) { return x < -50.0 ? 0.0 : std::exp(x); }
  static double sq(double x) { return x * x; }

  void counter() {
    if (++count_ > lim_) throw TooManyTerms{};
  }

  // log(1 + x) if first, else log(1 + x) - x
  static double log1(double x, bool first) {
    if (std::abs(x) > 0.1) return first ? std::log1p(x) : std::log1p(x) - x;
    double y = x / (2.0 + x);
    double term = 2.0 * y * y * y;
    double k = 3.0;
    double s = (first ? 2.0 : -x) * y;
    y = y * y;
    for (double s1 = s + term / k; s1 != s; s1 = s + term / k) {
      k += 2.0;
      term *= y;
      s = s1;
    }
    return s;
  }

  // indices of lb_ sorted by decreasing |lb|
  void order() {
    th_.assign(static_cast<std::size_t>(r_), 0);
    for (int j = 0; j < r_; ++j) {
      const double lj = std::abs(lb_[j]);
      int k = j - 1;
      for (; k >= 0; --k) {
        if (lj > std::abs(lb_[th_[k]])) th_[k + 1] = th_[k];
        else break;
      }
      th_[k + 1] = j;
    }
    ndtsrt_ = false;
  }

  // bound on tail probability using the mgf; cutoff returned in cx
  double errbd(double u, double& cx) {
    counter();
    double xconst = u * sigsq_;
    double sum1 = u * xconst;
    u *= 2.0;
    for (int j = r_ - 1; j >= 0; --j) {
      const double nj = n_[j], lj = lb_[j], ncj = nc_[j];
      const double x = u * lj, y = 1.0 - x;
      xconst += lj * (ncj / y + nj) / y;
      sum1 += ncj * sq(x / y) + nj * (sq(x) / y + log1(-x, false));
    }
    cx = xconst;
    return exp1(-0.5 * sum1);
  }

  // cutoff with P(qf > c) < accx if upn > 0, P(qf < c) < accx otherwise
  double ctff(double accx, double& upn) {
    double u2 = upn, u1 = 0.0, c1 = mean_, c2 = 0.0, xconst = 0.0;
    const double rb = 2.0 * (u2 > 0.0 ? lmax_ : lmin_);
    for (double u = u2 / (1.0 + u2 * rb); errbd(u, c2) > accx; u = u2 / (1.0 + u2 * rb)) {
      u1 = u2;
      c1 = c2;
      u2 *= 2.0;
    }
    for (double u = (c1 - mean_) / (c2 - mean_); u < 0.9; u = (c1 - mean_) / (c2 - mean_)) {
      u = (u1 + u2) / 2.0;
      if (errbd(u / (1.0 + u * rb), xconst) > accx) {
        u1 = u;
        c1 = xconst;
      } else {
        u2 = u;
        c2 = xconst;
      }
    }
    upn = u2;
    return c2;
  }

  // bound on integration error from truncating at u
  double truncation(double u, double tausq) {
    counter();
    double sum1 = 0.0, prod2 = 0.0, prod3 = 0.0;
    int s = 0;
    const double sum2 = (sigsq_ + tausq) * sq(u);
    double prod1 = 2.0 * sum2;
    u *= 2.0;
    for (int j = 0; j < r_; ++j) {
      const double lj = lb_[j], ncj = nc_[j];
      const int nj = n_[j];
      const double x = sq(u * lj);
      sum1 += ncj * x / (1.0 + x);
      if (x > 1.0) {
        prod2 += nj * std::log(x);
        prod3 += nj * log1(x, true);
        s += nj;
      } else {
        prod1 += nj * log1(x, true);
      }
    }
    sum1 *= 0.5;
    prod2 += prod1;
    prod3 += prod1;
    double x = exp1(-sum1 - 0.25 * prod2) / kPi;
    const double y = exp1(-sum1 - 0.25 * prod3) / kPi;
    double err1 = s == 0 ? 1.0 : x * 2.0 / s;
    double err2 = prod3 > 1.0 ? 2.5 * y : 1.0;
    if (err2 < err1) err1 = err2;
    x = 0.5 * sum2;
    err2 = x <= y ? 1.0 : y / x;
    return err1 < err2 ? err1 : err2;
  }

  // u with truncation(u) < accx and truncation(u / 1.2) > accx
  void findu(double& utx, double accx) {
    static constexpr std::array<double, 4> divis{2.0, 1.4, 1.2, 1.1};
    double ut = utx;
    double u = ut / 4.0;
    if (truncation(u, 0.0) > accx) {
      for (u = ut; truncation(u, 0.0) > accx; u = ut) ut *= 4.0;
    } else {
      ut = u;
      for (u = u / 4.0; truncation(u, 0.0) <= accx; u /= 4.0) ut = u;
    }
    for (double d : divis) {
      u = ut / d;
      if (truncation(u, 0.0) <= accx) ut = u;
    }
    utx = ut;
  }

  // nterm + 1 terms at step interv; off the main pass the integrand is
  // multiplied by 1 - exp(-tausq u^2 / 2)
  void integrate(int nterm, double interv, double tausq, bool mainx) {
    const double inpi = interv / kPi;
    for (int k = nterm; k >= 0; --k) {
      const double u = (k + 0.5) * interv;
      double sum1 = -2.0 * u * c_;
      double sum2 = std::abs(sum1);
      double sum3 = -0.5 * sigsq_ * sq(u);
      for (int j = r_ - 1; j >= 0; --j) {
        const double nj = n_[j];
        const double x = 2.0 * lb_[j] * u;
        double y = sq(x);
        sum3 -= 0.25 * nj * log1(y, true);
        y = nc_[j] * x / (1.0 + y);
        const double z = nj * std::atan(x) + y;
        sum1 += z;
        sum2 += std::abs(z);
        sum3 -= 0.5 * x * y;
      }
      double x = inpi * exp1(sum3) / u;
      if (!mainx) x *= 1.0 - exp1(-0.5 * tausq * sq(u));
      intl_ += std::sin(0.5 * sum1) * x;
      ersm_ += 0.5 * sum2 * x;
    }
  }

  // coefficient of tausq in the error of the convergence factor at x
  double cfe(double x) {
    counter();
    if (ndtsrt_) order();
    double axl = std::abs(x);
    const double sxl = x > 0.0 ? 1.0 : -1.0;
    double sum1 = 0.0;
    for (int j = r_ - 1; j >= 0; --j) {
      const int t = th_[j];
      if (lb_[t] * sxl > 0.0) {
        const double lj = std::abs(lb_[t]);
        const double axl1 = axl - lj * (n_[t] + nc_[t]);
        const double axl2 = lj / kLog28;
        if (axl1 > axl2) {
          axl = axl1;
        } else {
          if (axl > axl2) axl = axl2;
          sum1 = (axl - axl1) / lj;
          for (int k = j - 1; k >= 0; --k) sum1 += n_[th_[k]] + nc_[th_[k]];
          break;
        }
      }
    }
    if (sum1 > 100.0) {
      fail_ = true;
      return 1.0;
    }
    return std::pow(2.0, sum1 / 4.0) / (kPi * sq(axl));
  }

  Result run(double c, int lim, double acc) {
    static constexpr std::array<int, 4> rats{1, 2, 4, 8};
    Result res;
    lim_ = lim;
    c_ = c;
    count_ = 0;
    intl_ = 0.0;
    ersm_ = 0.0;
    ndtsrt_ = true;
    fail_ = false;
    double acc1 = acc;
    double xlim = lim;

    sigsq_ = sq(sigma_);
    double sd = sigsq_;
    lmax_ = 0.0;
    lmin_ = 0.0;
    mean_ = 0.0;
    for (int j = 0; j < r_; ++j) {
      const int nj = n_[j];
      const double lj = lb_[j], ncj = nc_[j];
      if (nj < 0 || ncj < 0.0) {
        res.fault = 3;
        return res;
      }
      sd += sq(lj) * (2 * nj + 4.0 * ncj);
      mean_ += lj * (nj + ncj);
      if (lmax_ < lj) lmax_ = lj;
      else if (lmin_ > lj) lmin_ = lj;
    }
    if (sd == 0.0) {
      res.cdf = c > 0.0 ? 1.0 : 0.0;
      return res;
    }
    if (lmin_ == 0.0 && lmax_ == 0.0 && sigma_ == 0.0) {
      res.fault = 3;
      return res;
    }
    sd = std::sqrt(sd);
    const double almx = lmax_ < -lmin_ ? -lmin_ : lmax_;

    double utx = 16.0 / sd, up = 4.5 / sd, un = -up;
    findu(utx, 0.5 * acc1);
    if (c != 0.0 && almx > 0.07 * sd) {
      const double tausq = 0.25 * acc1 / cfe(c);
      if (fail_) {
        fail_ = false;
      } else if (truncation(utx, tausq) < 0.2 * acc1) {
        sigsq_ += tausq;
        findu(utx, 0.25 * acc1);
      }
    }
    acc1 *= 0.5;

    double intv = 0.0, xnt = 0.0;
    while (true) {
      const double d1 = ctff(acc1, up) - c;
      if (d1 < 0.0) {
        res.cdf = 1.0;
        return res;
      }
      const double d2 = c - ctff(acc1, un);
      if (d2 < 0.0) {
        res.cdf = 0.0;
        return res;
      }
      intv = 2.0 * kPi / std::max(d1, d2);
      xnt = utx / intv;
      const double xntm = 3.0 / std::sqrt(acc1);
      if (!(xnt > xntm * 1.5)) break;
      if (xntm > xlim) {
        res.fault = 1;
        return res;
      }
      const int ntm = static_cast<int>(std::floor(xntm + 0.5));
      const double intv1 = utx / ntm;
      const double x = 2.0 * kPi / intv1;
      if (x <= std::abs(c)) break;
      const double tausq = 0.33 * acc1 / (1.1 * (cfe(c - x) + cfe(c + x)));
      if (fail_) break;
      acc1 *= 0.67;
      integrate(ntm, intv1, tausq, false);
      res.terms += ntm + 1;
      xlim -= xntm;
      sigsq_ += tausq;
      findu(utx, 0.25 * acc1);
      acc1 *= 0.75;
    }

    if (xnt > xlim) {
      res.fault = 1;
      return res;
    }
    const int nt = static_cast<int>(std::floor(xnt + 0.5));
    integrate(nt, intv, 0.0, true);
    res.terms += nt + 1;
    res.cdf = 0.5 - intl_;

    const double upr = ersm_;
    const double x = upr + acc1 / 10.0;
    for (int rat : rats)
      if (rat * x == rat * upr) res.fault = 2;
    return res;
  }
};

}  // namespace detail

/// Four-moment approximation of P(sum a_l chi2_1 > q) by a scaled, shifted
/// (noncentral) chi-square.
inline double mixture_survival_moments(std::span<const double> weights, double q) {
  double c1 = 0, c2 = 0, c3 = 0, c4 = 0;
  for (double a : weights) {
    c1 += a;
    c2 += a * a;
    c3 += a * a * a;
    c4 += a * a * a * a;
  }
  if (c2 <= 0.0) throw InputError("mixture weights are all zero");
  const double s1 = c3 / std::pow(c2, 1.5);
  const double s2 = c4 / (c2 * c2);
  double a = 0, delta = 0, l = 0;
  if (s1 * s1 > s2) {
    a = 1.0 / (s1 - std::sqrt(s1 * s1 - s2));
    delta = s1 * a * a * a - a * a;
    l = a * a - 2.0 * delta;
  } else {
    a = 1.0 / s1;
    delta = 0.0;
    l = 1.0 / (s1 * s1);
  }
  const double t = (q - c1) / std::sqrt(2.0 * c2);
  const double x = t * std::sqrt(2.0) * a + l + delta;
  if (x <= 0.0) return 1.0;
  if (delta > 0.0) {
    const boost::math::non_central_chi_squared dist(l, delta);
    return boost::math::cdf(boost::math::complement(dist, x));
  }
  const boost::math::chi_squared dist(l);
  return boost::math::cdf(boost::math::complement(dist, x));
}

struct TailOptions {
  double accuracy = 1e-9;
  int max_terms = 1'000'000;
};

/// P(sum_l a_l chi2_1 > q). Zero weights are ignored; at least one must be positive.
inline TailResult mixture_survival(std::span<const double> weights, double q, const TailOptions& opt = {}) {
  std::vector<double> lb;
  for (double a : weights) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw InputError("mixture weights must be finite and nonnegative");
    if (a > 0.0) lb.push_back(a);
  }
  if (lb.empty()) throw InputError("mixture weights are all zero");
  if (!(q >= 0.0)) throw InputError("mixture quantile must be nonnegative");
  if (q == 0.0) return {1.0, TailMethod::cf_inversion, 0};

  const auto r = lb.size();
  detail::DaviesQf qf(lb, std::vector<double>(r, 0.0), std::vector<int>(r, 1), 0.0);
  const auto res = qf.evaluate(q, opt.max_terms, opt.accuracy);
  const double p = 1.0 - res.cdf;
  const bool bad_fault = res.fault == 1 || res.fault == 3 || res.fault == 4;
  if (bad_fault || !(res.cdf >= 0.0 && res.cdf <= 1.0 + opt.accuracy) || !std::isfinite(p) ||
      p < -opt.accuracy) {
    return {std::clamp(mixture_survival_moments(lb, q), 0.0, 1.0), TailMethod::moment_matching, res.fault};
  }
  return {std::clamp(p, 0.0, 1.0), TailMethod::cf_inversion, res.fault};
}

}  // namespace fpvc
