#pragma once

// Local linear smoothing of the mean curve, the covariance surface and the
// measurement-error variance, with GCV bandwidth selection.
//
// All pooled inputs are put in a canonical sorted order before any
// accumulation, so results do not depend on subject order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/data.hpp"
#include "fpvc/error.hpp"

namespace fpvc {

/// M equally spaced points spanning a closed interval.
class EvalGrid {
public:
  static constexpr std::size_t kMinPoints = 21;

  EvalGrid() = default;

  EvalGrid(Interval domain, std::size_t m) : domain_(domain) {
    if (m < kMinPoints) throw InputError("evaluation grid needs at least 21 points");
    if (!(domain.hi > domain.lo)) throw InputError("evaluation grid needs a non-degenerate interval");
    spacing_ = domain.length() / static_cast<double>(m - 1);
    points_.resize(m);
    for (std::size_t k = 0; k < m; ++k) points_[k] = domain.lo + spacing_ * static_cast<double>(k);
    points_.back() = domain.hi;
  }

  std::size_t size() const noexcept { return points_.size(); }
  double spacing() const noexcept { return spacing_; }
  Interval domain() const noexcept { return domain_; }
  const std::vector<double>& points() const noexcept { return points_; }
  double operator[](std::size_t k) const { return points_[k]; }

  /// Cell index and fractional offset for linear interpolation; t is clamped to the domain.
  std::pair<std::size_t, double> locate(double t) const noexcept {
    const double x = (std::clamp(t, domain_.lo, domain_.hi) - domain_.lo) / spacing_;
    auto k = static_cast<std::size_t>(x);
    if (k >= points_.size() - 1) k = points_.size() - 2;
    return {k, x - static_cast<double>(k)};
  }

  double interpolate(std::span<const double> values, double t) const noexcept {
    const auto [k, f] = locate(t);
    return values[k] + f * (values[k + 1] - values[k]);
  }

  double interpolate(const Eigen::MatrixXd& values, double s, double t) const noexcept {
    const auto [i, fs] = locate(s);
    const auto [j, ft] = locate(t);
    const auto a = static_cast<Eigen::Index>(i);
    const auto b = static_cast<Eigen::Index>(j);
    return (1 - fs) * (1 - ft) * values(a, b) + fs * (1 - ft) * values(a + 1, b) +
           (1 - fs) * ft * values(a, b + 1) + fs * ft * values(a + 1, b + 1);
  }

  friend bool operator==(const EvalGrid&, const EvalGrid&) = default;

private:
  Interval domain_;
  double spacing_ = 0.0;
  std::vector<double> points_;
};

inline double epanechnikov(double u) noexcept {
  return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
}

/// Pooled scatter (t, y) with a subject tag, sorted by (t, y).
struct ScatterPoints {
  std::vector<double> t;
  std::vector<double> y;
  std::vector<std::uint32_t> subject;

  std::size_t size() const noexcept { return t.size(); }

  void canonicalize() {
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (t[a] != t[b]) return t[a] < t[b];
      return y[a] < y[b];
    });
    ScatterPoints out;
    out.t.reserve(order.size());
    out.y.reserve(order.size());
    out.subject.reserve(order.size());
    for (auto k : order) {
      out.t.push_back(t[k]);
      out.y.push_back(y[k]);
      out.subject.push_back(subject[k]);
    }
    *this = std::move(out);
  }
};

/// Raw covariance products C at (s, t) with a subject tag, sorted by (s, t, C).
struct SurfacePoints {
  std::vector<double> s;
  std::vector<double> t;
  std::vector<double> c;
  std::vector<std::uint32_t> subject;

  std::size_t size() const noexcept { return s.size(); }

  void canonicalize() {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (s[a] != s[b]) return s[a] < s[b];
      if (t[a] != t[b]) return t[a] < t[b];
      return c[a] < c[b];
    });
    SurfacePoints out;
    for (auto k : order) {
      out.s.push_back(s[k]);
      out.t.push_back(t[k]);
      out.c.push_back(c[k]);
      out.subject.push_back(subject[k]);
    }
    *this = std::move(out);
  }
};

inline ScatterPoints pooled_observations(const LongitudinalDataset& ds) {
  ScatterPoints p;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.subject(i);
    for (std::size_t r = 0; r < s.size(); ++r) {
      p.t.push_back(s.times[r]);
      p.y.push_back(s.values[r]);
      p.subject.push_back(static_cast<std::uint32_t>(i));
    }
  }
  p.canonicalize();
  return p;
}

namespace detail {

/// Number of doublings tried when a local design is degenerate.
inline constexpr int kMaxWidenings = 3;

struct LocalLine {
  double intercept = 0.0;
  double self_hat = 0.0;  ///< weight an observation located exactly at t0 receives
};

/// Weighted line fit at t0 over sorted points; nullopt when fewer than two
/// distinct times carry weight. `skip_subject` excludes one subject.
inline std::optional<LocalLine> local_line(const ScatterPoints& p, double t0, double h,
                                           std::int64_t skip_subject = -1) {
  const auto lo = std::upper_bound(p.t.begin(), p.t.end(), t0 - h) - p.t.begin();
  const auto hi = std::lower_bound(p.t.begin(), p.t.end(), t0 + h) - p.t.begin();
  double s0 = 0, s1 = 0, s2 = 0, r0 = 0, r1 = 0;
  double first_t = std::numeric_limits<double>::quiet_NaN();
  bool distinct = false;
  for (auto k = lo; k < hi; ++k) {
    if (skip_subject >= 0 && p.subject[static_cast<std::size_t>(k)] == skip_subject) continue;
    const double d = p.t[static_cast<std::size_t>(k)] - t0;
    const double w = epanechnikov(d / h);
    if (w <= 0.0) continue;
    if (std::isnan(first_t)) first_t = d;
    else if (d != first_t) distinct = true;
    const double y = p.y[static_cast<std::size_t>(k)];
    s0 += w;
    s1 += w * d;
    s2 += w * d * d;
    r0 += w * y;
    r1 += w * d * y;
  }
  if (!distinct) return std::nullopt;
  const double det = s0 * s2 - s1 * s1;
  if (!(det > 0.0)) return std::nullopt;
  return LocalLine{(s2 * r0 - s1 * r1) / det, 0.75 * s2 / det};
}

inline std::optional<LocalLine> local_line_widening(const ScatterPoints& p, double t0, double h,
                                                    std::int64_t skip_subject = -1) {
  for (int k = 0; k <= kMaxWidenings; ++k, h *= 2.0)
    if (auto fit = local_line(p, t0, h, skip_subject)) return fit;
  return std::nullopt;
}

/// Uniform bucket index over surface points for windowed queries.
class SurfaceIndex {
public:
  SurfaceIndex(const SurfacePoints& p, double cell) {
    if (p.size() == 0) return;
    lo_s_ = *std::min_element(p.s.begin(), p.s.end());
    lo_t_ = *std::min_element(p.t.begin(), p.t.end());
    const double hi_s = *std::max_element(p.s.begin(), p.s.end());
    const double hi_t = *std::max_element(p.t.begin(), p.t.end());
    cell_ = std::max(cell, 1e-12);
    ns_ = static_cast<std::size_t>(std::min(4096.0, std::floor((hi_s - lo_s_) / cell_))) + 1;
    nt_ = static_cast<std::size_t>(std::min(4096.0, std::floor((hi_t - lo_t_) / cell_))) + 1;
    cell_s_ = std::max((hi_s - lo_s_) / static_cast<double>(ns_), 1e-12);
    cell_t_ = std::max((hi_t - lo_t_) / static_cast<double>(nt_), 1e-12);
    start_.assign(ns_ * nt_ + 1, 0);
    std::vector<std::size_t> bucket(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      bucket[k] = cell_of(p.s[k], p.t[k]);
      ++start_[bucket[k] + 1];
    }
    for (std::size_t b = 0; b < ns_ * nt_; ++b) start_[b + 1] += start_[b];
    items_.resize(p.size());
    auto fill = start_;
    for (std::size_t k = 0; k < p.size(); ++k) items_[fill[bucket[k]]++] = static_cast<std::uint32_t>(k);
  }

  template <typename Fn>
  void for_each_near(double s0, double t0, double h, Fn&& fn) const {
    if (items_.empty()) return;
    const auto a0 = index_clamp((s0 - h - lo_s_) / cell_s_, ns_);
    const auto a1 = index_clamp((s0 + h - lo_s_) / cell_s_, ns_);
    const auto b0 = index_clamp((t0 - h - lo_t_) / cell_t_, nt_);
    const auto b1 = index_clamp((t0 + h - lo_t_) / cell_t_, nt_);
    for (auto a = a0; a <= a1; ++a)
      for (auto b = b0; b <= b1; ++b) {
        const auto cell = a * nt_ + b;
        for (auto k = start_[cell]; k < start_[cell + 1]; ++k) fn(items_[k]);
      }
  }

private:
  static std::size_t index_clamp(double x, std::size_t n) {
    if (!(x > 0.0)) return 0;
    const auto k = static_cast<std::size_t>(std::min(x, static_cast<double>(n - 1)));
    return std::min(k, n - 1);
  }
  std::size_t cell_of(double s, double t) const {
    return index_clamp((s - lo_s_) / cell_s_, ns_) * nt_ + index_clamp((t - lo_t_) / cell_t_, nt_);
  }

  double lo_s_ = 0, lo_t_ = 0, cell_ = 1, cell_s_ = 1, cell_t_ = 1;
  std::size_t ns_ = 1, nt_ = 1;
  std::vector<std::size_t> start_;
  std::vector<std::uint32_t> items_;
};

struct LocalPlane {
  double intercept = 0.0;
  double self_hat = 0.0;
};

/// Weighted plane fit at (s0, t0) with a product Epanechnikov kernel.
inline std::optional<LocalPlane> local_plane(const SurfacePoints& p, const SurfaceIndex& index, double s0, double t0,
                                             double h, std::int64_t skip_subject = -1) {
  // Moments in offsets scaled by h keep the determinant test scale-free.
  double m00 = 0, m01 = 0, m02 = 0, m11 = 0, m12 = 0, m22 = 0, r0 = 0, r1 = 0, r2 = 0;
  index.for_each_near(s0, t0, h, [&](std::uint32_t k) {
    if (skip_subject >= 0 && p.subject[k] == skip_subject) return;
    const double u = (p.s[k] - s0) / h;
    const double v = (p.t[k] - t0) / h;
    const double w = epanechnikov(u) * epanechnikov(v);
    if (w <= 0.0) return;
    const double c = p.c[k];
    m00 += w;
    m01 += w * u;
    m02 += w * v;
    m11 += w * u * u;
    m12 += w * u * v;
    m22 += w * v * v;
    r0 += w * c;
    r1 += w * u * c;
    r2 += w * v * c;
  });
  if (!(m00 > 0.0)) return std::nullopt;
  const double c00 = m11 * m22 - m12 * m12;
  const double c01 = m02 * m12 - m01 * m22;
  const double c02 = m01 * m12 - m02 * m11;
  const double det = m00 * c00 + m01 * c01 + m02 * c02;
  if (!(det > 1e-10 * m00 * m00 * m00)) return std::nullopt;
  return LocalPlane{(c00 * r0 + c01 * r1 + c02 * r2) / det, 0.5625 * c00 / det};
}

inline std::optional<LocalPlane> local_plane_widening(const SurfacePoints& p, const SurfaceIndex& index, double s0,
                                                      double t0, double h, std::int64_t skip_subject = -1) {
  for (int k = 0; k <= kMaxWidenings; ++k, h *= 2.0)
    if (auto fit = local_plane(p, index, s0, t0, h, skip_subject)) return fit;
  return std::nullopt;
}

/// (1 - x)^n style shift: out[j] = sum_k C(j,k) (-d)^(j-k) in[k], for j < n.
/// Converts power sums about an anchor into power sums about anchor + d.
template <std::size_t N>
inline std::array<double, N> shift_moments(const std::array<double, N>& in, double d) {
  std::array<double, N> out{};
  for (std::size_t j = 0; j < N; ++j) {
    double binom = 1.0, acc = 0.0, pw = 1.0;
    // walk k from j down to 0: C(j,k) (-d)^(j-k)
    for (std::size_t i = 0; i <= j; ++i) {
      const std::size_t k = j - i;
      acc += binom * pw * in[k];
      binom = binom * static_cast<double>(k) / static_cast<double>(i + 1);
      pw *= -d;
    }
    out[j] = acc;
  }
  return out;
}

/// Running sums of tau^k and tau^k y over a sliding window, tau = (t - anchor) / h.
struct LineSums {
  std::array<double, 5> p{};   // tau^0..4
  std::array<double, 4> py{};  // tau^0..3 * y
  std::size_t count = 0;
  std::size_t removed = 0;

  void add(double t, double y, double anchor, double h, double sign) {
    const double x = (t - anchor) / h;
    double pw = 1.0;
    for (std::size_t k = 0; k < 5; ++k) {
      p[k] += sign * pw;
      if (k < 4) py[k] += sign * pw * y;
      pw *= x;
    }
    if (sign > 0) ++count;
    else --count, ++removed;
  }

  /// Local line at anchor + d*h; nullopt when the weighted design is degenerate.
  std::optional<LocalLine> fit(double d) const {
    const auto v = shift_moments(p, d);
    const auto vy = shift_moments(py, d);
    const double s0 = 0.75 * (v[0] - v[2]);
    const double s1 = 0.75 * (v[1] - v[3]);
    const double s2 = 0.75 * (v[2] - v[4]);
    const double r0 = 0.75 * (vy[0] - vy[2]);
    const double r1 = 0.75 * (vy[1] - vy[3]);
    const double det = s0 * s2 - s1 * s1;
    if (!(s0 > 0.0) || !(det > 1e-12 * s0 * s0)) return std::nullopt;
    return LocalLine{(s2 * r0 - s1 * r1) / det, 0.75 * s2 / det};
  }
};

/// Local line fits at every point of a sorted scatter (the GCV fitted values).
inline std::vector<LocalLine> local_line_at_points(const ScatterPoints& p, double h) {
  const std::size_t n = p.size();
  std::vector<LocalLine> out(n);
  LineSums sums;
  double anchor = 0.0;
  bool anchored = false;
  std::size_t lo = 0, hi = 0;  // window [lo, hi): |t - t0| < h
  for (std::size_t k = 0; k < n; ++k) {
    const double t0 = p.t[k];
    if (!anchored || std::abs(t0 - anchor) > h || sums.removed > sums.count) {
      anchor = t0;
      anchored = true;
      sums = {};
      lo = static_cast<std::size_t>(std::upper_bound(p.t.begin(), p.t.end(), t0 - h) - p.t.begin());
      hi = static_cast<std::size_t>(std::lower_bound(p.t.begin(), p.t.end(), t0 + h) - p.t.begin());
      for (std::size_t j = lo; j < hi; ++j) sums.add(p.t[j], p.y[j], anchor, h, 1.0);
    } else {
      while (hi < n && p.t[hi] < t0 + h) {
        sums.add(p.t[hi], p.y[hi], anchor, h, 1.0);
        ++hi;
      }
      while (lo < hi && p.t[lo] <= t0 - h) {
        sums.add(p.t[lo], p.y[lo], anchor, h, -1.0);
        ++lo;
      }
    }
    std::optional<LocalLine> fit;
    if (hi > lo + 1 && p.t[lo] != p.t[hi - 1]) fit = sums.fit((t0 - anchor) / h);
    if (!fit) fit = local_line_widening(p, t0, h);
    if (!fit) throw NumericalError("local linear fit degenerate near t = " + std::to_string(t0));
    out[k] = *fit;
  }
  return out;
}

/// Pair of the off-diagonal set inside the s-band of one grid row, with its
/// s-kernel weights precomputed.
struct BandPoint {
  double t, w0, w1, w2, c;
};

/// Running sums for the row sweep of the local plane: tau powers weighted by
/// K(u), K(u) u, K(u) u^2 and by K(u) c, K(u) u c.
struct PlaneSums {
  std::array<double, 5> a0{};
  std::array<double, 4> a1{};
  std::array<double, 3> a2{};
  std::array<double, 4> c0{};
  std::array<double, 3> c1{};
  std::size_t count = 0;
  std::size_t removed = 0;

  void add(const BandPoint& q, double anchor, double h, double sign) {
    const double x = (q.t - anchor) / h;
    const double x2 = x * x;
    const double w0 = sign * q.w0, w1 = sign * q.w1, w2 = sign * q.w2;
    const double v0 = w0 * q.c, v1 = w1 * q.c;
    a0[0] += w0;
    a0[1] += w0 * x;
    a0[2] += w0 * x2;
    a0[3] += w0 * x2 * x;
    a0[4] += w0 * x2 * x2;
    a1[0] += w1;
    a1[1] += w1 * x;
    a1[2] += w1 * x2;
    a1[3] += w1 * x2 * x;
    a2[0] += w2;
    a2[1] += w2 * x;
    a2[2] += w2 * x2;
    c0[0] += v0;
    c0[1] += v0 * x;
    c0[2] += v0 * x2;
    c0[3] += v0 * x2 * x;
    c1[0] += v1;
    c1[1] += v1 * x;
    c1[2] += v1 * x2;
    if (sign > 0) ++count;
    else --count, ++removed;
  }

  std::optional<LocalPlane> fit(double d) const {
    const auto A0 = shift_moments(a0, d);
    const auto A1 = shift_moments(a1, d);
    const auto A2 = shift_moments(a2, d);
    const auto C0 = shift_moments(c0, d);
    const auto C1 = shift_moments(c1, d);
    const double m00 = 0.75 * (A0[0] - A0[2]);
    const double m02 = 0.75 * (A0[1] - A0[3]);
    const double m22 = 0.75 * (A0[2] - A0[4]);
    const double m01 = 0.75 * (A1[0] - A1[2]);
    const double m12 = 0.75 * (A1[1] - A1[3]);
    const double m11 = 0.75 * (A2[0] - A2[2]);
    const double r0 = 0.75 * (C0[0] - C0[2]);
    const double r2 = 0.75 * (C0[1] - C0[3]);
    const double r1 = 0.75 * (C1[0] - C1[2]);
    if (!(m00 > 0.0)) return std::nullopt;
    const double k00 = m11 * m22 - m12 * m12;
    const double k01 = m02 * m12 - m01 * m22;
    const double k02 = m01 * m12 - m02 * m11;
    const double det = m00 * k00 + m01 * k01 + m02 * k02;
    if (!(det > 1e-10 * m00 * m00 * m00)) return std::nullopt;
    return LocalPlane{(k00 * r0 + k01 * r1 + k02 * r2) / det, 0.5625 * k00 / det};
  }
};

struct SurfaceFit {
  Eigen::MatrixXd values;    ///< local-plane intercepts
  Eigen::MatrixXd self_hat;  ///< weight a pair located at the grid point would receive
};

/// Copy of the pairs ordered by t; ties keep the canonical order.
struct PairsByT {
  std::vector<double> s, t, c;
};

inline PairsByT order_by_t(const SurfacePoints& pairs) {
  std::vector<std::uint32_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return pairs.t[a] < pairs.t[b]; });
  PairsByT out;
  out.s.reserve(idx.size());
  out.t.reserve(idx.size());
  out.c.reserve(idx.size());
  for (auto k : idx) {
    out.s.push_back(pairs.s[k]);
    out.t.push_back(pairs.t[k]);
    out.c.push_back(pairs.c[k]);
  }
  return out;
}

/// Local plane fits on grid x grid by sweeping each row along t. With
/// `mirror`, only b >= a is fitted and copied across the diagonal, which is
/// exact up to rounding when the pair set is closed under swapping s and t.
inline SurfaceFit local_plane_grid(const SurfacePoints& pairs, double h, const EvalGrid& grid,
                                   const PairsByT& by_t, bool mirror) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  SurfaceFit out{Eigen::MatrixXd(m, m), Eigen::MatrixXd(m, m)};
  std::optional<SurfaceIndex> index;  // built on first degenerate grid point
  std::vector<BandPoint> band;
  band.reserve(pairs.size());
  for (Eigen::Index a = 0; a < m; ++a) {
    const double s0 = grid[static_cast<std::size_t>(a)];
    band.clear();
    for (std::size_t k = 0; k < by_t.s.size(); ++k) {
      const double u = (by_t.s[k] - s0) / h;
      if (std::abs(u) >= 1.0) continue;
      const double w0 = 0.75 * (1.0 - u * u);
      band.push_back({by_t.t[k], w0, w0 * u, w0 * u * u, by_t.c[k]});
    }
    const std::size_t nb = band.size();
    PlaneSums sums;
    double anchor = 0.0;
    bool anchored = false;
    std::size_t lo = 0, hi = 0;
    for (Eigen::Index b = mirror ? a : 0; b < m; ++b) {
      const double t0 = grid[static_cast<std::size_t>(b)];
      if (!anchored || std::abs(t0 - anchor) > h || sums.removed > sums.count) {
        anchor = t0;
        anchored = true;
        sums = {};
        while (lo < nb && band[lo].t <= t0 - h) ++lo;
        hi = std::max(hi, lo);
        while (hi < nb && band[hi].t < t0 + h) ++hi;
        for (std::size_t j = lo; j < hi; ++j) sums.add(band[j], anchor, h, 1.0);
      } else {
        while (hi < nb && band[hi].t < t0 + h) {
          sums.add(band[hi], anchor, h, 1.0);
          ++hi;
        }
        while (lo < hi && band[lo].t <= t0 - h) {
          sums.add(band[lo], anchor, h, -1.0);
          ++lo;
        }
      }
      std::optional<LocalPlane> fit;
      if (sums.count >= 3) fit = sums.fit((t0 - anchor) / h);
      if (!fit) {
        if (!index) index.emplace(pairs, h);
        fit = local_plane_widening(pairs, *index, s0, t0, h);
      }
      if (!fit)
        throw NumericalError("covariance surface fit degenerate near (" + std::to_string(s0) + ", " +
                             std::to_string(t0) + ")");
      out.values(a, b) = fit->intercept;
      out.self_hat(a, b) = fit->self_hat;
      if (mirror) {
        out.values(b, a) = fit->intercept;
        out.self_hat(b, a) = fit->self_hat;
      }
    }
  }
  return out;
}

}  // namespace detail

struct MeanCurve {
  EvalGrid grid;
  std::vector<double> values;
  double bandwidth = 0.0;

  double operator()(double t) const noexcept { return grid.interpolate(values, t); }
};

struct CovSurface {
  EvalGrid grid;
  Eigen::MatrixXd values;
  double bandwidth = 0.0;
  double sigma2 = 0.0;

  double operator()(double s, double t) const noexcept { return grid.interpolate(values, s, t); }
};

/// Local linear estimate of a curve on the grid from pooled scatter.
inline std::vector<double> local_linear_curve(const ScatterPoints& p, double h, const EvalGrid& grid) {
  if (!(h > 0.0)) throw InputError("bandwidth must be positive");
  if (p.size() < 2) throw InputError("local linear smoothing needs at least two observations");
  std::vector<double> out(grid.size());
  for (std::size_t m = 0; m < grid.size(); ++m) {
    const auto fit = detail::local_line_widening(p, grid[m], h);
    if (!fit) throw NumericalError("local linear fit degenerate near t = " + std::to_string(grid[m]));
    out[m] = fit->intercept;
  }
  return out;
}

inline MeanCurve local_linear_mean(const LongitudinalDataset& ds, double h, const EvalGrid& grid) {
  return {grid, local_linear_curve(pooled_observations(ds), h, grid), h};
}

struct RawCovariance {
  SurfacePoints off_diagonal;  ///< r != l, both orderings
  ScatterPoints diagonal;      ///< (t_ir, squared residual)
};

/// Within-subject residual cross products.
inline RawCovariance raw_covariance(const LongitudinalDataset& ds, const MeanCurve& mean) {
  RawCovariance raw;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.subject(i);
    std::vector<double> res(s.size());
    for (std::size_t r = 0; r < s.size(); ++r) res[r] = s.values[r] - mean(s.times[r]);
    const auto tag = static_cast<std::uint32_t>(i);
    for (std::size_t r = 0; r < s.size(); ++r) {
      raw.diagonal.t.push_back(s.times[r]);
      raw.diagonal.y.push_back(res[r] * res[r]);
      raw.diagonal.subject.push_back(tag);
      for (std::size_t l = 0; l < s.size(); ++l) {
        if (l == r) continue;
        raw.off_diagonal.s.push_back(s.times[r]);
        raw.off_diagonal.t.push_back(s.times[l]);
        raw.off_diagonal.c.push_back(res[r] * res[l]);
        raw.off_diagonal.subject.push_back(tag);
      }
    }
  }
  raw.off_diagonal.canonicalize();
  raw.diagonal.canonicalize();
  return raw;
}

/// Local plane fit of the off-diagonal products on grid x grid, symmetrized.
inline Eigen::MatrixXd local_linear_surface(const SurfacePoints& pairs, double h, const EvalGrid& grid) {
  if (!(h > 0.0)) throw InputError("bandwidth must be positive");
  if (pairs.size() < 3) throw InputError("surface smoothing needs at least three off-diagonal pairs");
  const Eigen::MatrixXd g = detail::local_plane_grid(pairs, h, grid, detail::order_by_t(pairs), false).values;
  return 0.5 * (g + g.transpose());
}

/// sigma^2 from the gap between the smoothed diagonal products and the surface
/// diagonal, averaged over the central half of the domain and clamped at 0.
inline double estimate_sigma2(const ScatterPoints& diagonal, const Eigen::MatrixXd& surface, const EvalGrid& grid,
                              double h) {
  const auto v = local_linear_curve(diagonal, h, grid);
  const auto dom = grid.domain();
  const double a = dom.lo + 0.25 * dom.length();
  const double b = dom.hi - 0.25 * dom.length();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t m = 0; m < grid.size(); ++m) {
    if (grid[m] < a || grid[m] > b) continue;
    sum += v[m] - surface(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    ++count;
  }
  return std::max(0.0, sum / static_cast<double>(count));
}

enum class BandwidthMethod { gcv, leave_one_curve_out };
enum class BandwidthTarget { mean, surface };

struct BandwidthOptions {
  BandwidthMethod method = BandwidthMethod::gcv;
  std::size_t candidates = 10;
  std::size_t grid_points = 51;  ///< grid used by surface GCV
};

/// Log-spaced candidates on [2 * mean gap of pooled sorted times, |T| / 2].
inline std::vector<double> bandwidth_candidates(const ScatterPoints& p, Interval domain, std::size_t count) {
  if (p.size() < 2) throw InputError("bandwidth selection needs at least two observations");
  const double gap = (p.t.back() - p.t.front()) / static_cast<double>(p.size() - 1);
  if (!(gap > 0.0)) throw InputError("bandwidth selection needs at least two distinct times");
  const double lo = 2.0 * gap;
  const double hi = std::max(0.5 * domain.length(), lo);
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double f = count == 1 ? 1.0 : static_cast<double>(k) / static_cast<double>(count - 1);
    out[k] = lo * std::pow(hi / lo, f);
  }
  return out;
}

namespace detail {

/// Minimizer of the criterion; near-ties go to the larger bandwidth.
inline double pick_bandwidth(const std::vector<double>& candidates, const std::vector<double>& score, double scale) {
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (!std::isfinite(score[k])) continue;
    if (!best || score[k] <= score[*best] * (1.0 + 1e-10) + 1e-14 * scale) best = k;
  }
  if (!best) throw NumericalError("every candidate bandwidth gave a degenerate fit");
  return candidates[*best];
}

inline double variance_scale(const std::vector<double>& y) {
  if (y.empty()) return 0.0;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(y.size());
}

inline double gcv_curve(const ScatterPoints& p, double h) {
  std::vector<LocalLine> fits;
  try {
    fits = local_line_at_points(p, h);
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  }
  double rss = 0.0, trace = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double r = p.y[k] - fits[k].intercept;
    rss += r * r;
    trace += fits[k].self_hat;
  }
  const double n = static_cast<double>(p.size());
  const double denom = 1.0 - trace / n;
  if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
  return (rss / n) / (denom * denom);
}

inline std::size_t subject_count(const std::vector<std::uint32_t>& tags) {
  return tags.empty() ? 0 : static_cast<std::size_t>(*std::max_element(tags.begin(), tags.end())) + 1;
}

inline double loocv_curve(const ScatterPoints& p, double h) {
  double rss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto fit = local_line_widening(p, p.t[k], h, p.subject[k]);
    if (!fit) return std::numeric_limits<double>::infinity();
    const double r = p.y[k] - fit->intercept;
    rss += r * r;
  }
  return rss / static_cast<double>(p.size());
}

/// GCV for the surface: the grid fit and its hat diagonal are interpolated
/// bilinearly at each pair. `p` holds both orderings of every product.
inline double gcv_surface(const SurfacePoints& p, double h, const EvalGrid& grid,
                          const PairsByT& by_t) {
  SurfaceFit fit;
  try {
    fit = local_plane_grid(p, h, grid, by_t, true);
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  }
  double rss = 0.0, trace = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double r = p.c[k] - grid.interpolate(fit.values, p.s[k], p.t[k]);
    rss += r * r;
    trace += grid.interpolate(fit.self_hat, p.s[k], p.t[k]);
  }
  const double n = static_cast<double>(p.size());
  const double denom = 1.0 - trace / n;
  if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
  return (rss / n) / (denom * denom);
}

inline double loocv_surface(const SurfacePoints& p, double h) {
  const SurfaceIndex index(p, h);
  double rss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto fit = local_plane_widening(p, index, p.s[k], p.t[k], h, p.subject[k]);
    if (!fit) return std::numeric_limits<double>::infinity();
    const double r = p.c[k] - fit->intercept;
    rss += r * r;
  }
  return rss / static_cast<double>(p.size());
}

}  // namespace detail

/// Bandwidth for a 1-D smoother over pooled scatter.
inline double select_bandwidth_curve(const ScatterPoints& p, Interval domain, const BandwidthOptions& opt = {}) {
  if (p.size() < 10) throw InputError("bandwidth selection needs at least 10 pooled observations");
  const auto cand = bandwidth_candidates(p, domain, opt.candidates);
  std::vector<double> score(cand.size());
  for (std::size_t k = 0; k < cand.size(); ++k)
    score[k] = opt.method == BandwidthMethod::gcv ? detail::gcv_curve(p, cand[k]) : detail::loocv_curve(p, cand[k]);
  return detail::pick_bandwidth(cand, score, detail::variance_scale(p.y));
}

/// Bandwidth for the covariance surface. Candidates come from the pooled observation times.
inline double select_bandwidth_surface(const SurfacePoints& pairs, const ScatterPoints& observations, Interval domain,
                                       const BandwidthOptions& opt = {}) {
  if (observations.size() < 10) throw InputError("bandwidth selection needs at least 10 pooled observations");
  if (pairs.size() < 3) throw InputError("surface bandwidth selection needs off-diagonal pairs");
  const auto cand = bandwidth_candidates(observations, domain, opt.candidates);
  const EvalGrid grid(domain, opt.grid_points);
  const auto by_t = opt.method == BandwidthMethod::gcv ? detail::order_by_t(pairs) : detail::PairsByT{};
  std::vector<double> score(cand.size());
  for (std::size_t k = 0; k < cand.size(); ++k)
    score[k] = opt.method == BandwidthMethod::gcv ? detail::gcv_surface(pairs, cand[k], grid, by_t)
                                                  : detail::loocv_surface(pairs, cand[k]);
  return detail::pick_bandwidth(cand, score, detail::variance_scale(pairs.c));
}

/// Dataset-level entry point. The surface target needs the fitted mean.
inline double select_bandwidth(const LongitudinalDataset& ds, BandwidthTarget target, const MeanCurve* mean = nullptr,
                               const BandwidthOptions& opt = {}) {
  const auto obs = pooled_observations(ds);
  if (target == BandwidthTarget::mean) return select_bandwidth_curve(obs, ds.domain(), opt);
  if (!mean) throw InputError("surface bandwidth selection needs a mean curve");
  const auto raw = raw_covariance(ds, *mean);
  return select_bandwidth_surface(raw.off_diagonal, obs, ds.domain(), opt);
}

}  // namespace fpvc
