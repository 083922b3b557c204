#pragma once

// Longitudinal outcomes, covariates and genotypes: types, loaders and the
// genotype preparation steps (QC, dominant coding, imputation).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/error.hpp"
#include "fpvc/log.hpp"
#include "fpvc/text.hpp"

namespace fpvc {

/// Closed time interval on which outcomes are observed.
struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double length() const noexcept { return hi - lo; }
  bool contains(double t) const noexcept { return t >= lo && t <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct Subject {
  std::string id;
  std::vector<double> times;
  std::vector<double> values;

  std::size_t size() const noexcept { return times.size(); }
  friend bool operator==(const Subject&, const Subject&) = default;
};

/// Irregularly sampled observations of one outcome. Each subject's
/// observations are stored sorted by time (ties ordered by value).
class LongitudinalDataset {
public:
  LongitudinalDataset() = default;

  /// Validates and normalizes. When `domain` is omitted the observed time range is used.
  LongitudinalDataset(std::string label, std::vector<Subject> subjects,
                      std::optional<Interval> domain = std::nullopt)
      : label_(std::move(label)), subjects_(std::move(subjects)) {
    if (subjects_.empty()) throw InputError("dataset '" + label_ + "' has no subjects");
    std::unordered_set<std::string> seen;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto& s : subjects_) {
      if (!seen.insert(s.id).second) throw InputError("duplicate subject id '" + s.id + "'");
      if (s.times.size() != s.values.size())
        throw InputError("subject '" + s.id + "': times and values differ in length");
      if (s.times.empty()) throw InputError("subject '" + s.id + "' has no observations");
      sort_observations(s);
      for (std::size_t r = 0; r < s.size(); ++r) {
        if (!std::isfinite(s.times[r]) || !std::isfinite(s.values[r]))
          throw InputError("subject '" + s.id + "' has a non-finite observation");
      }
      lo = std::min(lo, s.times.front());
      hi = std::max(hi, s.times.back());
    }
    domain_ = domain.value_or(Interval{lo, hi});
    if (!(domain_.hi > domain_.lo)) throw InputError("dataset '" + label_ + "' has a degenerate time domain");
    if (lo < domain_.lo || hi > domain_.hi)
      throw InputError("dataset '" + label_ + "' has times outside the declared domain");
  }

  const std::string& label() const noexcept { return label_; }
  const std::vector<Subject>& subjects() const noexcept { return subjects_; }
  const Subject& subject(std::size_t i) const { return subjects_.at(i); }
  std::size_t size() const noexcept { return subjects_.size(); }
  Interval domain() const noexcept { return domain_; }

  std::size_t total_observations() const noexcept {
    std::size_t n = 0;
    for (const auto& s : subjects_) n += s.size();
    return n;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(subjects_.size());
    for (const auto& s : subjects_) out.push_back(s.id);
    return out;
  }

  /// Subset in the order given by `ids`; every id must be present.
  LongitudinalDataset select(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < subjects_.size(); ++i) index.emplace(subjects_[i].id, i);
    std::vector<Subject> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      const auto it = index.find(id);
      if (it == index.end()) throw InputError("subject '" + id + "' not in dataset '" + label_ + "'");
      out.push_back(subjects_[it->second]);
    }
    return LongitudinalDataset(label_, std::move(out), domain_);
  }

  friend bool operator==(const LongitudinalDataset&, const LongitudinalDataset&) = default;

private:
  static void sort_observations(Subject& s) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (s.times[a] != s.times[b]) return s.times[a] < s.times[b];
      return s.values[a] < s.values[b];
    });
    std::vector<double> t(s.size()), v(s.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
      t[r] = s.times[order[r]];
      v[r] = s.values[order[r]];
    }
    s.times = std::move(t);
    s.values = std::move(v);
  }

  std::string label_;
  std::vector<Subject> subjects_;
  Interval domain_;
};

/// Column names for the long-format outcome file.
struct LongFormatSchema {
  std::string id_column = "subject_id";
  std::string time_column = "time";
  std::string value_column = "value";
  std::optional<char> delimiter;  ///< auto-detected (tab or comma) when empty
  std::optional<Interval> domain;
};

/// Reads `subject_id, time, value` rows. Subjects come out sorted by id so the
/// result does not depend on row order.
inline LongitudinalDataset load_long_format(std::istream& in, const LongFormatSchema& schema = {},
                                            std::string label = "outcome") {
  text::LineReader reader(in);
  std::string line;
  if (!reader.next(line)) throw InputError("outcome file is empty");
  const char delim = schema.delimiter.value_or(text::detect_delimiter(line));
  const auto header = text::split(line, delim);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("outcome file header lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto id_col = column(schema.id_column);
  const auto t_col = column(schema.time_column);
  const auto v_col = column(schema.value_column);
  const auto needed = std::max({id_col, t_col, v_col}) + 1;

  std::map<std::string, Subject> by_id;
  std::size_t rows = 0;
  while (reader.next(line)) {
    const auto fields = text::split(line, delim);
    const auto where = "line " + std::to_string(reader.line_number());
    if (fields.size() < needed) throw InputError(where + ": expected at least " + std::to_string(needed) + " fields");
    const auto t = text::parse_double(fields[t_col]);
    const auto v = text::parse_double(fields[v_col]);
    if (!t) throw InputError(where + ": unparseable time '" + fields[t_col] + "'");
    if (!v) throw InputError(where + ": unparseable value '" + fields[v_col] + "'");
    if (fields[id_col].empty()) throw InputError(where + ": empty subject id");
    auto& s = by_id[fields[id_col]];
    s.id = fields[id_col];
    s.times.push_back(*t);
    s.values.push_back(*v);
    ++rows;
  }
  if (rows == 0) throw InputError("outcome file has a header but no data rows");
  std::vector<Subject> subjects;
  subjects.reserve(by_id.size());
  for (auto& [id, s] : by_id) subjects.push_back(std::move(s));
  return LongitudinalDataset(std::move(label), std::move(subjects), schema.domain);
}

/// Keeps subjects with at least `r_min` observations.
inline LongitudinalDataset filter_min_observations(const LongitudinalDataset& ds, std::size_t r_min) {
  if (r_min < 1) throw InputError("r_min must be at least 1");
  std::vector<Subject> kept;
  for (const auto& s : ds.subjects())
    if (s.size() >= r_min) kept.push_back(s);
  if (kept.empty())
    throw InputError("no subject in '" + ds.label() + "' has " + std::to_string(r_min) + " or more observations");
  return LongitudinalDataset(ds.label(), std::move(kept), ds.domain());
}

/// Pooled grand mean and standard deviation of one outcome.
struct OutcomeScaling {
  double mean = 0.0;
  double sd = 1.0;

  double apply(double y) const noexcept { return (y - mean) / sd; }
  double invert(double y) const noexcept { return mean + sd * y; }
  friend bool operator==(const OutcomeScaling&, const OutcomeScaling&) = default;
};

inline OutcomeScaling pooled_scaling(const LongitudinalDataset& ds) {
  const auto n = ds.total_observations();
  if (n < 2) throw InputError("standardization needs at least two observations");
  double sum = 0.0;
  for (const auto& s : ds.subjects())
    for (double v : s.values) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& s : ds.subjects())
    for (double v : s.values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw InputError("outcome '" + ds.label() + "' is constant; cannot standardize");
  return {mean, sd};
}

inline LongitudinalDataset apply_scaling(const LongitudinalDataset& ds, const OutcomeScaling& sc) {
  auto subjects = ds.subjects();
  for (auto& s : subjects)
    for (auto& v : s.values) v = sc.apply(v);
  return LongitudinalDataset(ds.label(), std::move(subjects), ds.domain());
}

inline LongitudinalDataset invert_scaling(const LongitudinalDataset& ds, const OutcomeScaling& sc) {
  auto subjects = ds.subjects();
  for (auto& s : subjects)
    for (auto& v : s.values) v = sc.invert(v);
  return LongitudinalDataset(ds.label(), std::move(subjects), ds.domain());
}

/// Centers and scales by the pooled mean and SD over all observations.
inline std::pair<LongitudinalDataset, OutcomeScaling> standardize_outcome(const LongitudinalDataset& ds) {
  const auto sc = pooled_scaling(ds);
  return {apply_scaling(ds, sc), sc};
}

/// Subject covariates. Column 0 is the intercept.
class CovariateMatrix {
public:
  CovariateMatrix() = default;

  CovariateMatrix(std::vector<std::string> ids, std::vector<std::string> names, Eigen::MatrixXd values)
      : ids_(std::move(ids)), names_(std::move(names)), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.rows()) != ids_.size())
      throw InputError("covariate matrix rows do not match subject ids");
    if (static_cast<std::size_t>(values_.cols()) != names_.size())
      throw InputError("covariate matrix columns do not match names");
    if (values_.cols() < 1 || (values_.col(0).array() != 1.0).any())
      throw InputError("first covariate column must be the intercept");
    if (!values_.allFinite()) throw InputError("covariates contain missing or non-finite values");
    std::unordered_set<std::string> seen(ids_.begin(), ids_.end());
    if (seen.size() != ids_.size()) throw InputError("duplicate subject id in covariates");
  }

  /// Intercept-only design for the given subjects.
  static CovariateMatrix intercept_only(std::vector<std::string> ids) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(ids.size()), 1);
    return CovariateMatrix(std::move(ids), {"intercept"}, std::move(x));
  }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return ids_.size(); }

  CovariateMatrix select(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < ids_.size(); ++i) index.emplace(ids_[i], static_cast<Eigen::Index>(i));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), values_.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto it = index.find(ids[i]);
      if (it == index.end()) throw InputError("subject '" + ids[i] + "' has no covariates");
      out.row(static_cast<Eigen::Index>(i)) = values_.row(it->second);
    }
    return CovariateMatrix(ids, names_, std::move(out));
  }

private:
  std::vector<std::string> ids_;
  std::vector<std::string> names_;
  Eigen::MatrixXd values_;
};

/// Reads `subject_id, x1..xq`. Subjects with a missing covariate are dropped with a warning.
inline CovariateMatrix load_covariates(std::istream& in, std::optional<char> delimiter = std::nullopt) {
  text::LineReader reader(in);
  std::string line;
  if (!reader.next(line)) throw InputError("covariate file is empty");
  const char delim = delimiter.value_or(text::detect_delimiter(line));
  const auto header = text::split(line, delim);
  if (header.empty() || header[0].empty()) throw InputError("covariate header is empty");
  std::vector<std::string> names{"intercept"};
  names.insert(names.end(), header.begin() + 1, header.end());
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t dropped = 0;
  while (reader.next(line)) {
    const auto fields = text::split(line, delim);
    const auto where = "line " + std::to_string(reader.line_number());
    if (fields.size() != header.size()) throw InputError(where + ": expected " + std::to_string(header.size()) + " fields");
    std::vector<double> row{1.0};
    bool missing = false;
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto v = text::parse_double_or_na(fields[c]);
      if (!v) throw InputError(where + ": unparseable covariate '" + fields[c] + "'");
      if (std::isnan(*v)) missing = true;
      row.push_back(*v);
    }
    if (missing) {
      ++dropped;
      continue;
    }
    ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (dropped > 0) log::warn(std::to_string(dropped) + " subject(s) with missing covariates dropped");
  if (ids.empty()) throw InputError("covariate file has no complete rows");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < names.size(); ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return CovariateMatrix(std::move(ids), std::move(names), std::move(x));
}

struct Marker {
  std::string id;
  std::string chromosome;
  long long position = 0;
  friend bool operator==(const Marker&, const Marker&) = default;
};

/// Chromosome-then-position ordering; numeric chromosome labels compare numerically.
inline bool marker_before(const Marker& a, const Marker& b) {
  auto key = [](const std::string& chr) {
    std::string_view v = chr;
    if (v.starts_with("chr")) v.remove_prefix(3);
    long long num = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), num);
    const bool numeric = ec == std::errc{} && ptr == v.data() + v.size();
    return std::tuple(numeric ? 0 : 1, numeric ? num : 0LL, std::string(v));
  };
  const auto ka = key(a.chromosome);
  const auto kb = key(b.chromosome);
  if (ka != kb) return ka < kb;
  return a.position < b.position;
}

enum class GenotypeCoding { raw, dominant };

/// Subjects by markers. Missing entries are NaN.
class GenotypeMatrix {
public:
  GenotypeMatrix() = default;

  GenotypeMatrix(std::vector<std::string> ids, std::vector<Marker> markers, Eigen::MatrixXd values,
                 GenotypeCoding coding = GenotypeCoding::raw, bool imputed = false)
      : ids_(std::move(ids)), markers_(std::move(markers)), values_(std::move(values)), coding_(coding), imputed_(imputed) {
    if (static_cast<std::size_t>(values_.rows()) != ids_.size()) throw InputError("genotype rows do not match subject ids");
    if (static_cast<std::size_t>(values_.cols()) != markers_.size()) throw InputError("genotype columns do not match markers");
    for (std::size_t j = 1; j < markers_.size(); ++j)
      if (marker_before(markers_[j], markers_[j - 1]))
        throw InputError("markers are not ordered by chromosome position at '" + markers_[j].id + "'");
    const double top = coding_ == GenotypeCoding::dominant ? 1.0 : 2.0;
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      for (Eigen::Index i = 0; i < values_.rows(); ++i) {
        const double v = values_(i, j);
        if (std::isnan(v)) {
          if (imputed_) throw InputError("imputed genotype matrix has missing entries");
          continue;
        }
        const bool ok = imputed_ ? (v >= 0.0 && v <= top) : (v == 0.0 || v == 1.0 || (v == 2.0 && top == 2.0));
        if (!ok) throw InputError("invalid genotype value at marker '" + markers_[static_cast<std::size_t>(j)].id + "'");
      }
    }
  }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<Marker>& markers() const noexcept { return markers_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  GenotypeCoding coding() const noexcept { return coding_; }
  bool imputed() const noexcept { return imputed_; }
  std::size_t subject_count() const noexcept { return ids_.size(); }
  std::size_t marker_count() const noexcept { return markers_.size(); }

  GenotypeMatrix select_subjects(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < ids_.size(); ++i) index.emplace(ids_[i], static_cast<Eigen::Index>(i));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), values_.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto it = index.find(ids[i]);
      if (it == index.end()) throw InputError("subject '" + ids[i] + "' has no genotypes");
      out.row(static_cast<Eigen::Index>(i)) = values_.row(it->second);
    }
    return GenotypeMatrix(ids, markers_, std::move(out), coding_, imputed_);
  }

  /// Columns at the given (increasing) indices.
  GenotypeMatrix select_markers(const std::vector<std::size_t>& columns) const {
    Eigen::MatrixXd out(values_.rows(), static_cast<Eigen::Index>(columns.size()));
    std::vector<Marker> markers;
    markers.reserve(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out.col(static_cast<Eigen::Index>(c)) = values_.col(static_cast<Eigen::Index>(columns[c]));
      markers.push_back(markers_.at(columns[c]));
    }
    return GenotypeMatrix(ids_, std::move(markers), std::move(out), coding_, imputed_);
  }

  std::optional<std::size_t> marker_index(const std::string& id) const {
    for (std::size_t j = 0; j < markers_.size(); ++j)
      if (markers_[j].id == id) return j;
    return std::nullopt;
  }

private:
  std::vector<std::string> ids_;
  std::vector<Marker> markers_;
  Eigen::MatrixXd values_;
  GenotypeCoding coding_ = GenotypeCoding::raw;
  bool imputed_ = false;
};

/// Reads the `marker_id, chromosome, position` sidecar.
inline std::vector<Marker> load_marker_map(std::istream& in, std::optional<char> delimiter = std::nullopt) {
  text::LineReader reader(in);
  std::string line;
  if (!reader.next(line)) throw InputError("marker map is empty");
  const char delim = delimiter.value_or(text::detect_delimiter(line));
  std::vector<Marker> out;
  while (reader.next(line)) {
    const auto f = text::split(line, delim);
    const auto where = "marker map line " + std::to_string(reader.line_number());
    if (f.size() < 3) throw InputError(where + ": expected marker_id, chromosome, position");
    long long pos = 0;
    const auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), pos);
    if (ec != std::errc{} || ptr != f[2].data() + f[2].size()) throw InputError(where + ": bad position '" + f[2] + "'");
    out.push_back({f[0], f[1], pos});
  }
  return out;
}

/// Reads a wide genotype file (`subject_id` then one column per marker) and
/// orders its columns by the map. Markers missing from the map are an error.
inline GenotypeMatrix load_genotypes(std::istream& geno, const std::vector<Marker>& map,
                                     std::optional<char> delimiter = std::nullopt) {
  text::LineReader reader(geno);
  std::string line;
  if (!reader.next(line)) throw InputError("genotype file is empty");
  const char delim = delimiter.value_or(text::detect_delimiter(line));
  const auto header = text::split(line, delim);
  if (header.size() < 2) throw InputError("genotype file has no marker columns");
  std::unordered_map<std::string, Marker> by_id;
  for (const auto& m : map) by_id.emplace(m.id, m);
  std::vector<Marker> markers;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto it = by_id.find(header[c]);
    if (it == by_id.end()) throw InputError("marker '" + header[c] + "' is not in the marker map");
    markers.push_back(it->second);
  }
  std::vector<std::size_t> order(markers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return marker_before(markers[a], markers[b]); });

  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  while (reader.next(line)) {
    const auto f = text::split(line, delim);
    const auto where = "genotype line " + std::to_string(reader.line_number());
    if (f.size() != header.size()) throw InputError(where + ": expected " + std::to_string(header.size()) + " fields");
    std::vector<double> row(markers.size());
    for (std::size_t c = 0; c < markers.size(); ++c) {
      const auto v = text::parse_double_or_na(f[c + 1]);
      if (!v) throw InputError(where + ": unparseable genotype '" + f[c + 1] + "'");
      row[c] = *v;
    }
    ids.push_back(f[0]);
    rows.push_back(std::move(row));
  }
  if (ids.empty()) throw InputError("genotype file has no subjects");
  Eigen::MatrixXd g(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(markers.size()));
  std::vector<Marker> sorted;
  for (std::size_t c = 0; c < order.size(); ++c) {
    sorted.push_back(markers[order[c]]);
    for (std::size_t i = 0; i < ids.size(); ++i)
      g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][order[c]];
  }
  return GenotypeMatrix(std::move(ids), std::move(sorted), std::move(g));
}

/// Maps raw {0,1,2} to carrier status {0,1}.
inline GenotypeMatrix dominant_code(const GenotypeMatrix& g) {
  if (g.coding() == GenotypeCoding::dominant) throw InputError("genotypes are already dominant-coded");
  if (g.imputed()) throw InputError("dominant coding must precede imputation");
  Eigen::MatrixXd out = g.values().unaryExpr([](double v) { return std::isnan(v) ? v : (v > 0.0 ? 1.0 : 0.0); });
  return GenotypeMatrix(g.ids(), g.markers(), std::move(out), GenotypeCoding::dominant, false);
}

/// Replaces missing entries with the marker's frequency: carrier frequency
/// under dominant coding, minor allele frequency (mean / 2) under raw coding.
inline GenotypeMatrix impute_missing(const GenotypeMatrix& g) {
  Eigen::MatrixXd out = g.values();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    double sum = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      if (!std::isnan(out(i, j))) {
        sum += out(i, j);
        ++count;
      }
    }
    if (count == 0) throw InputError("marker '" + g.markers()[static_cast<std::size_t>(j)].id + "' is entirely missing");
    if (count == out.rows()) continue;
    double fill = sum / static_cast<double>(count);
    if (g.coding() == GenotypeCoding::raw) fill /= 2.0;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      if (std::isnan(out(i, j))) out(i, j) = fill;
  }
  return GenotypeMatrix(g.ids(), g.markers(), std::move(out), g.coding(), true);
}

struct QcResult {
  GenotypeMatrix genotypes;
  std::size_t dropped = 0;
};

/// Keeps markers with missing rate strictly below `max_missing_rate` and at
/// least `min_carriers` subjects carrying a minor allele.
inline QcResult qc_filter(const GenotypeMatrix& g, double max_missing_rate, std::size_t min_carriers) {
  if (!(max_missing_rate >= 0.0 && max_missing_rate <= 1.0)) throw InputError("missing-rate threshold must lie in [0,1]");
  const auto& v = g.values();
  std::vector<std::size_t> keep;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    std::size_t missing = 0, carriers = 0;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (std::isnan(v(i, j))) ++missing;
      else if (v(i, j) > 0.0) ++carriers;
    }
    const double rate = v.rows() > 0 ? static_cast<double>(missing) / static_cast<double>(v.rows()) : 1.0;
    if (rate < max_missing_rate && carriers >= min_carriers) keep.push_back(static_cast<std::size_t>(j));
  }
  QcResult res{g.select_markers(keep), g.marker_count() - keep.size()};
  if (keep.empty()) log::warn("quality control removed every marker");
  return res;
}

/// Sorted ids present in every list.
inline std::vector<std::string> intersect_ids(const std::vector<std::vector<std::string>>& lists) {
  if (lists.empty()) return {};
  std::set<std::string> common(lists.front().begin(), lists.front().end());
  for (std::size_t k = 1; k < lists.size(); ++k) {
    std::set<std::string> next;
    for (const auto& id : lists[k])
      if (common.count(id)) next.insert(id);
    common = std::move(next);
  }
  return {common.begin(), common.end()};
}

}  // namespace fpvc
