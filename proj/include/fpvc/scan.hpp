#pragma once

// Sliding-window scan: per-cohort FPCA and scores computed once, one test per
// window and cohort, Fisher combination across cohorts and BH over windows.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpvc/data.hpp"
#include "fpvc/error.hpp"
#include "fpvc/fpca.hpp"
#include "fpvc/log.hpp"
#include "fpvc/nuisance.hpp"
#include "fpvc/parallel.hpp"
#include "fpvc/scores.hpp"
#include "fpvc/text.hpp"
#include "fpvc/vc_test.hpp"

namespace fpvc {

struct Window {
  std::size_t first = 0;  ///< 0-based marker index
  std::size_t size = 0;
};

/// Windows {j, ..., j+s-1} for j = 0, stride, ..., p-s.
inline std::vector<Window> make_windows(std::size_t p, std::size_t s, std::size_t stride) {
  if (s < 1) throw InputError("window size must be at least 1");
  if (stride < 1) throw InputError("stride must be at least 1");
  if (p < s) throw InputError("fewer markers (" + std::to_string(p) + ") than the window size (" + std::to_string(s) + ")");
  std::vector<Window> out;
  out.reserve((p - s) / stride + 1);
  for (std::size_t j = 0; j + s <= p; j += stride) out.push_back({j, s});
  return out;
}

/// One cohort's inputs before QC.
struct CohortInput {
  std::string name;
  std::vector<LongitudinalDataset> outcomes;
  GenotypeMatrix genotypes;  ///< raw coding, may hold missing entries
  std::optional<CovariateMatrix> covariates;
  FpcaConfig fpca;
  ScoreKind score_kind = ScoreKind::blup;
  std::size_t min_observations = 1;
};

struct ScanOptions {
  std::size_t window = 10;
  std::size_t stride = 1;
  double fdr = 0.1;
  std::size_t threads = 1;
  double max_missing_rate = 0.05;
  std::size_t min_carriers = 5;
  bool dominant = true;
  VcTestOptions test;

  void validate() const {
    if (window < 1) throw InputError("window size must be at least 1");
    if (stride < 1) throw InputError("stride must be at least 1");
    if (!(fdr > 0.0 && fdr < 1.0)) throw InputError("FDR level must lie in (0, 1)");
  }
};

struct ScanRow {
  std::size_t window = 0;  ///< 1-based
  Marker first, mid, last;
  std::vector<double> p_cohort;  ///< NaN where the cohort's test failed
  double p_combined = std::numeric_limits<double>::quiet_NaN();
  bool rejected = false;
  std::string error;

  bool failed() const { return std::isnan(p_combined); }
};

struct ScanResult {
  std::vector<std::string> cohorts;
  std::vector<ScanRow> rows;
  double threshold = 0.0;  ///< BH cutoff on the combined p-values
  std::size_t rejected = 0;
  std::size_t failed = 0;
  std::size_t markers = 0;
  std::size_t fpca_fits = 0;   ///< instrumentation: FPCA fits performed
  std::size_t score_fits = 0;  ///< instrumentation: score matrices computed
};

namespace detail {

/// A cohort after subject alignment, QC, coding, imputation and score estimation.
struct PreparedCohort {
  std::vector<Eigen::MatrixXd> scores;
  Eigen::MatrixXd genotypes;  ///< n x p over the cohort's retained markers
  Eigen::MatrixXd covariates;
  std::vector<Marker> markers;
};

inline PreparedCohort prepare_cohort(const CohortInput& in, const ScanOptions& opt, ScanResult& counters) {
  if (in.outcomes.empty()) throw InputError("cohort '" + in.name + "' has no outcomes");
  std::vector<LongitudinalDataset> outcomes;
  for (const auto& ds : in.outcomes) outcomes.push_back(filter_min_observations(ds, in.min_observations));

  std::vector<std::vector<std::string>> lists;
  for (const auto& ds : outcomes) lists.push_back(ds.ids());
  lists.push_back(in.genotypes.ids());
  if (in.covariates) lists.push_back(in.covariates->ids());
  const auto ids = intersect_ids(lists);
  std::size_t largest = 0;
  for (const auto& l : lists) largest = std::max(largest, l.size());
  if (ids.size() < largest)
    log::warn("cohort '" + in.name + "': " + std::to_string(largest - ids.size()) +
              " subject(s) not present in every input were dropped");
  if (ids.size() < 5) throw InputError("cohort '" + in.name + "' has fewer than five complete subjects");

  auto qc = qc_filter(in.genotypes.select_subjects(ids), opt.max_missing_rate, opt.min_carriers);
  if (qc.dropped > 0)
    log::warn("cohort '" + in.name + "': quality control dropped " + std::to_string(qc.dropped) + " marker(s)");
  GenotypeMatrix g = std::move(qc.genotypes);
  if (opt.dominant && g.coding() == GenotypeCoding::raw) g = dominant_code(g);
  g = impute_missing(g);

  PreparedCohort out;
  for (const auto& ds : outcomes) {
    const auto sub = ds.select(ids);
    const auto model = fit_fpca(sub, in.fpca);
    ++counters.fpca_fits;
    auto sm = in.score_kind == ScoreKind::blup ? blup_scores(model, sub) : refit_scores(model, sub).first;
    ++counters.score_fits;
    out.scores.push_back(sm.select(ids).scores);
  }
  out.genotypes = g.values();
  out.markers = g.markers();
  out.covariates = in.covariates ? in.covariates->select(ids).values()
                                 : CovariateMatrix::intercept_only(ids).values();
  return out;
}

}  // namespace detail

/// Scans windows over the markers retained in every cohort, in map order.
inline ScanResult run_scan(const std::vector<CohortInput>& cohorts, const ScanOptions& opt = {}) {
  opt.validate();
  if (cohorts.empty()) throw InputError("scan needs at least one cohort");
  ScanResult res;
  std::vector<detail::PreparedCohort> prepared;
  for (const auto& c : cohorts) {
    res.cohorts.push_back(c.name);
    prepared.push_back(detail::prepare_cohort(c, opt, res));
  }

  // markers retained in every cohort, ordered by position
  std::map<std::string, std::size_t> seen;
  for (const auto& pc : prepared)
    for (const auto& m : pc.markers) ++seen[m.id];
  std::vector<Marker> common;
  for (const auto& m : prepared.front().markers)
    if (seen[m.id] == prepared.size()) common.push_back(m);
  std::stable_sort(common.begin(), common.end(), marker_before);
  for (const auto& pc : prepared)
    if (pc.markers.size() > common.size())
      log::warn(std::to_string(pc.markers.size() - common.size()) +
                " marker(s) not retained in every cohort were left out of the scan");
  res.markers = common.size();

  // per cohort, genotype columns in common-marker order
  std::vector<Eigen::MatrixXd> geno;
  for (const auto& pc : prepared) {
    std::map<std::string, Eigen::Index> col;
    for (std::size_t j = 0; j < pc.markers.size(); ++j) col.emplace(pc.markers[j].id, static_cast<Eigen::Index>(j));
    Eigen::MatrixXd g(pc.genotypes.rows(), static_cast<Eigen::Index>(common.size()));
    for (std::size_t j = 0; j < common.size(); ++j) g.col(static_cast<Eigen::Index>(j)) = pc.genotypes.col(col.at(common[j].id));
    geno.push_back(std::move(g));
  }

  const auto windows = make_windows(common.size(), opt.window, opt.stride);
  const auto kind = default_nuisance_kind(opt.dominant);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.rows.resize(windows.size());
  {
    log::ScopedSilence quiet;  // per-window warnings are summarized below
    parallel_for(windows.size(), opt.threads, [&](std::size_t w) {
      const auto& win = windows[w];
      ScanRow& row = res.rows[w];
      row.window = w + 1;
      row.first = common[win.first];
      row.mid = common[win.first + (win.size + 1) / 2 - 1];
      row.last = common[win.first + win.size - 1];
      row.p_cohort.assign(prepared.size(), nan);
      bool complete = true;
      for (std::size_t c = 0; c < prepared.size(); ++c) {
        try {
          const Eigen::MatrixXd z =
              geno[c].middleCols(static_cast<Eigen::Index>(win.first), static_cast<Eigen::Index>(win.size));
          const auto cg = center_window(z, prepared[c].covariates, kind);
          row.p_cohort[c] = vc_test(prepared[c].scores, cg, opt.test).p_value;
        } catch (const Error& e) {
          complete = false;
          if (row.error.empty()) row.error = res.cohorts[c] + ": " + e.what();
        }
      }
      if (complete) {
        try {
          row.p_combined = fisher_combine(row.p_cohort);
        } catch (const Error& e) {
          row.error = e.what();
        }
      }
    });
  }

  std::vector<double> ok;
  std::vector<std::size_t> where;
  for (std::size_t w = 0; w < res.rows.size(); ++w) {
    if (res.rows[w].failed()) {
      ++res.failed;
      continue;
    }
    ok.push_back(res.rows[w].p_combined);
    where.push_back(w);
  }
  if (res.failed > 0)
    log::warn(std::to_string(res.failed) + " window(s) failed and were excluded from the FDR family");
  const auto bh = bh_reject(ok, opt.fdr);
  res.threshold = bh.threshold;
  res.rejected = bh.count;
  for (std::size_t k = 0; k < where.size(); ++k) res.rows[where[k]].rejected = bh.rejected[k];
  return res;
}

/// Results table: window, first_id, mid_id, last_id, position, p_cohort_1..m, p_combined, rejected.
inline void write_scan_table(std::ostream& out, const ScanResult& res) {
  out << "window\tfirst_id\tmid_id\tlast_id\tposition";
  for (std::size_t c = 0; c < res.cohorts.size(); ++c) out << "\tp_cohort_" << c + 1;
  out << "\tp_combined\trejected\n";
  for (const auto& r : res.rows) {
    out << r.window << '\t' << r.first.id << '\t' << r.mid.id << '\t' << r.last.id << '\t' << r.mid.position;
    for (double p : r.p_cohort) out << '\t' << text::format_double(p);
    out << '\t' << text::format_double(r.p_combined) << '\t' << (r.rejected ? 1 : 0) << '\n';
  }
}

/// Plot data: mid-marker position, -log10 combined p, rejection flag and the
/// -log10 BH cutoff. Failed windows are omitted.
inline void emit_manhattan(std::ostream& out, const ScanResult& res) {
  if (res.rows.empty()) throw InputError("no scan results to plot");
  const double line = -std::log10(res.threshold);
  out << "chromosome\tposition\tneglog10_p\trejected\tthreshold\n";
  for (const auto& r : res.rows) {
    if (r.failed()) continue;
    out << r.mid.chromosome << '\t' << r.mid.position << '\t' << text::format_double(-std::log10(r.p_combined)) << '\t'
        << (r.rejected ? 1 : 0) << '\t' << text::format_double(line) << '\n';
  }
}

/// Scan settings and cohort file paths read from a key-value file:
///
///   window = 10
///   stride = 1
///   fdr = 0.1
///   threads = 1
///   max_missing = 0.05
///   min_carriers = 5
///   coding = dominant        # or raw
///
///   [cohort NAME]
///   outcome = y1.tsv         # repeat once per outcome
///   genotypes = geno.tsv
///   markers = map.tsv
///   covariates = cov.tsv     # optional; intercept only when absent
///   min_observations = 2
///   scores = blup            # or refit
///   fve = 0.99
///   grid = 51
///   domain = 0 10            # optional; pooled time range when absent
///
/// Blank lines and text after '#' are ignored. Relative paths are resolved
/// against the directory holding the file.
struct CohortFiles {
  std::string name;
  std::vector<std::string> outcomes;
  std::string genotypes, markers, covariates;
  std::size_t min_observations = 1;
  ScoreKind score_kind = ScoreKind::blup;
  double fve = 0.99;
  std::size_t grid_points = 51;
  std::optional<Interval> domain;
};

struct ScanConfig {
  ScanOptions options;
  std::vector<CohortFiles> cohorts;
};

namespace detail {

inline double config_number(const std::string& key, const std::string& value, int line) {
  const auto v = text::parse_double(value);
  if (!v || !std::isfinite(*v))
    throw InputError("config line " + std::to_string(line) + ": '" + key + "' needs a number, got '" + value + "'");
  return *v;
}

inline std::size_t config_count(const std::string& key, const std::string& value, int line) {
  const double v = config_number(key, value, line);
  if (v < 0.0 || v != std::floor(v))
    throw InputError("config line " + std::to_string(line) + ": '" + key + "' needs a nonnegative integer");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline ScanConfig parse_scan_config(std::istream& in, const std::filesystem::path& base = {}) {
  ScanConfig cfg;
  std::string raw;
  int line_no = 0;
  CohortFiles* cohort = nullptr;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_absolute() || base.empty() ? path : base / path).string();
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError(where + ": unterminated section header");
      const auto inner = text::trim(line.substr(1, line.size() - 2));
      if (!inner.starts_with("cohort")) throw InputError(where + ": unknown section '" + std::string(inner) + "'");
      auto name = std::string(text::trim(inner.substr(6)));
      if (name.empty()) name = "cohort" + std::to_string(cfg.cohorts.size() + 1);
      for (const auto& c : cfg.cohorts)
        if (c.name == name) throw InputError(where + ": duplicate cohort '" + name + "'");
      cfg.cohorts.push_back({});
      cohort = &cfg.cohorts.back();
      cohort->name = name;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw InputError(where + ": expected key = value");
    const std::string key(text::trim(line.substr(0, eq)));
    const std::string value(text::trim(line.substr(eq + 1)));
    if (!cohort) {
      auto& o = cfg.options;
      if (key == "window") o.window = detail::config_count(key, value, line_no);
      else if (key == "stride") o.stride = detail::config_count(key, value, line_no);
      else if (key == "fdr") o.fdr = detail::config_number(key, value, line_no);
      else if (key == "threads") o.threads = detail::config_count(key, value, line_no);
      else if (key == "max_missing") o.max_missing_rate = detail::config_number(key, value, line_no);
      else if (key == "min_carriers") o.min_carriers = detail::config_count(key, value, line_no);
      else if (key == "coding") {
        if (value != "dominant" && value != "raw") throw InputError(where + ": coding must be dominant or raw");
        o.dominant = value == "dominant";
      } else throw InputError(where + ": unknown key '" + key + "'");
      continue;
    }
    if (key == "outcome") cohort->outcomes.push_back(resolve(value));
    else if (key == "genotypes") cohort->genotypes = resolve(value);
    else if (key == "markers") cohort->markers = resolve(value);
    else if (key == "covariates") cohort->covariates = resolve(value);
    else if (key == "min_observations") cohort->min_observations = detail::config_count(key, value, line_no);
    else if (key == "fve") cohort->fve = detail::config_number(key, value, line_no);
    else if (key == "grid") cohort->grid_points = detail::config_count(key, value, line_no);
    else if (key == "scores") {
      if (value != "blup" && value != "refit") throw InputError(where + ": scores must be blup or refit");
      cohort->score_kind = value == "blup" ? ScoreKind::blup : ScoreKind::refit;
    } else if (key == "domain") {
      std::istringstream ss(value);
      Interval d;
      if (!(ss >> d.lo >> d.hi) || !(d.hi > d.lo)) throw InputError(where + ": domain needs two increasing numbers");
      cohort->domain = d;
    } else throw InputError(where + ": unknown key '" + key + "'");
  }
  cfg.options.validate();
  if (cfg.cohorts.empty()) throw InputError("scan config lists no cohorts");
  for (const auto& c : cfg.cohorts) {
    if (c.outcomes.empty()) throw InputError("cohort '" + c.name + "' lists no outcome files");
    if (c.genotypes.empty() || c.markers.empty())
      throw InputError("cohort '" + c.name + "' needs genotypes and markers files");
  }
  return cfg;
}

inline ScanConfig load_scan_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scan config '" + path + "'");
  return parse_scan_config(in, std::filesystem::path(path).parent_path());
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

/// Reads every file a config names.
inline std::vector<CohortInput> load_cohorts(const ScanConfig& cfg) {
  std::vector<CohortInput> out;
  for (const auto& c : cfg.cohorts) {
    CohortInput in;
    in.name = c.name;
    LongFormatSchema schema;
    schema.domain = c.domain;
    for (const auto& path : c.outcomes) {
      auto f = open_input(path);
      in.outcomes.push_back(load_long_format(f, schema, std::filesystem::path(path).stem().string()));
    }
    auto map_file = open_input(c.markers);
    const auto map = load_marker_map(map_file);
    auto geno_file = open_input(c.genotypes);
    in.genotypes = load_genotypes(geno_file, map);
    if (!c.covariates.empty()) {
      auto cov_file = open_input(c.covariates);
      in.covariates = load_covariates(cov_file);
    }
    in.fpca.fve = c.fve;
    in.fpca.grid_points = c.grid_points;
    in.score_kind = c.score_kind;
    in.min_observations = c.min_observations;
    out.push_back(std::move(in));
  }
  return out;
}

}  // namespace fpvc
