// fpvc command-line interface.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpvc/fpvc.hpp"

namespace {

using namespace fpvc;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

/// Writes to `path`, or stdout for "-".
class Output {
public:
  explicit Output(const std::string& path) {
    if (path != "-") {
      file_.open(path);
      if (!file_) throw InputError("cannot write '" + path + "'");
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
  std::ofstream file_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& f : text::split(s, ','))
    if (auto t = std::string(text::trim(f)); !t.empty()) out.push_back(t);
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& f : split_list(s)) {
    std::istringstream ss(f);
    T v{};
    if (!(ss >> v) || !ss.eof()) throw InputError(std::string("bad ") + what + " value '" + f + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError(std::string("no ") + what + " values given");
  return out;
}

LongitudinalDataset read_outcome(const std::string& path, std::size_t min_obs, const std::vector<double>& domain) {
  LongFormatSchema schema;
  if (domain.size() == 2) schema.domain = Interval{domain[0], domain[1]};
  auto in = open_in(path);
  auto ds = load_long_format(in, schema, std::filesystem::path(path).stem().string());
  return min_obs > 1 ? filter_min_observations(ds, min_obs) : ds;
}

/// Genotypes ordered by the map, or by header order when no map is given.
GenotypeMatrix read_genotypes(const std::string& path, const std::string& map_path) {
  std::vector<Marker> map;
  if (!map_path.empty()) {
    auto m = open_in(map_path);
    map = load_marker_map(m);
  } else {
    auto g = open_in(path);
    std::string header;
    std::getline(g, header);
    const auto cols = text::split(header, text::detect_delimiter(header));
    for (std::size_t c = 1; c < cols.size(); ++c) map.push_back({cols[c], "0", static_cast<long long>(c)});
  }
  auto g = open_in(path);
  return load_genotypes(g, map);
}

/// Marker ids, or 1-based column numbers for tokens that are not ids.
std::vector<std::size_t> resolve_set(const GenotypeMatrix& g, const std::string& set) {
  std::vector<std::size_t> cols;
  for (const auto& tok : split_list(set)) {
    if (auto j = g.marker_index(tok)) {
      cols.push_back(*j);
      continue;
    }
    std::size_t k = 0;
    std::istringstream ss(tok);
    if (ss >> k && ss.eof() && k >= 1 && k <= g.marker_count()) {
      cols.push_back(k - 1);
      continue;
    }
    throw InputError("marker '" + tok + "' not found");
  }
  if (cols.empty()) throw InputError("empty marker set");
  std::sort(cols.begin(), cols.end());
  if (std::adjacent_find(cols.begin(), cols.end()) != cols.end()) throw InputError("marker set lists a marker twice");
  return cols;
}

ScoreKind parse_kind(const std::string& s) {
  if (s == "blup") return ScoreKind::blup;
  if (s == "refit") return ScoreKind::refit;
  throw InputError("score kind must be blup or refit");
}

void write_scores(std::ostream& out, const ScoreMatrix& sm) {
  out << "subject_id";
  for (Eigen::Index k = 0; k < sm.K(); ++k) out << "\txi_" << k + 1;
  out << '\n';
  for (std::size_t i = 0; i < sm.size(); ++i) {
    out << sm.ids[i];
    for (Eigen::Index k = 0; k < sm.K(); ++k) out << '\t' << text::format_double(sm.scores(static_cast<Eigen::Index>(i), k));
    out << '\n';
  }
}

ScoreMatrix compute_scores(const FpcaModel& model, const LongitudinalDataset& ds, ScoreKind kind) {
  return kind == ScoreKind::blup ? blup_scores(model, ds) : refit_scores(model, ds).first;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional principal variance component testing for longitudinal outcomes"};
  app.require_subcommand(1);

  // fpca
  auto* fpca = app.add_subcommand("fpca", "Fit the functional principal component model of one outcome");
  std::string fpca_outcome, fpca_out = "-";
  double fpca_fve = 0.99;
  std::size_t fpca_grid = 51, fpca_min_obs = 1;
  std::vector<double> fpca_domain;
  bool fpca_raw = false;
  fpca->add_option("--outcome", fpca_outcome, "Long-format outcome file (subject_id, time, value)")->required();
  fpca->add_option("--fve", fpca_fve, "Fraction of variance explained used to choose K")->check(CLI::Range(0.0, 1.0));
  fpca->add_option("--grid", fpca_grid, "Evaluation grid size")->check(CLI::Range(21, 100000));
  fpca->add_option("--min-obs", fpca_min_obs, "Drop subjects with fewer observations");
  fpca->add_option("--domain", fpca_domain, "Time interval lo hi (default: pooled range)")->expected(2);
  fpca->add_option("--out", fpca_out, "Model file ('-' for stdout)");
  fpca->add_flag("--no-standardize", fpca_raw, "Fit on the raw outcome scale");

  // scores
  auto* scores = app.add_subcommand("scores", "Estimate per-subject principal component scores");
  std::string sc_model, sc_outcome, sc_kind = "blup", sc_out = "-";
  std::size_t sc_min_obs = 1;
  scores->add_option("--model", sc_model, "Model file written by 'fpca'")->required();
  scores->add_option("--outcome", sc_outcome, "Long-format outcome file")->required();
  scores->add_option("--kind", sc_kind, "blup or refit")->check(CLI::IsMember({"blup", "refit"}));
  scores->add_option("--min-obs", sc_min_obs, "Drop subjects with fewer observations");
  scores->add_option("--out", sc_out, "Output TSV ('-' for stdout)");

  // test
  auto* test = app.add_subcommand("test", "Test one marker set against one or more outcomes");
  std::vector<std::string> t_models, t_outcomes;
  std::string t_geno, t_map, t_covar, t_set, t_kind = "blup", t_coding = "dominant", t_nuisance, t_out = "-";
  std::size_t t_min_obs = 1;
  test->add_option("--model", t_models, "Model file per outcome")->required();
  test->add_option("--outcome", t_outcomes, "Outcome file per model, same order")->required();
  test->add_option("--geno", t_geno, "Genotype file (subject_id then one column per marker)")->required();
  test->add_option("--map", t_map, "Marker map (marker_id, chromosome, position)");
  test->add_option("--covar", t_covar, "Covariate file (subject_id, x1..xq); intercept only when omitted");
  test->add_option("--set", t_set, "Comma-separated marker ids or 1-based column numbers")->required();
  test->add_option("--kind", t_kind, "Score estimator: blup or refit")->check(CLI::IsMember({"blup", "refit"}));
  test->add_option("--coding", t_coding, "dominant or raw")->check(CLI::IsMember({"dominant", "raw"}));
  test->add_option("--nuisance", t_nuisance, "empirical, logistic or binomial (default from coding)")
      ->check(CLI::IsMember({"empirical", "logistic", "binomial"}));
  test->add_option("--min-obs", t_min_obs, "Drop subjects with fewer observations");
  test->add_option("--out", t_out, "Output TSV ('-' for stdout)");

  // scan
  auto* scan = app.add_subcommand("scan", "Sliding-window scan over one or more cohorts");
  std::string s_config, s_out = "-", s_manhattan;
  std::size_t s_threads = 0;
  bool s_threads_set = false;
  scan->add_option("--config", s_config, "Scan configuration file")->required();
  scan->add_option("--out", s_out, "Results TSV ('-' for stdout)");
  scan->add_option("--manhattan", s_manhattan, "Also write Manhattan plot data here");
  scan->add_option("--threads", s_threads, "Worker threads (0 = all cores); overrides the config")
      ->each([&](const std::string&) { s_threads_set = true; });

  // simulate
  auto* sim = app.add_subcommand("simulate", "Type-I error and power experiments on the simulation design");
  std::string m_alpha = "0", m_gamma = "1", m_beta = "0", m_n = "200", m_methods = "fpvc,linear", m_out = "-",
              m_pvalues;
  std::size_t m_reps = 1000, m_threads = 0;
  std::uint64_t m_seed = 1;
  double m_level = 0.05, m_maf = 0.1, m_lambda = 6.0;
  sim->add_option("--alpha", m_alpha, "Comma-separated alpha values");
  sim->add_option("--gamma", m_gamma, "Comma-separated gamma values");
  sim->add_option("--beta", m_beta, "Comma-separated beta values");
  sim->add_option("--n", m_n, "Comma-separated sample sizes");
  sim->add_option("--reps", m_reps, "Replicates per cell");
  sim->add_option("--seed", m_seed, "Master seed");
  sim->add_option("--methods", m_methods, "Comma-separated: fpvc, refit, linear, bspline, poly");
  sim->add_option("--level", m_level, "Test level")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--maf", m_maf, "Minor allele frequency");
  sim->add_option("--lambda", m_lambda, "Poisson rate of extra visits");
  sim->add_option("--threads", m_threads, "Worker threads (0 = all cores)");
  sim->add_option("--out", m_out, "Summary TSV ('-' for stdout)");
  sim->add_option("--pvalues", m_pvalues, "Also write every replicate's p-values here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fpca) {
      const auto ds = read_outcome(fpca_outcome, fpca_min_obs, fpca_domain);
      FpcaConfig cfg;
      cfg.fve = fpca_fve;
      cfg.grid_points = fpca_grid;
      cfg.standardize = !fpca_raw;
      const auto model = fit_fpca(ds, cfg);
      Output out(fpca_out);
      save_model(out.stream(), model);
      std::cerr << "K = " << model.K() << ", sigma2 = " << model.sigma2 << (fpca_raw ? "\n" : " (standardized scale)\n");
    } else if (*scores) {
      auto in = open_in(sc_model);
      const auto model = load_model(in);
      const auto ds = read_outcome(sc_outcome, sc_min_obs, {});
      Output out(sc_out);
      write_scores(out.stream(), compute_scores(model, ds, parse_kind(sc_kind)));
    } else if (*test) {
      if (t_models.size() != t_outcomes.size()) throw InputError("give one --outcome per --model");
      std::vector<ScoreMatrix> sms;
      for (std::size_t m = 0; m < t_models.size(); ++m) {
        auto in = open_in(t_models[m]);
        const auto model = load_model(in);
        sms.push_back(compute_scores(model, read_outcome(t_outcomes[m], t_min_obs, {}), parse_kind(t_kind)));
      }
      auto g = read_genotypes(t_geno, t_map);
      g = g.select_markers(resolve_set(g, t_set));
      const bool dominant = t_coding == "dominant";
      if (dominant) g = dominant_code(g);
      g = impute_missing(g);
      CovariateMatrix x;
      if (!t_covar.empty()) {
        auto in = open_in(t_covar);
        x = load_covariates(in);
      } else {
        x = CovariateMatrix::intercept_only(g.ids());
      }
      NuisanceKind kind = default_nuisance_kind(dominant);
      if (t_nuisance == "empirical") kind = NuisanceKind::empirical;
      else if (t_nuisance == "logistic") kind = NuisanceKind::logistic;
      else if (t_nuisance == "binomial") kind = NuisanceKind::binomial;
      const auto r = fpvc_test(sms, g, x, kind);
      Output out(t_out);
      auto& o = out.stream();
      o << "Q\tp_value\ttail\tn\ts\tK\tdegenerate\n";
      std::string ks;
      for (auto k : r.K) ks += (ks.empty() ? "" : ",") + std::to_string(k);
      o << text::format_double(r.Q) << '\t' << text::format_double(r.p_value) << '\t'
        << (r.method == TailMethod::cf_inversion ? "davies" : "liu") << '\t' << r.n << '\t' << r.s << '\t' << ks << '\t'
        << (r.degenerate ? 1 : 0) << '\n';
    } else if (*scan) {
      auto cfg = load_scan_config(s_config);
      if (s_threads_set) cfg.options.threads = s_threads;
      const auto res = run_scan(load_cohorts(cfg), cfg.options);
      Output out(s_out);
      write_scan_table(out.stream(), res);
      if (!s_manhattan.empty()) {
        Output plot(s_manhattan);
        emit_manhattan(plot.stream(), res);
      }
      std::cerr << res.rows.size() << " windows over " << res.markers << " markers, " << res.rejected
                << " rejected at FDR " << cfg.options.fdr << ", " << res.failed << " failed\n";
    } else if (*sim) {
      std::vector<SimMethod> methods;
      for (const auto& m : split_list(m_methods)) methods.push_back(parse_sim_method(m));
      if (methods.empty()) throw InputError("no methods given");
      const auto alphas = parse_list<double>(m_alpha, "alpha");
      const auto gammas = parse_list<double>(m_gamma, "gamma");
      const auto betas = parse_list<double>(m_beta, "beta");
      const auto ns = parse_list<std::size_t>(m_n, "n");
      SimOptions opt;
      opt.threads = m_threads;
      Output out(m_out);
      auto& o = out.stream();
      o << "alpha\tgamma\tbeta\tn\tmethod\treps\tfailures\trejections\trate\tse\n";
      std::optional<Output> pv;
      if (!m_pvalues.empty()) {
        pv.emplace(m_pvalues);
        pv->stream() << "alpha\tgamma\tbeta\tn\tmethod\treplicate\tp_value\n";
      }
      for (double a : alphas)
        for (double gm : gammas)
          for (double b : betas)
            for (auto n : ns) {
              SimConfig cfg;
              cfg.alpha = a;
              cfg.gamma = gm;
              cfg.beta = b;
              cfg.n = n;
              cfg.n_reps = m_reps;
              cfg.seed = m_seed;
              cfg.level = m_level;
              cfg.maf = m_maf;
              cfg.lambda_pois = m_lambda;
              const auto res = run_experiment(cfg, methods, opt);
              for (std::size_t k = 0; k < methods.size(); ++k) {
                const auto& s = res.summary[k];
                const std::string cell = text::format_double(a) + '\t' + text::format_double(gm) + '\t' +
                                         text::format_double(b) + '\t' + std::to_string(n) + '\t' + to_string(methods[k]);
                o << cell << '\t' << s.replicates << '\t' << s.failures << '\t' << s.rejections << '\t'
                  << text::format_double(s.rate) << '\t' << text::format_double(s.se) << '\n';
                if (pv)
                  for (std::size_t r = 0; r < res.pvalues[k].size(); ++r)
                    pv->stream() << cell << '\t' << r << '\t' << text::format_double(res.pvalues[k][r]) << '\n';
              }
            }
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
