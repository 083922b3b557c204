#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fpvc/scan.hpp"
#include "fpvc/sim.hpp"
#include "support.hpp"

using namespace fpvc;

namespace {

CohortInput small_cohort(std::uint64_t seed, std::size_t markers, std::string name = "c") {
  ScanSimConfig cfg;
  cfg.base.n = 150;
  cfg.base.gamma = 1.0;
  cfg.base.maf = 0.3;
  cfg.markers = markers;
  return simulate_scan_cohort(cfg, seed, std::move(name));
}

std::string table(const ScanResult& r) {
  std::ostringstream out;
  write_scan_table(out, r);
  return out.str();
}

}  // namespace

TEST(MakeWindows, Counts) {
  EXPECT_EQ(make_windows(12, 10, 1).size(), 3u);
  EXPECT_EQ(make_windows(108665, 10, 1).size(), 108656u);
  EXPECT_EQ(make_windows(10, 10, 1).size(), 1u);
  for (std::size_t p : {1u, 7u, 30u}) {
    const auto w = make_windows(p, 1, 1);
    ASSERT_EQ(w.size(), p);
    for (std::size_t j = 0; j < p; ++j) {
      EXPECT_EQ(w[j].first, j);
      EXPECT_EQ(w[j].size, 1u);
    }
  }
  for (std::size_t stride : {1u, 2u, 3u, 7u}) EXPECT_EQ(make_windows(40, 6, stride).size(), (40 - 6) / stride + 1);
  EXPECT_THROW(make_windows(5, 10, 1), InputError);
  EXPECT_THROW(make_windows(20, 0, 1), InputError);
  EXPECT_THROW(make_windows(20, 5, 0), InputError);
}

TEST(MakeWindows, CoverEveryMarker) {
  for (std::size_t p = 10; p < 60; p += 7)
    for (std::size_t s = 1; s <= 10; s += 3) {
      std::vector<int> hits(p, 0);
      for (const auto& w : make_windows(p, s, 1)) {
        EXPECT_LE(w.first + w.size, p);
        for (std::size_t j = w.first; j < w.first + w.size; ++j) ++hits[j];
      }
      for (int h : hits) EXPECT_GE(h, 1);
    }
}

TEST(RunScan, SingleWindowMatchesDirectTest) {
  const auto cohort = small_cohort(11, 10);
  ScanOptions opt;
  const auto res = run_scan({cohort}, opt);
  ASSERT_EQ(res.rows.size(), 1u);
  const auto& row = res.rows[0];
  EXPECT_EQ(row.window, 1u);
  EXPECT_EQ(row.first.id, "m00001");
  EXPECT_EQ(row.mid.id, "m00005");
  EXPECT_EQ(row.last.id, "m00010");

  std::vector<ScoreMatrix> scores;
  for (const auto& ds : cohort.outcomes) scores.push_back(blup_scores(fit_fpca(ds), ds));
  const auto g = impute_missing(dominant_code(cohort.genotypes));
  const auto direct = fpvc_test(scores, g, CovariateMatrix::intercept_only(g.ids()), NuisanceKind::logistic);
  EXPECT_NEAR(row.p_cohort[0], direct.p_value, 1e-12);
  EXPECT_NEAR(row.p_combined, row.p_cohort[0], 1e-12 * std::max(row.p_cohort[0], 1e-3));
}

TEST(RunScan, IdenticalCohortsFisherRelation) {
  ScanOptions opt;
  opt.window = 3;
  const auto res = run_scan({small_cohort(12, 40, "a"), small_cohort(12, 40, "b")}, opt);
  ASSERT_EQ(res.rows.size(), 38u);
  int below = 0;
  for (const auto& r : res.rows) {
    ASSERT_FALSE(r.failed());
    EXPECT_EQ(r.p_cohort[0], r.p_cohort[1]);
    const double p = r.p_cohort[0];
    const double x = -4 * std::log(p);
    EXPECT_NEAR(r.p_combined, std::exp(-x / 2) * (1 + x / 2), 1e-10);
    if (p < 0.28) {
      EXPECT_LE(r.p_combined, p);
      ++below;
    }
    if (p > 0.29) EXPECT_GT(r.p_combined, p);
  }
  EXPECT_GT(below, 0);
}

TEST(RunScan, ThreadCountDoesNotChangeOutput) {
  const std::vector<CohortInput> cohorts{small_cohort(13, 30, "a"), small_cohort(14, 30, "b")};
  ScanOptions opt;
  opt.window = 4;
  opt.stride = 2;
  opt.threads = 1;
  const auto serial = table(run_scan(cohorts, opt));
  for (std::size_t t : {2u, 3u, 8u}) {
    opt.threads = t;
    EXPECT_EQ(table(run_scan(cohorts, opt)), serial) << t << " threads";
  }
}

TEST(RunScan, ModelsFittedOncePerOutcome) {
  ScanOptions opt;
  opt.window = 2;
  const auto res = run_scan({small_cohort(15, 25, "a"), small_cohort(16, 25, "b")}, opt);
  EXPECT_EQ(res.rows.size(), 24u);
  EXPECT_EQ(res.fpca_fits, 4u);
  EXPECT_EQ(res.score_fits, 4u);
  EXPECT_EQ(res.markers, 25u);
}

TEST(RunScan, RejectionsMatchBh) {
  ScanSimConfig cfg;
  cfg.base.n = 200;
  cfg.base.beta = 1.5;
  cfg.base.maf = 0.3;
  cfg.markers = 30;
  cfg.causal = 12;
  ScanOptions opt;
  opt.window = 3;
  opt.stride = 3;
  const auto res = run_scan({simulate_scan_cohort(cfg, 17)}, opt);
  std::vector<double> p;
  for (const auto& r : res.rows) p.push_back(r.p_combined);
  const auto bh = bh_reject(p, opt.fdr);
  EXPECT_EQ(res.threshold, bh.threshold);
  for (std::size_t w = 0; w < p.size(); ++w) EXPECT_EQ(res.rows[w].rejected, bh.rejected[w]);
  EXPECT_TRUE(res.rows[4].rejected);  // window holding marker 13

  std::ostringstream out;
  emit_manhattan(out, res);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "chromosome\tposition\tneglog10_p\trejected\tthreshold");
  std::size_t w = 0;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string chr;
    long long pos = 0;
    double nl = 0, thr = 0;
    int rej = 0;
    f >> chr >> pos >> nl >> rej >> thr;
    EXPECT_EQ(pos, res.rows[w].mid.position);
    EXPECT_NEAR(nl, -std::log10(p[w]), 1e-9 * std::max(1.0, nl));
    EXPECT_EQ(rej == 1, bh.rejected[w]);
    EXPECT_NEAR(thr, -std::log10(bh.threshold), 1e-9);
    ++w;
  }
  EXPECT_EQ(w, p.size());
}

TEST(Manhattan, HandRows) {
  ScanResult res;
  res.cohorts = {"a"};
  for (double p : {0.01, 0.5, 0.9}) {
    ScanRow r;
    r.window = res.rows.size() + 1;
    r.mid = {"m", "2", static_cast<long long>(100 * r.window)};
    r.p_cohort = {p};
    r.p_combined = p;
    res.rows.push_back(r);
  }
  std::vector<double> p{0.01, 0.5, 0.9};
  const auto bh = bh_reject(p, 0.001);
  res.threshold = bh.threshold;
  std::ostringstream out;
  emit_manhattan(out, res);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::istringstream f(line);
  std::string chr;
  long long pos;
  double nl, thr;
  int rej;
  f >> chr >> pos >> nl >> rej >> thr;
  EXPECT_EQ(chr, "2");
  EXPECT_EQ(pos, 100);
  EXPECT_NEAR(nl, 2.0, 1e-12);
  EXPECT_EQ(rej, 0);
  EXPECT_NEAR(thr, -std::log10(0.001 / 3), 1e-12);
  EXPECT_THROW(emit_manhattan(out, ScanResult{}), InputError);
}

TEST(RunScan, FailedWindowsLeaveTheFamily) {
  // marker 3 is carried exactly by the subjects with x = 1: logistic separation
  auto cohort = small_cohort(18, 8);
  const auto& ids = cohort.genotypes.ids();
  const auto n = static_cast<Eigen::Index>(ids.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::MatrixXd g = cohort.genotypes.values();
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1;
    x(i, 1) = i % 3 == 0 ? 1 : 0;
    g(i, 2) = x(i, 1);
  }
  cohort.genotypes = GenotypeMatrix(ids, cohort.genotypes.markers(), g);
  cohort.covariates = CovariateMatrix(ids, {"intercept", "x"}, x);
  ScanOptions opt;
  opt.window = 1;
  const auto res = run_scan({cohort}, opt);
  ASSERT_EQ(res.rows.size(), 8u);
  EXPECT_TRUE(res.rows[2].failed());
  EXPECT_FALSE(res.rows[2].error.empty());
  EXPECT_FALSE(res.rows[2].rejected);
  EXPECT_EQ(res.failed, 1u);
  std::vector<double> ok;
  for (const auto& r : res.rows)
    if (!r.failed()) ok.push_back(r.p_combined);
  EXPECT_EQ(res.threshold, bh_reject(ok, opt.fdr).threshold);
  EXPECT_NE(table(res).find("\tNA\tNA\t0\n"), std::string::npos);
}

TEST(ScanConfig, ParsesSectionsAndResolvesPaths) {
  std::istringstream in(R"(# scan settings
window = 5
stride = 2
fdr = 0.2
threads = 4
coding = raw

[cohort first]
outcome = y1.tsv
outcome = /abs/y2.tsv   # second outcome
genotypes = g.tsv
markers = map.tsv
covariates = x.tsv
min_observations = 2
scores = refit
fve = 0.95
grid = 41
domain = 0 10

[cohort]
outcome = y.tsv
genotypes = g2.tsv
markers = map2.tsv
)");
  const auto cfg = parse_scan_config(in, "/data/run");
  EXPECT_EQ(cfg.options.window, 5u);
  EXPECT_EQ(cfg.options.stride, 2u);
  EXPECT_EQ(cfg.options.fdr, 0.2);
  EXPECT_EQ(cfg.options.threads, 4u);
  EXPECT_FALSE(cfg.options.dominant);
  ASSERT_EQ(cfg.cohorts.size(), 2u);
  const auto& a = cfg.cohorts[0];
  EXPECT_EQ(a.name, "first");
  EXPECT_EQ(a.outcomes, (std::vector<std::string>{"/data/run/y1.tsv", "/abs/y2.tsv"}));
  EXPECT_EQ(a.genotypes, "/data/run/g.tsv");
  EXPECT_EQ(a.covariates, "/data/run/x.tsv");
  EXPECT_EQ(a.min_observations, 2u);
  EXPECT_EQ(a.score_kind, ScoreKind::refit);
  EXPECT_EQ(a.fve, 0.95);
  EXPECT_EQ(a.grid_points, 41u);
  ASSERT_TRUE(a.domain);
  EXPECT_EQ(a.domain->hi, 10.0);
  EXPECT_EQ(cfg.cohorts[1].name, "cohort2");
  EXPECT_TRUE(cfg.cohorts[1].covariates.empty());
}

TEST(ScanConfig, Errors) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_scan_config(in);
  };
  const std::string cohort = "[cohort a]\noutcome = y\ngenotypes = g\nmarkers = m\n";
  EXPECT_NO_THROW(parse(cohort));
  EXPECT_THROW(parse("window = 10\n"), InputError);
  EXPECT_THROW(parse("colour = red\n" + cohort), InputError);
  EXPECT_THROW(parse("window = ten\n" + cohort), InputError);
  EXPECT_THROW(parse("window = 0\n" + cohort), InputError);
  EXPECT_THROW(parse("fdr = 1.5\n" + cohort), InputError);
  EXPECT_THROW(parse("stride = 1.5\n" + cohort), InputError);
  EXPECT_THROW(parse(cohort + cohort), InputError);
  EXPECT_THROW(parse("[cohort a]\noutcome = y\nmarkers = m\n"), InputError);
  EXPECT_THROW(parse("[cohort a]\ngenotypes = g\nmarkers = m\n"), InputError);
  EXPECT_THROW(parse("[group a]\n"), InputError);
  EXPECT_THROW(parse(cohort + "scores = best\n"), InputError);
  try {
    parse("window = 3\nbogus\n" + cohort);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
