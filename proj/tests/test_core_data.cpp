#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fpvc/data.hpp"
#include "fpvc/log.hpp"
#include "support.hpp"

using namespace fpvc;
using testing_support::Rng;

namespace {

const double NA = std::numeric_limits<double>::quiet_NaN();

std::vector<Marker> markers(std::size_t p) {
  std::vector<Marker> m;
  for (std::size_t j = 0; j < p; ++j) m.push_back({"m" + std::to_string(j), "1", static_cast<long long>(100 * (j + 1))});
  return m;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing_support::subject_id(i));
  return out;
}

GenotypeMatrix column(std::vector<double> v, GenotypeCoding coding = GenotypeCoding::raw) {
  Eigen::MatrixXd g = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return GenotypeMatrix(ids(v.size()), markers(1), g, coding);
}

}  // namespace

TEST(LoadLongFormat, SortsTimesWithinSubject) {
  std::istringstream in("subject_id,time,value\na,0.1,1\na,0.5,2\na,0.3,3\n");
  const auto ds = load_long_format(in);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.subject(0).times, (std::vector<double>{0.1, 0.3, 0.5}));
  EXPECT_EQ(ds.subject(0).values, (std::vector<double>{1, 3, 2}));
}

TEST(LoadLongFormat, BadValueNamesLine) {
  std::istringstream in("subject_id\ttime\tvalue\na\t0.1\t1\na\t0.2\tabc\n");
  try {
    load_long_format(in);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadLongFormat, EmptyAndHeaderOnly) {
  std::istringstream empty("");
  EXPECT_THROW(load_long_format(empty), InputError);
  std::istringstream header("subject_id,time,value\n");
  EXPECT_THROW(load_long_format(header), InputError);
}

TEST(LoadLongFormat, DuplicateTimesKept) {
  std::istringstream in("subject_id,time,value\na,1,1\na,1,2\na,2,0\n");
  EXPECT_EQ(load_long_format(in).subject(0).size(), 3u);
}

TEST(LoadLongFormat, ManySubjectsWithTwoRows) {
  std::ostringstream out;
  out << "subject_id,time,value\n";
  for (int i = 0; i < 838; ++i)
    for (int r = 0; r < 2 + i % 3; ++r) out << "s" << i << ',' << r << ',' << i + r << '\n';
  std::istringstream in(out.str());
  const auto ds = load_long_format(in);
  EXPECT_EQ(ds.size(), 838u);
  EXPECT_EQ(filter_min_observations(ds, 2).size(), 838u);
}

TEST(LoadLongFormat, RowOrderDoesNotMatter) {
  Rng rng(11);
  std::vector<std::string> rows;
  std::uniform_real_distribution<double> u(0, 10);
  for (int i = 0; i < 40; ++i)
    for (int r = 0; r < 1 + i % 4; ++r) {
      std::ostringstream line;
      line.precision(17);
      line << "id" << i << ',' << u(rng) << ',' << u(rng);
      rows.push_back(line.str());
    }
  rows.push_back("id3,1.5,2");
  rows.push_back("id3,1.5,-2");
  auto load = [&](const std::vector<std::string>& r) {
    std::string text = "subject_id,time,value\n";
    for (const auto& s : r) text += s + "\n";
    std::istringstream in(text);
    return load_long_format(in);
  };
  const auto reference = load(rows);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(load(rows), reference);
  }
}

TEST(Dataset, RejectsBadInput) {
  EXPECT_THROW(LongitudinalDataset("y", {}), InputError);
  EXPECT_THROW(LongitudinalDataset("y", {{"a", {0.0}, {1.0}}, {"a", {1.0}, {1.0}}}), InputError);
  EXPECT_THROW(LongitudinalDataset("y", {{"a", {0.0, 1.0}, {1.0}}}), InputError);
  EXPECT_THROW(LongitudinalDataset("y", {{"a", {0.0, 3.0}, {1.0, 1.0}}}, Interval{0, 2}), InputError);
}

TEST(FilterMinObservations, KeepsLongEnough) {
  LongitudinalDataset ds("y", {{"a", {0}, {1}}, {"b", {0, 1}, {1, 2}}, {"c", {0, 1, 2, 3, 4}, {1, 2, 3, 4, 5}}});
  const auto f = filter_min_observations(ds, 2);
  EXPECT_EQ(f.ids(), (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(filter_min_observations(ds, 1), ds);
  EXPECT_THROW(filter_min_observations(ds, 6), InputError);
  EXPECT_THROW(filter_min_observations(ds, 0), InputError);
}

TEST(FilterMinObservations, AllRetained) {
  std::vector<Subject> s;
  for (int i = 0; i < 449; ++i) s.push_back({"s" + std::to_string(i), {0.0, 1.0}, {0.0, 1.0}});
  EXPECT_EQ(filter_min_observations(LongitudinalDataset("y", s), 2).size(), 449u);
}

TEST(DominantCode, Definition) {
  const auto d = dominant_code(column({0, 1, 2, NA}));
  EXPECT_EQ(d.coding(), GenotypeCoding::dominant);
  EXPECT_EQ(d.values()(0, 0), 0.0);
  EXPECT_EQ(d.values()(1, 0), 1.0);
  EXPECT_EQ(d.values()(2, 0), 1.0);
  EXPECT_TRUE(std::isnan(d.values()(3, 0)));
  EXPECT_THROW(dominant_code(d), InputError);
  EXPECT_TRUE(dominant_code(column({0, 0, 0})).values().isZero());
}

TEST(DominantCode, MatchesElementwiseMap) {
  Rng rng(3);
  const auto raw = testing_support::genotype_matrix(rng, 50, 20, 0.3);
  const GenotypeMatrix g(ids(50), markers(20), raw);
  const auto d = dominant_code(g);
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    for (Eigen::Index i = 0; i < raw.rows(); ++i) EXPECT_EQ(d.values()(i, j), raw(i, j) >= 1.0 ? 1.0 : 0.0);
}

TEST(ImputeMissing, CarrierFrequencyUnderDominant) {
  const auto g = impute_missing(column({1, 0, NA, 1}, GenotypeCoding::dominant));
  EXPECT_DOUBLE_EQ(g.values()(2, 0), 2.0 / 3.0);
  EXPECT_TRUE(g.imputed());
}

TEST(ImputeMissing, AlleleFrequencyUnderRaw) {
  const auto g = impute_missing(column({0, 2, NA}));
  EXPECT_DOUBLE_EQ(g.values()(2, 0), 0.5);
}

TEST(ImputeMissing, IdentityWithoutMissing) {
  const auto g = column({0, 1, 2, 1});
  EXPECT_EQ(impute_missing(g).values(), g.values());
}

TEST(ImputeMissing, AllMissingNamesMarker) {
  try {
    impute_missing(column({NA, NA}));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("m0"), std::string::npos);
  }
}

TEST(QcFilter, Boundaries) {
  // 100 subjects: marker 0 has 6 missing, marker 1 has exactly 5 carriers,
  // marker 2 has 4 carriers, marker 3 has 5% missing exactly (not below).
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(100, 4);
  for (int i = 0; i < 6; ++i) g(i, 0) = NA;
  for (int i = 10; i < 30; ++i) g(i, 0) = 1;
  for (int i = 0; i < 5; ++i) g(i, 1) = 2;
  for (int i = 0; i < 4; ++i) g(i, 2) = 1;
  for (int i = 0; i < 5; ++i) g(i, 3) = NA;
  for (int i = 10; i < 30; ++i) g(i, 3) = 1;
  log::ScopedSilence quiet;
  const auto res = qc_filter(GenotypeMatrix(ids(100), markers(4), g), 0.05, 5);
  EXPECT_EQ(res.dropped, 3u);
  ASSERT_EQ(res.genotypes.marker_count(), 1u);
  EXPECT_EQ(res.genotypes.markers()[0].id, "m1");
}

TEST(QcFilter, PlantedPassCount) {
  // Planted bookkeeping: 155,007 markers, 108,665 of which pass.
  const std::size_t p = 155007, pass = 108665, n = 6;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    if (j < pass) g.col(c).head(5).setOnes();
    else if (j % 2 == 0) g.col(c).head(4).setOnes();
    else g(0, c) = NA, g.col(c).tail(5).setOnes();
  }
  std::vector<Marker> m(p);
  for (std::size_t j = 0; j < p; ++j) m[j] = {"m" + std::to_string(j), "1", static_cast<long long>(j)};
  const auto res = qc_filter(GenotypeMatrix(ids(n), std::move(m), std::move(g)), 0.05, 5);
  EXPECT_EQ(res.genotypes.marker_count(), pass);
  EXPECT_EQ(res.dropped, p - pass);
}

TEST(GenotypePipeline, EntriesInUnitInterval) {
  Rng rng(17);
  std::bernoulli_distribution miss(0.03);
  log::ScopedSilence quiet;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd raw = testing_support::genotype_matrix(rng, 80, 15, 0.05 + 0.02 * rep);
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
      for (Eigen::Index i = 0; i < raw.rows(); ++i)
        if (miss(rng)) raw(i, j) = NA;
    const auto qc = qc_filter(GenotypeMatrix(ids(80), markers(15), raw), 0.05, 5);
    if (qc.genotypes.marker_count() == 0) continue;
    const auto g = impute_missing(dominant_code(qc.genotypes));
    EXPECT_TRUE(g.values().allFinite());
    EXPECT_GE(g.values().minCoeff(), 0.0);
    EXPECT_LE(g.values().maxCoeff(), 1.0);
  }
}

TEST(LoadGenotypes, OrdersByMapAndReadsMissing) {
  std::istringstream map("marker_id\tchromosome\tposition\nb\t1\t200\na\t1\t100\nc\t2\t5\n");
  std::istringstream geno("subject_id\tc\tb\ta\ns1\t0\t1\tNA\ns2\t2\t0\t1\n");
  const auto g = load_genotypes(geno, load_marker_map(map));
  ASSERT_EQ(g.marker_count(), 3u);
  EXPECT_EQ(g.markers()[0].id, "a");
  EXPECT_EQ(g.markers()[2].id, "c");
  EXPECT_TRUE(std::isnan(g.values()(0, 0)));
  EXPECT_EQ(g.values()(1, 2), 2.0);
}

TEST(LoadGenotypes, UnknownMarker) {
  std::istringstream map("marker_id,chromosome,position\na,1,1\n");
  std::istringstream geno("subject_id,z\ns1,0\n");
  EXPECT_THROW(load_genotypes(geno, load_marker_map(map)), InputError);
}

TEST(MarkerOrder, NumericChromosomes) {
  EXPECT_TRUE(marker_before({"a", "2", 500}, {"b", "10", 1}));
  EXPECT_TRUE(marker_before({"a", "chr1", 5}, {"b", "1", 6}));
  EXPECT_FALSE(marker_before({"a", "X", 1}, {"b", "22", 1}));
}

TEST(Covariates, LoadDropsMissing) {
  std::istringstream in("subject_id,age,sex\na,30,1\nb,NA,0\nc,40,0\n");
  std::vector<std::string> warnings;
  auto prev = log::set_sink([&](const std::string& m) { warnings.push_back(m); });
  const auto x = load_covariates(in);
  log::set_sink(prev);
  EXPECT_EQ(x.ids(), (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(x.values().cols(), 3);
  EXPECT_EQ(x.values()(1, 1), 40.0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Covariates, InterceptRequired) {
  EXPECT_THROW(CovariateMatrix({"a"}, {"x"}, Eigen::MatrixXd::Constant(1, 1, 2.0)), InputError);
  EXPECT_EQ(CovariateMatrix::intercept_only({"a", "b"}).values(), Eigen::MatrixXd::Ones(2, 1));
}

TEST(Standardize, SimpleValues) {
  LongitudinalDataset ds("y", {{"a", {0, 1}, {1, 2}}, {"b", {0.5}, {3}}});
  const auto [z, sc] = standardize_outcome(ds);
  EXPECT_DOUBLE_EQ(sc.mean, 2.0);
  EXPECT_DOUBLE_EQ(sc.sd, 1.0);
  const auto again = pooled_scaling(z);
  EXPECT_NEAR(again.mean, 0.0, 1e-15);
  EXPECT_NEAR(again.sd, 1.0, 1e-15);
}

TEST(Standardize, ConstantRejected) {
  LongitudinalDataset ds("y", {{"a", {0, 1}, {4, 4}}});
  EXPECT_THROW(standardize_outcome(ds), InputError);
}

TEST(Standardize, RoundTripAndComparableScales) {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const double scale = std::pow(10.0, rep - 5);
    const auto ds = testing_support::random_dataset(rng, 30, 4, 0, 1, [&](std::size_t, double t, Rng& g) {
      return scale * (100.0 + t + std::normal_distribution<double>(0, 1)(g));
    });
    const auto [z, sc] = standardize_outcome(ds);
    const auto moments = pooled_scaling(z);
    EXPECT_NEAR(moments.mean, 0.0, 1e-12);
    EXPECT_NEAR(moments.sd, 1.0, 1e-12);
    const auto back = invert_scaling(z, sc);
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t r = 0; r < ds.subject(i).size(); ++r) {
        const double v = ds.subject(i).values[r];
        EXPECT_LE(std::abs(back.subject(i).values[r] - v), 1e-12 * std::abs(v));
      }
  }
}

TEST(IntersectIds, Sorted) {
  EXPECT_EQ(intersect_ids({{"c", "a", "b"}, {"b", "c", "d"}}), (std::vector<std::string>{"b", "c"}));
  EXPECT_TRUE(intersect_ids({}).empty());
}
