#include "pfa/pfa.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pfa;

namespace {

// Independent oracle: Phi(x) = 1/2 + phi(x) * sum_n x^(2n+1) / (2n+1)!!, in long double.
long double series_cdf(long double x) {
  long double term = x, sum = x;
  for (int n = 1; n < 400; ++n) {
    term *= x * x / (2 * n + 1);
    sum += term;
    if (std::fabs(term) < 1e-30L * std::fabs(sum)) break;
  }
  const long double pdf = std::exp(-0.5L * x * x) / std::sqrt(2.0L * 3.14159265358979323846264338327950288L);
  return 0.5L + pdf * sum;
}

}  // namespace

TEST(NormalCdf, Median) { EXPECT_DOUBLE_EQ(std_normal_cdf(0.0), 0.5); }

TEST(NormalCdf, TableValue) {
  EXPECT_NEAR(std_normal_cdf(-2.236), static_cast<double>(series_cdf(-2.236L)), 1e-15);
  EXPECT_NEAR(std_normal_cdf(-2.236), 0.01267, 1e-5);
}

TEST(NormalCdf, UpperTailSaturates) { EXPECT_NEAR(std_normal_cdf(40.0), 1.0, 1e-15); }

TEST(NormalCdf, MatchesSeriesOracleOnGrid) {
  for (double x = -8.0; x <= 8.0; x += 0.01) {
    ASSERT_NEAR(std_normal_cdf(x), static_cast<double>(series_cdf(x)), 1e-15) << "x=" << x;
  }
}

TEST(NormalCdf, Monotone) {
  double prev = 0.0;
  for (double x = -40.0; x <= 40.0; x += 0.003) {
    const double v = std_normal_cdf(x);
    ASSERT_GE(v, prev) << x;
    prev = v;
  }
}

TEST(NormalCdf, Symmetry) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int i = 0; i < 5000; ++i) {
    const double x = nd(gen);
    ASSERT_NEAR(std_normal_cdf(-x) + std_normal_cdf(x), 1.0, 1e-15) << x;
  }
  for (double x = -10.0; x <= 10.0; x += 0.05) ASSERT_NEAR(std_normal_cdf(-x) + std_normal_cdf(x), 1.0, 1e-15);
}

TEST(NormalCdf, RejectsNonFinite) {
  EXPECT_THROW(std_normal_cdf(std::numeric_limits<double>::quiet_NaN()), DomainError);
  EXPECT_THROW(std_normal_cdf(std::numeric_limits<double>::infinity()), DomainError);
}

TEST(NormalQuantile, Median) { EXPECT_NEAR(std_normal_quantile(0.5), 0.0, 1e-15); }

TEST(NormalQuantile, NewtonOracle) {
  // Newton iteration on the long double series CDF.
  long double x = -2.5L;
  for (int i = 0; i < 50; ++i) {
    const long double f = series_cdf(x) - 0.005L;
    x -= f / (std::exp(-0.5L * x * x) / std::sqrt(2.0L * 3.14159265358979323846264338327950288L));
  }
  EXPECT_NEAR(std_normal_quantile(0.005), static_cast<double>(x), 1e-12);
  EXPECT_NEAR(std_normal_quantile(0.005), -2.5758, 1e-4);
}

TEST(NormalQuantile, RoundTripFixedPoint) { EXPECT_NEAR(std_normal_quantile(std_normal_cdf(1.3)), 1.3, 1e-12); }

TEST(NormalQuantile, CdfOfQuantileIsIdentity) {
  for (double e = -15.0; e <= -0.31; e += 0.05) {
    const double a = std::pow(10.0, e);
    ASSERT_NEAR(std_normal_cdf(std_normal_quantile(a)), a, 1e-12 * std::max(1.0, a)) << a;
    ASSERT_NEAR(std_normal_cdf(std_normal_quantile(1.0 - a)), 1.0 - a, 1e-12) << a;
  }
}

TEST(NormalQuantile, QuantileOfCdfIsIdentity) {
  // Below x = 4 the identity holds to 1e-12. Above, cdf(x) is within a few ulp
  // of 1 and the inverse can only recover x to ulp(cdf)/pdf(x).
  for (double x = -8.0; x < 8.0; x += 0.01) {
    const double tol = x <= 4.0 ? 1e-12 : 2.0 * std::numeric_limits<double>::epsilon() / std_normal_pdf(x);
    ASSERT_NEAR(std_normal_quantile(std_normal_cdf(x)), x, tol) << x;
  }
}

TEST(NormalQuantile, RejectsOutOfRange) {
  EXPECT_THROW(std_normal_quantile(0.0), DomainError);
  EXPECT_THROW(std_normal_quantile(1.0), DomainError);
  EXPECT_THROW(std_normal_quantile(-0.1), DomainError);
  EXPECT_THROW(std_normal_quantile(std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST(Types, SymmetricMatrixAveragesTriangles) {
  Matrix m(2, 2);
  m << 1, 2, 2 + 1e-12, 3;
  SymmetricMatrix s(m);
  EXPECT_EQ(s(0, 1), s(1, 0));
  EXPECT_NEAR(s(0, 1), 2.0, 1e-12);
  EXPECT_EQ(s.dim(), 2);
  m(1, 0) = 4.0;
  EXPECT_THROW(SymmetricMatrix{m}, DomainError);
}

TEST(Types, SymmetricMatrixRejectsBadInput) {
  EXPECT_THROW(SymmetricMatrix(Matrix(2, 3)), ShapeError);
  Matrix m = Matrix::Identity(2, 2);
  m(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(SymmetricMatrix{m}, DomainError);
}

TEST(Types, SymmetricMatrixCsvRoundTripIsBitExact) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  Matrix m(7, 7);
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = nd(gen) * std::pow(10.0, static_cast<double>(i - 2 * j));
  const SymmetricMatrix s(m);
  std::vector<std::string> header;
  for (int j = 0; j < 7; ++j) header.push_back("c" + std::to_string(j));
  CsvWriter w(header);
  for (Index i = 0; i < 7; ++i) {
    std::vector<std::string> row;
    for (Index j = 0; j < 7; ++j) row.push_back(format_double(s(i, j)));
    w.row(row);
  }
  const NumericTable back = parse_numeric_csv(w.str());
  const SymmetricMatrix s2(back.values);
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 7; ++j) ASSERT_EQ(s(i, j), s2(i, j));
}

TEST(Types, HypothesisTruthCounts) {
  Vector mu(5);
  mu << 0, 1.5, 0, -2, 0;
  HypothesisTruth t(mu);
  EXPECT_EQ(t.p(), 5);
  EXPECT_EQ(t.p0(), 3);
  EXPECT_EQ(t.p1(), 2);
  EXPECT_TRUE(t.is_null(0));
  EXPECT_FALSE(t.is_null(3));
}

TEST(Types, SafeRatioConvention) {
  EXPECT_EQ(safe_ratio(0.0, 0.0), 0.0);
  EXPECT_TRUE(std::isnan(safe_ratio(1.0, 0.0)));
  EXPECT_DOUBLE_EQ(safe_ratio(1.0, 4.0), 0.25);
}

TEST(Types, CompensatedSumRecoversSmallTerms) {
  CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 1000; ++i) s.add(1e-16);
  EXPECT_NEAR(s.value(), 1.0 + 1e-13, 1e-18);
}

TEST(Io, ThresholdListParsing) {
  const auto v = parse_threshold_list("0.01, 0.001,0.01");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0], 0.001);
  const auto r = parse_threshold_list("1e-4:1e-1:4log");
  ASSERT_EQ(r.size(), 4u);
  EXPECT_NEAR(r[1], 1e-3, 1e-15);
  EXPECT_NEAR(r[3], 1e-1, 1e-15);
  EXPECT_THROW(parse_threshold_list("0.5,1.0"), ParseError);
  EXPECT_THROW(parse_threshold_list(""), ParseError);
  EXPECT_THROW(parse_threshold_list("1e-3:1e-2:5"), ParseError);
}

TEST(Io, CsvQuotingAndErrors) {
  const CsvTable t = parse_csv("a,\"b,c\"\r\n1,\"x \"\"y\"\"\"\n");
  ASSERT_EQ(t.header.size(), 2u);
  EXPECT_EQ(t.header[1], "b,c");
  EXPECT_EQ(t.rows[0][1], "x \"y\"");
  EXPECT_THROW(parse_csv("a,b\n1\n"), ParseError);
  EXPECT_THROW(parse_numeric_csv("a,b\n1,zz\n"), ParseError);
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.05, 1.0 / 3.0, -2.5e-300, 6.02e23}) EXPECT_EQ(parse_double(format_double(v)), v);
  EXPECT_EQ(format_double(0.05), "0.05");
  EXPECT_EQ(format_double(std::nan("")), "nan");
}
