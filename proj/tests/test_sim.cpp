#include "pfa/pfa.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pfa;

namespace {

Matrix random_symmetric(Index n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) a(i, j) = a(j, i) = nd(gen);
  return a;
}

/// Eigendecompose with Eigen's own solver, clip, reassemble.
Matrix clip_oracle(const Matrix& a, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  const Vector lam = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

SimulationConfig small_config() {
  SimulationConfig c;
  c.p = 40;
  c.n = 60;
  c.k_true = 1;
  c.p1 = 8;
  c.rounds = 6;
  c.seed = 99;
  c.poet.k = 1;
  c.threads = 1;
  return c;
}

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

TEST(NearestPd, PositiveDefiniteInputIsFixedPoint) {
  Matrix a(2, 2);
  a << 2, 0.5, 0.5, 1;
  const SymmetricMatrix s(a);
  const SymmetricMatrix out = nearest_positive_definite(s, 1e-8);
  EXPECT_TRUE(out.dense() == s.dense());
}

TEST(NearestPd, ClipsNegativeEigenvalue) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = -1.0;
  const SymmetricMatrix out = nearest_positive_definite(SymmetricMatrix(a), 0.0);
  EXPECT_NEAR(out(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(out(1, 1), 0.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.0, 1e-15);
}

TEST(NearestPd, MatchesClippingOracleOnRandomIndefinite) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_symmetric(8, gen);
    ASSERT_LT(min_eigenvalue(a), 0.0);
    for (double floor : {0.0, 1e-8, 0.3}) {
      const SymmetricMatrix out = nearest_positive_definite(SymmetricMatrix(a), floor);
      EXPECT_LE((out.dense() - clip_oracle(a, floor)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_GE(min_eigenvalue(out.dense()), floor - 1e-12);
      // Idempotent: the projection of a projection is itself.
      const SymmetricMatrix again = nearest_positive_definite(out, floor);
      EXPECT_LE((again.dense() - out.dense()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(NearestPd, NoPsdMatrixIsCloser) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  const Matrix a = random_symmetric(6, gen);
  const double best = (nearest_positive_definite(SymmetricMatrix(a), 0.0).dense() - a).norm();
  for (int trial = 0; trial < 200; ++trial) {
    Matrix g(6, 6);
    for (Index i = 0; i < 6; ++i)
      for (Index j = 0; j < 6; ++j) g(i, j) = nd(gen);
    const Matrix psd = g * g.transpose() * 0.1;
    EXPECT_GE((psd - a).norm(), best - 1e-12);
  }
}

TEST(NearestPd, RejectsNegativeFloor) {
  EXPECT_THROW(nearest_positive_definite(SymmetricMatrix::identity(2), -1.0), ParameterError);
}

TEST(SigmaU, StrictIsIdentity) {
  for (Index p : {1, 7, 50}) {
    const SymmetricMatrix s = build_sigma_u(NoiseModel::strict_identity, p, 0.5, 3);
    EXPECT_TRUE(s.dense() == Matrix::Identity(p, p));
  }
}

TEST(SigmaU, BandEntries) {
  const Matrix b = band_component(30);
  for (Index i = 0; i < 30; ++i) {
    for (Index j = 0; j < 30; ++j) {
      const Index d = std::abs(i - j);
      const double expected = (d > 0 && d <= 25) ? 0.4 : 0.0;
      ASSERT_EQ(b(i, j), expected) << i << "," << j;
    }
  }
}

TEST(SigmaU, ApproximateIsPositiveDefiniteAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SymmetricMatrix s = build_sigma_u(NoiseModel::approximate, 100, 0.5, seed);
    EXPECT_GT(sym_eigenvalues(s).minCoeff(), 0.0) << seed;
    EXPECT_EQ(Eigen::LLT<Matrix>(s.dense()).info(), Eigen::Success);
  }
}

TEST(SigmaU, ScaleAndSeedDependence) {
  const SymmetricMatrix a = build_sigma_u(NoiseModel::approximate, 60, 0.5, 4);
  const SymmetricMatrix b = build_sigma_u(NoiseModel::approximate, 60, 0.1, 4);
  EXPECT_LE((a.dense() * 0.2 - b.dense()).cwiseAbs().maxCoeff(), 1e-14);
  const SymmetricMatrix c = build_sigma_u(NoiseModel::approximate, 60, 0.5, 5);
  EXPECT_GT((a.dense() - c.dense()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(a.dense() == build_sigma_u(NoiseModel::approximate, 60, 0.5, 4).dense());
}

TEST(SigmaU, PowerStudyScalesStrictNoise) {
  SimulationConfig c;
  c.p = 5;
  c.sigma_u_scale = 0.1;
  EXPECT_TRUE(make_noise_setup(c).sigma_u.dense() == Matrix::Identity(5, 5));
  const NoiseSetup scaled = make_noise_setup(c, true);
  EXPECT_LE((scaled.sigma_u.dense() - 0.1 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-17);
  EXPECT_DOUBLE_EQ(scaled.identity_sd * scaled.identity_sd, 0.1);
  c.sigma_u_kind = NoiseModel::approximate;
  EXPECT_TRUE(make_noise_setup(c, true).sigma_u.dense() == make_noise_setup(c).sigma_u.dense());
}

TEST(GenerateDataset, SignalCoordinates) {
  SimulationConfig c;
  c.p = 200;
  c.n = 100;
  c.p1 = 50;
  c.rounds = 1;
  const Dataset ds = generate_dataset(c, 0, make_noise_setup(c));
  EXPECT_EQ(ds.truth.p1(), 50);
  for (Index i = 0; i < 50; ++i) {
    EXPECT_FALSE(ds.truth.is_null(i));
    EXPECT_DOUBLE_EQ(ds.truth.mu_star()[i], 10.0);
  }
  for (Index i = 50; i < 200; ++i) EXPECT_TRUE(ds.truth.is_null(i));
  EXPECT_EQ(ds.x.n(), 100);
  EXPECT_EQ(ds.x.p(), 200);
  EXPECT_EQ(ds.loadings.cols(), 3);
  EXPECT_GE(ds.loadings.minCoeff(), -1.0);
  EXPECT_LE(ds.loadings.maxCoeff(), 1.0);
}

TEST(GenerateDataset, ZeroNoiseLiesInFactorSpace) {
  SimulationConfig c;
  c.p = 30;
  c.n = 20;
  c.p1 = 5;
  c.rounds = 1;
  c.zero_noise = true;
  const Dataset ds = generate_dataset(c, 2, make_noise_setup(c));
  const Matrix centred = ds.x.values().rowwise() - ds.mu.transpose();
  // Residual after projecting each row onto col(B).
  const Matrix& b = ds.loadings;
  const Matrix proj = b * (b.transpose() * b).ldlt().solve(b.transpose());
  const Matrix resid = centred - centred * proj;
  EXPECT_LE(resid.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(centred.cwiseAbs().maxCoeff(), 0.1);
}

TEST(GenerateDataset, EmpiricalCovarianceMatchesModel) {
  for (NoiseModel kind : {NoiseModel::strict_identity, NoiseModel::approximate}) {
    SimulationConfig c;
    c.p = 20;
    c.n = 100000;
    c.p1 = 3;
    c.rounds = 1;
    c.sigma_u_kind = kind;
    c.seed = 17;
    const Dataset ds = generate_dataset(c, 0, make_noise_setup(c));
    const Matrix centred = ds.x.values().rowwise() - ds.x.values().colwise().mean();
    const Matrix cov = centred.transpose() * centred / static_cast<double>(c.n - 1);
    const Matrix& sigma = ds.sigma.dense();
    // 5% of the larger of the entry and the diagonal scale.
    for (Index i = 0; i < c.p; ++i) {
      for (Index j = 0; j < c.p; ++j) {
        const double scale = std::max(std::abs(sigma(i, j)), std::sqrt(sigma(i, i) * sigma(j, j)) * 0.2);
        ASSERT_LE(std::abs(cov(i, j) - sigma(i, j)), 0.05 * scale) << to_string(kind) << " " << i << "," << j;
      }
    }
    const Matrix bbt = ds.loadings * ds.loadings.transpose();
    EXPECT_LE((sigma - bbt - make_noise_setup(c).sigma_u.dense()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TwoSample, EqualMeansGiveZero) {
  Matrix x(3, 2), y(2, 2);
  x << 1, 2, 3, 4, 5, 6;
  y << 2, 3, 4, 5;
  const TestVector z = two_sample_statistics(DataMatrix(x), DataMatrix(y));
  EXPECT_EQ(z.values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(TwoSample, ScaleForSevenAndEight) {
  const Matrix x = Matrix::Ones(7, 3);
  const Matrix y = Matrix::Zero(8, 3);
  const TestVector z = two_sample_statistics(DataMatrix(x), DataMatrix(y));
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(z[i], std::sqrt(56.0 / 15.0), 1e-15);
    EXPECT_NEAR(z[i], 1.9322, 1e-4);
  }
}

TEST(TwoSample, FormulaOracle) {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> nd(0.3, 2.0);
  Matrix x(9, 5), y(6, 5);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = nd(gen);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = nd(gen);
  const TestVector z = two_sample_statistics(DataMatrix(x), DataMatrix(y));
  for (Index j = 0; j < 5; ++j) {
    long double sx = 0, sy = 0;
    for (Index i = 0; i < 9; ++i) sx += x(i, j);
    for (Index i = 0; i < 6; ++i) sy += y(i, j);
    const long double expected = std::sqrt(54.0L / 15.0L) * (sx / 9 - sy / 6);
    EXPECT_NEAR(z[j], static_cast<double>(expected), 1e-14);
  }
}

TEST(TwoSample, ShapeMismatch) {
  EXPECT_THROW(two_sample_statistics(DataMatrix(Matrix::Zero(3, 2)), DataMatrix(Matrix::Zero(3, 4))), ShapeError);
}

TEST(OneSample, Formula) {
  Matrix x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  Vector d(2);
  d << 2.0, 4.0;
  const TestVector z = one_sample_statistics(DataMatrix(x), d);
  EXPECT_NEAR(z[0], 2.0 * 4.0 / 2.0, 1e-15);
  EXPECT_NEAR(z[1], 2.0 * 5.0 / 4.0, 1e-15);
  EXPECT_THROW(one_sample_statistics(DataMatrix(x), Vector::Ones(3)), ShapeError);
}

TEST(Summaries, MeanSdMedian) {
  const SummaryStat s = summarize({1.0, 2.0, std::nan(""), 3.0}, 100.0);
  EXPECT_EQ(s.count, 3);
  EXPECT_DOUBLE_EQ(s.mean, 200.0);
  EXPECT_DOUBLE_EQ(s.sd, 100.0);
  EXPECT_TRUE(std::isnan(summarize({}).mean));
  EXPECT_EQ(summarize({4.0}).sd, 0.0);
  EXPECT_EQ(median_of({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median_of({4.0, 1.0, std::nan(""), 2.0, 3.0}), 2.5);
  EXPECT_TRUE(std::isnan(median_of({})));
}

TEST(Summaries, RelativeErrorConvention) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_TRUE(std::isnan(relative_error(0.1, 0.0)));
  EXPECT_DOUBLE_EQ(relative_error(0.05, 0.2), 0.25);
}

TEST(ParallelFor, VisitsEachIndexOnceAndPropagatesErrors) {
  std::vector<int> hits(50, 0);
  parallel_for(50, 4, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](int i) {
                 if (i == 7) throw DataError("boom");
               }),
               DataError);
}

TEST(SimulationConfig, Validation) {
  SimulationConfig c = small_config();
  c.p1 = c.p;
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.rounds = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.t = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.k_sweep = {100};
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(FdpExperiment, RejectEverythingGivesNullProportion) {
  SimulationConfig c = small_config();
  c.t = 1.0 - 1e-12;
  const ExperimentResult r = run_fdp_experiment(c);
  ASSERT_EQ(r.failed_rounds, 0);
  for (const RoundRecord& rec : r.rounds) {
    EXPECT_EQ(rec.R, c.p);
    EXPECT_EQ(rec.V_true, c.p - c.p1);
    EXPECT_DOUBLE_EQ(rec.fdp_true, 32.0 / 40.0);
  }
}

TEST(FdpExperiment, RecordsAreConsistent) {
  SimulationConfig c = small_config();
  c.k_sweep = {1, 2};
  const ExperimentResult r = run_fdp_experiment(c);
  ASSERT_EQ(r.rounds.size(), 6u);
  ASSERT_EQ(r.de_sweep.size(), 2u);
  std::vector<double> de;
  for (const RoundRecord& rec : r.rounds) {
    ASSERT_TRUE(rec.ok) << rec.error;
    EXPECT_DOUBLE_EQ(rec.de_poet, rec.fdp_poet - rec.fdp_true);
    EXPECT_DOUBLE_EQ(rec.de_known_cov, rec.fdp_known_cov - rec.fdp_true);
    EXPECT_TRUE(same_double(rec.re_poet, relative_error(rec.de_poet, rec.fdp_true)));
    // The sweep at K = 1 repeats the main POET fit.
    EXPECT_DOUBLE_EQ(rec.fdp_sweep[0], rec.fdp_poet);
    de.push_back(rec.de_poet);
  }
  EXPECT_NEAR(r.de_poet.mean, summarize(de, 100.0).mean, 1e-12);
}

TEST(FdpExperiment, KnownCovarianceEstimateIsAccurateOnTinyInstance) {
  // With p = 40 the signals make up a fifth of the coordinates and bias the
  // least-squares W, so the robust L1 fit is used here.
  SimulationConfig c;
  c.p = 40;
  c.n = 200;
  c.k_true = 1;
  c.p1 = 8;
  c.rounds = 20;
  c.seed = 5;
  c.poet.k = 1;
  c.method = FactorMethod::lad;
  c.threads = 1;
  const ExperimentResult r = run_fdp_experiment(c);
  int close = 0;
  for (const RoundRecord& rec : r.rounds) {
    ASSERT_TRUE(rec.ok) << rec.error;
    if (std::abs(rec.fdp_known_cov - rec.fdp_true) <= 0.15) ++close;
  }
  EXPECT_GE(close, 16);
}

TEST(FdpExperiment, BitIdenticalAcrossThreadCounts) {
  SimulationConfig c = small_config();
  c.k_sweep = {2};
  const ExperimentResult a = run_fdp_experiment(c);
  c.threads = 3;
  const ExperimentResult b = run_fdp_experiment(c);
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    const RoundRecord &x = a.rounds[i], &y = b.rounds[i];
    EXPECT_EQ(x.R, y.R);
    EXPECT_EQ(x.V_true, y.V_true);
    EXPECT_TRUE(same_double(x.fdp_poet, y.fdp_poet));
    EXPECT_TRUE(same_double(x.fdp_known_cov, y.fdp_known_cov));
    EXPECT_TRUE(same_double(x.de_sweep[0], y.de_sweep[0]));
    EXPECT_EQ(x.k_used, y.k_used);
  }
  EXPECT_TRUE(same_double(a.de_poet.mean, b.de_poet.mean));
  EXPECT_TRUE(same_double(a.de_poet.sd, b.de_poet.sd));
}

TEST(FdpExperiment, BenchmarkLoadingsArePrefixes) {
  SimulationConfig c;
  c.p = 80;
  c.n = 100;
  c.p1 = 10;
  c.rounds = 1;
  const Dataset ds = generate_dataset(c, 0, make_noise_setup(c));
  const SymmetricMatrix corr = to_correlation(ds.sigma).first;
  const TestVector z = one_sample_statistics(ds.x, to_correlation(ds.sigma).second);
  Matrix prev;
  for (Index k = 1; k <= 6; ++k) {
    const FactorFit fit = fit_factors(corr, k, z, FactorMethod::least_squares);
    const Matrix l = fit.fr.loadings();
    ASSERT_EQ(l.cols(), k);
    if (k > 1) {
      EXPECT_LE((l.leftCols(k - 1) - prev).cwiseAbs().maxCoeff(), 1e-9) << k;
    }
    prev = l;
  }
}

TEST(FdpExperiment, AutoFactorCountOnStrictModel) {
  SimulationConfig c;
  c.p = 300;
  c.n = 100;
  c.p1 = 15;
  c.rounds = 4;
  c.seed = 12;
  c.poet.k.reset();
  c.benchmark = false;
  const ExperimentResult r = run_fdp_experiment(c);
  for (const RoundRecord& rec : r.rounds) {
    ASSERT_TRUE(rec.ok) << rec.error;
    EXPECT_EQ(rec.k_used, 3);
  }
}

TEST(PowerExperiment, NoSignalsGivesZeroFnr) {
  SimulationConfig c;
  c.p = 60;
  c.n = 50;
  c.k_true = 1;
  c.p1 = 0;
  c.rounds = 8;
  c.seed = 3;
  c.poet.k = 1;
  c.sigma_u_scale = 0.1;
  const ExperimentResult r = run_power_experiment(c);
  ASSERT_TRUE(r.power.has_value());
  EXPECT_EQ(r.power->fnr_adjusted, 0.0);
  EXPECT_EQ(r.power->fnr_fixed, 0.0);
  double any = 0.0;
  for (const RoundRecord& rec : r.rounds) {
    ASSERT_TRUE(rec.ok) << rec.error;
    EXPECT_EQ(rec.V_true, rec.R);
    any += rec.R > 0 ? 1.0 : 0.0;
  }
  EXPECT_DOUBLE_EQ(r.power->fdr_adjusted, any / 8.0);
}

TEST(PowerExperiment, BisectionAgreesWithGridScan) {
  // Synthetic curve: 30 rounds of 200 hypotheses, 40 alternatives with small p-values.
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PowerCurve curve;
  curve.p = 200;
  for (int r = 0; r < 30; ++r) {
    PowerRound pr;
    pr.ok = true;
    pr.p_unadjusted.resize(200);
    pr.is_null.resize(200);
    for (Index i = 0; i < 200; ++i) {
      const bool null = i >= 40;
      pr.is_null[static_cast<std::size_t>(i)] = null;
      pr.p_unadjusted[i] = null ? u(gen) : std::pow(u(gen), 6.0);
    }
    curve.rounds.push_back(std::move(pr));
  }
  const double target = curve.fixed(2e-3).first;
  const auto [t_bis, steps] = match_fdr_threshold(curve, target);
  EXPECT_GT(steps, 0);
  EXPECT_LE(std::abs(curve.fixed(t_bis).first - target), kFdrMatchTolerance);

  // Exhaustive log grid over the same interval.
  const int m = 20000;
  const double step = (std::log(0.5) - std::log(1e-10)) / m;
  double lo_match = 1e300, hi_match = -1e300;
  for (int i = 0; i <= m; ++i) {
    const double lt = std::log(1e-10) + i * step;
    if (std::abs(curve.fixed(std::exp(lt)).first - target) <= kFdrMatchTolerance) {
      lo_match = std::min(lo_match, lt);
      hi_match = std::max(hi_match, lt);
    }
  }
  ASSERT_LE(lo_match, hi_match);
  EXPECT_GE(std::log(t_bis), lo_match - step);
  EXPECT_LE(std::log(t_bis), hi_match + step);
}

TEST(PowerExperiment, NonBracketingTargetIsDiagnosed) {
  PowerCurve curve;
  curve.p = 2;
  PowerRound pr;
  pr.ok = true;
  pr.p_unadjusted = Vector::Constant(2, 0.9);
  pr.is_null = {true, true};
  curve.rounds.push_back(pr);
  // FDR is 0 on the whole interval, so a target of 0.5 cannot be reached.
  EXPECT_THROW(match_fdr_threshold(curve, 0.5), NumericError);
}
