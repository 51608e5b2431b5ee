#include <gtest/gtest.h>

#include <sstream>

#include "irnm/experiment.hpp"

using namespace irnm;

namespace {

// Small and fast: 48-point deconvolution, few replicates.
ExperimentConfig small_config()
{
    ExperimentConfig c;
    c.problem.n = 48;
    c.problem.length = 48.0;
    c.problem.kernel.width = 1.0;
    c.newton.max_outer = 8;
    c.noise.exposure_times = {100.0, 1000.0};
    c.replicates = 4;
    c.seed = 10;
    return c;
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson)
{
    const ExperimentConfig c = small_config();
    const ExperimentConfig d = ExperimentConfig::from_json(c.to_json());
    EXPECT_EQ(c.to_json(), d.to_json());
    EXPECT_EQ(c.hash(), d.hash());
}

TEST(Config, HashIgnoresThreadsButNotContent)
{
    ExperimentConfig a = small_config(), b = small_config();
    b.threads = 7;
    EXPECT_EQ(a.hash(), b.hash());
    b.seed = 11;
    EXPECT_NE(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, Fnv1aReferenceValues)
{
    // published 64-bit FNV-1a test vectors
    EXPECT_EQ(detail::fnv1a(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(detail::fnv1a("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(detail::fnv1a("foobar"), 0x85944171f73967e8ull);
}

TEST(Config, RejectsInvalidValues)
{
    auto bad = [](const char* text) { return ExperimentConfig::from_json(json::parse(text)); };
    EXPECT_THROW(bad(R"({"replicates": 0})"), ConfigError);
    EXPECT_THROW(bad(R"({"noise": {"exposure_times": [1000, 100]}})"), ConfigError);
    EXPECT_THROW(bad(R"({"noise": {"exposure_times": [-1]}})"), ConfigError);
    EXPECT_THROW(bad(R"({"misfit": {"type": "hellinger"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"problem": {"nn": 3}})"), ConfigError);
    EXPECT_THROW(bad(R"({"newton": {"alpha0": 2}})"), ConfigError);
    EXPECT_THROW(bad(R"({"replicates": "many"})"), ConfigError);
    EXPECT_THROW(bad(R"({"noise": {"type": "gaussian", "levels": [0.1]}, "misfit": {"type": "kl"}})"), ConfigError);
    EXPECT_NO_THROW(bad(R"({"noise": {"type": "gaussian", "levels": [0.1]}, "misfit": {"type": "l2"}})"));
}

TEST(Problems, BuildersProduceConsistentData)
{
    const Problem p = build_problem(small_config().problem);
    EXPECT_EQ(p.g_true.values(), p.model->apply(p.u_true).values());
    EXPECT_EQ(p.u0.values(), reference_profile(p.u0.grid_ptr()).values());
    EXPECT_NEAR(p.mass, p.g_true.grid().inner(p.g_true.values(), VectorXd::Ones(48)), 1e-12);

    ProblemSpec s;
    s.type = "phase_retrieval";
    s.pr.support_n = 12;
    s.pr.measure_n = 12;
    const Problem q = build_problem(s);
    EXPECT_EQ(q.u0.values(), disk_indicator(q.u0.grid_ptr(), s.pr.rho).values());
}

TEST(Observations, GaussianNoiseHasExactNorm)
{
    ExperimentConfig c = small_config();
    c.misfit.type = "l2";
    c.noise.type = "gaussian";
    c.noise.levels = {0.01, 0.1};
    const Problem p = build_problem(c.problem);
    const Observation o = make_observation(c, p, 0.1, 3);
    EXPECT_NEAR(norm(o.obs - p.g_true), 0.1, 1e-14);
    EXPECT_FALSE(o.data.has_value());
}

TEST(Observations, TotalCountsScalesExposure)
{
    ExperimentConfig c = small_config();
    c.noise.total_counts = true;
    const Problem p = build_problem(c.problem);
    const Observation o = make_observation(c, p, 5e4, 3);
    ASSERT_TRUE(o.data.has_value());
    EXPECT_NEAR(o.data->t * p.mass, 5e4, 1e-8);
    double total = 0;
    for (auto k : o.data->counts) total += static_cast<double>(k);
    EXPECT_NEAR(total, 5e4, 5.0 * std::sqrt(5e4));
}

TEST(RunExperiment, AggregatesAreRecomputableFromRows)
{
    const ExperimentResult r = run_experiment(small_config());
    ASSERT_EQ(r.runs.size(), 8u);
    ASSERT_EQ(r.aggregates.size(), 2u);
    for (const AggregateRow& a : r.aggregates) {
        double s1 = 0, s2 = 0, si = 0;
        int n = 0;
        for (const RunRow& x : r.runs)
            if (x.level == a.level && x.ok) {
                s1 += x.error;
                s2 += x.error * x.error;
                si += x.stop_index;
                ++n;
            }
        ASSERT_EQ(n, a.successes);
        EXPECT_NEAR(a.rms_error, std::sqrt(s2 / n), 1e-12);
        EXPECT_NEAR(a.sd_error * a.sd_error, s2 / n - (s1 / n) * (s1 / n), 1e-12);
        EXPECT_NEAR(a.mean_index, si / n, 1e-12);
    }
}

TEST(RunExperiment, InitialErrorAndPerRunOracle)
{
    const ExperimentConfig c = small_config();
    const ExperimentResult r = run_experiment(c);
    const Problem p = build_problem(c.problem);
    const double e0 = norm(p.u0 - p.u_true);
    for (const RunRow& x : r.runs) {
        EXPECT_DOUBLE_EQ(x.initial_error, e0);
        ASSERT_TRUE(x.ok) << x.message;
        EXPECT_EQ(x.stop_index, argmin_index(x.errors));
        EXPECT_EQ(x.seed, c.seed + static_cast<std::uint64_t>(x.replicate));
    }
    EXPECT_DOUBLE_EQ(r.aggregates[0].initial_error, e0);
}

TEST(RunExperiment, MeanOracleUsesOneIndexPerLevel)
{
    ExperimentConfig c = small_config();
    c.stopping.rule = "mean_oracle";
    const ExperimentResult r = run_experiment(c);
    for (const AggregateRow& a : r.aggregates) {
        std::vector<std::vector<double>> errs;
        int idx = -1;
        for (const RunRow& x : r.runs)
            if (x.level == a.level) {
                errs.push_back(x.errors);
                if (idx >= 0) {
                    EXPECT_EQ(x.stop_index, idx);
                }
                idx = x.stop_index;
            }
        EXPECT_EQ(idx, mean_oracle_index(errs));
        EXPECT_EQ(a.rule, "mean_oracle");
    }
}

TEST(RunExperiment, IndependentOfThreadCount)
{
    ExperimentConfig a = small_config(), b = small_config();
    a.threads = 1;
    b.threads = 3;
    std::ostringstream sa, sb;
    write_runs_csv(sa, run_experiment(a), "oracle");
    write_runs_csv(sb, run_experiment(b), "oracle");
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(RunExperiment, InvalidRulesAreRejectedUpFront)
{
    // hoelder rule with the Pearson misfit is rejected up front
    ExperimentConfig c = small_config();
    c.misfit.type = "pearson";
    c.stopping.rule = "hoelder";
    EXPECT_THROW(run_experiment(c), ConfigError);
    c = small_config();
    c.misfit.type = "l2";
    c.stopping.rule = "theta";
    c.stopping.phi = "log";
    c.stopping.p = -1.0;  // invalid index function parameter
    EXPECT_THROW(run_experiment(c), InvalidInputError);
}

TEST(RunExperiment, LepskiiWithDefaultBound)
{
    ExperimentConfig c = small_config();
    c.stopping.rule = "lepskii";
    c.replicates = 2;
    const ExperimentResult r = run_experiment(c);
    for (const RunRow& x : r.runs) {
        ASSERT_TRUE(x.ok) << x.message;
        EXPECT_GE(x.stop_index, 1);
    }
}

TEST(Studies, ErrnTableHasRatios)
{
    ExperimentConfig c = small_config();
    c.noise.exposure_times = {100.0, 1000.0, 10000.0};
    const auto rows = run_errn_study(c);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_TRUE(std::isnan(rows[0].ratio));
    for (size_t i = 1; i < rows.size(); ++i)
        EXPECT_NEAR(rows[i].ratio, rows[i - 1].mean_max_err_n / rows[i].mean_max_err_n, 1e-12);
    c.misfit.type = "pearson";
    EXPECT_THROW(run_errn_study(c), ConfigError);
}

TEST(Studies, RateStudyNeedsThreeLevels)
{
    ExperimentConfig c = small_config();
    EXPECT_THROW(run_rate_study(c), InvalidInputError);
}

TEST(Studies, ExactRateStudyOnKernelSource)
{
    ExperimentConfig c;
    c.problem.n = 128;
    c.problem.length = 1.0;
    c.problem.kernel.type = "poisson";
    c.problem.truth.type = "kernel_source";
    c.problem.u0 = "constant";
    c.misfit.type = "l2";
    c.noise.type = "none";
    c.newton.max_outer = 20;
    const RateStudyResult r = run_rate_study(c);
    EXPECT_EQ(r.mode, "exact");
    EXPECT_EQ(r.points.size(), 20u);
    EXPECT_NEAR(r.fit.slope, 1.0, 0.15);
}

TEST(Output, CsvCarriesHashAndFullPrecision)
{
    const ExperimentResult r = run_experiment(small_config());
    std::ostringstream os;
    write_summary_csv(os, r);
    const std::string s = os.str();
    EXPECT_EQ(s.rfind("# config_hash=" + r.config_hash + "\n", 0), 0u);
    // values parse back exactly
    std::istringstream is(s);
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    std::getline(is, line);
    std::stringstream row(line);
    std::string cell;
    for (int i = 0; i < 6; ++i) std::getline(row, cell, ',');
    EXPECT_EQ(std::stod(cell), r.aggregates[0].rms_error);
}

TEST(Output, MatrixCsvRoundTrip)
{
    auto g = Grid::uniform_2d(3, 4, 0, 1, 0, 1);
    VectorXd v(12);
    for (Index i = 0; i < 12; ++i) v[i] = 0.1 * static_cast<double>(i) - 0.35;
    std::stringstream ss;
    write_matrix_csv(ss, Signal(g, v), "abc");
    Index rows = 0, cols = 0;
    const VectorXd back = read_matrix_csv(ss, &rows, &cols);
    EXPECT_EQ(rows, 3);
    EXPECT_EQ(cols, 4);
    EXPECT_EQ(back, v);
    std::stringstream bad("# rows=2 cols=2\n1,2\n3\n");
    EXPECT_THROW(read_matrix_csv(bad), InvalidInputError);
}

TEST(Checks, SuitePasses)
{
    for (const CheckRow& r : run_check_suite(5)) EXPECT_TRUE(r.pass) << r.name << " " << r.value;
}
