#include <gtest/gtest.h>

#include <random>

#include "irnm/stopping.hpp"

using namespace irnm;

namespace {

IterateTrace alpha_err_trace(const std::vector<double>& alpha, const std::vector<double>& err)
{
    auto g = Grid::counting(1);
    IterateTrace t;
    for (size_t i = 0; i < alpha.size(); ++i) {
        TraceRecord r;
        r.n = static_cast<int>(i);
        r.alpha = alpha[i];
        r.err_n = i < err.size() ? err[i] : kNaN;
        r.u = Signal::zeros(g);
        t.records.push_back(r);
    }
    return t;
}

std::vector<double> geometric(double a0, double q, int n)
{
    std::vector<double> a;
    for (int i = 0; i < n; ++i) a.push_back(a0 * std::pow(q, -i));
    return a;
}

// Brute-force balancing principle written from its definition.
int lepskii_oracle(const std::vector<VectorXd>& u, const std::vector<double>& alpha, double err, double gamma,
                   const Grid& g)
{
    const int len = static_cast<int>(u.size());
    auto noi = [&](int n) { return std::sqrt(2.0 * err / alpha[static_cast<size_t>(n - 1)]); };
    int nmax = len - 1;
    for (int n = 1; n < len; ++n)
        if (noi(n) >= 1.0) {
            nmax = n;
            break;
        }
    for (int n = 1; n <= nmax; ++n) {
        bool ok = true;
        for (int m = n; m <= nmax; ++m)
            ok = ok && g.norm(u[static_cast<size_t>(n)] - u[static_cast<size_t>(m)]) <= 4.0 * (1.0 + gamma) * noi(m);
        if (ok)
            return n;
    }
    return nmax;
}

}  // namespace

TEST(APriori, HoelderRuleIsTheFirstCrossing)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ud(1e-4, 1e-2);
    for (int k = 0; k < 200; ++k) {
        const auto a = geometric(0.5, 1.5, 25);
        std::vector<double> e(24);
        for (auto& x : e) x = ud(rng);
        const IterateTrace t = alpha_err_trace(a, e);
        int expect = 24;
        for (int n = 0; n < 24; ++n)
            if (a[static_cast<size_t>(n)] <= 1.3 * std::pow(e[static_cast<size_t>(n)], 0.5)) {
                expect = n;
                break;
            }
        const StopResult r = a_priori_stop_hoelder(t, 1.3, 0.5);
        EXPECT_EQ(r.index, expect);
        EXPECT_EQ(r.stopped, expect < 24);
    }
}

TEST(APriori, ThetaRuleWithHoelderIndexMatchesHoelderRuleAtTauOne)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ud(1e-6, 1e-2);
    for (double nu : {0.25, 0.5}) {
        for (int k = 0; k < 100; ++k) {
            std::vector<double> e(30);
            for (auto& x : e) x = ud(rng);
            const IterateTrace t = alpha_err_trace(geometric(0.7, 1.4, 31), e);
            EXPECT_EQ(a_priori_stop_theta(t, 1.0, hoelder(nu)).index, a_priori_stop_hoelder(t, 1.0, nu).index);
        }
    }
}

TEST(APriori, LogRule)
{
    const auto a = geometric(0.5, 2.0, 10);
    std::vector<double> e(9, 1e-4);
    // alpha^2 <= 1e-4 first at alpha = 0.5/64 = 0.0078
    EXPECT_EQ(a_priori_stop_log(alpha_err_trace(a, e), 1.0).index, 6);
}

TEST(APriori, Errors)
{
    const IterateTrace t = alpha_err_trace({0.5, 0.25}, {1e-3});
    EXPECT_THROW(a_priori_stop_hoelder(t, 0.5, 0.5), InvalidInputError);
    EXPECT_THROW(a_priori_stop_hoelder(t, 1.0, 0.7), InvalidInputError);
    const IterateTrace missing = alpha_err_trace({0.5, 0.25, 0.1}, {});
    EXPECT_THROW(a_priori_stop_log(missing, 1.0), UnsupportedModeError);
    EXPECT_THROW(a_priori_stop_log(IterateTrace{}, 1.0), InvalidInputError);
}

TEST(Lepskii, MatchesBruteForceDefinition)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    auto g = Grid::uniform_1d(6, 0.0, 1.0);
    const QuadraticPenalty pen(Signal::zeros(g), GramOperator::identity());
    for (int k = 0; k < 300; ++k) {
        const auto a = geometric(0.5, 1.5, 20);
        const double err = std::pow(10.0, -2.0 - 3.0 * std::uniform_real_distribution<double>()(rng));
        IterateTrace t;
        std::vector<VectorXd> us;
        VectorXd u = VectorXd::Zero(6);
        for (int n = 0; n < 20; ++n) {
            TraceRecord r;
            r.n = n;
            r.alpha = a[static_cast<size_t>(n)];
            for (auto& x : u) x += 0.05 * nd(rng);
            r.u = Signal(g, u);
            us.push_back(u);
            t.records.push_back(r);
        }
        const double gamma = k % 2 ? 0.0 : 0.5;
        const StopResult s = lepskii_select(t, err, gamma, pen);
        EXPECT_EQ(s.index, lepskii_oracle(us, a, err, gamma, *g)) << k;
    }
}

TEST(Lepskii, NMaxFromScheduleAgreesWithTrace)
{
    for (double err : {1e-5, 1e-3, 1e-2}) {
        const int n = lepskii_n_max(0.5, 1.5, err, 1.0, 2.0);
        const auto a = geometric(0.5, 1.5, n + 5);
        // first n with sqrt(2 err / alpha_{n-1}) >= 1
        int expect = -1;
        for (int m = 1; m < static_cast<int>(a.size()); ++m)
            if (2.0 * err / a[static_cast<size_t>(m - 1)] >= 1.0) {
                expect = m;
                break;
            }
        EXPECT_EQ(n, expect);
    }
    EXPECT_EQ(lepskii_n_max(0.5, 1.5, 0.0, 1.0, 2.0), 100000);
}

TEST(Lepskii, ConstantTraceSelectsFirstIndex)
{
    auto g = Grid::uniform_1d(3);
    const QuadraticPenalty pen(Signal::zeros(g), GramOperator::identity());
    IterateTrace t;
    for (int n = 0; n < 8; ++n) {
        TraceRecord r;
        r.n = n;
        r.alpha = 0.5 * std::pow(1.5, -n);
        r.u = Signal::constant(g, 1.0);
        t.records.push_back(r);
    }
    EXPECT_EQ(lepskii_select(t, 1e-3, 0.0, pen).index, 1);
    EXPECT_THROW(lepskii_select(t, -1.0, 0.0, pen), InvalidInputError);
}

TEST(Lepskii, OracleBoundFormula)
{
    const std::vector<double> app{4.0, 1.0, 0.25}, noi{0.01, 0.04, 0.16};
    // min(sqrt(app) + sqrt(noi)) = min(2.1, 1.2, 0.9) = 0.9
    EXPECT_NEAR(lepskii_oracle_bound(app, noi, 0.0, 1.5, 1.0, 2.0), 6.0 * 1.5 * 0.9, 1e-12);
    EXPECT_NEAR(lepskii_oracle_bound(app, noi, 3.0, 1.5, 1.0, 2.0), 6.0 * 2.0 * 1.5 * 0.9, 1e-12);
    EXPECT_THROW(lepskii_oracle_bound(app, {0.1}, 0.0, 1.5, 1.0, 2.0), AlignmentError);
}

TEST(Oracle, PerRunAndMeanRules)
{
    auto g = Grid::counting(1);
    IterateTrace t;
    for (double v : {3.0, 1.0, 0.5, 0.5, 2.0}) {
        TraceRecord r;
        r.u = Signal::constant(g, v);
        t.records.push_back(r);
    }
    // ties go to the smaller index
    EXPECT_EQ(oracle_stop(t, Signal::zeros(g)).index, 2);
    // mean square: index 1 -> (1 + 9)/2 = 5, index 2 -> (4 + 4)/2 = 4
    EXPECT_EQ(mean_oracle_index({{5.0, 1.0, 2.0}, {5.0, 3.0, 2.0}}), 2);
    // the per-run argmins (1 and 2) differ from the mean rule
    EXPECT_EQ(argmin_index({5.0, 1.0, 2.0}), 1);
    EXPECT_EQ(argmin_index({kNaN, 2.0, 1.0}), 2);
    EXPECT_THROW(argmin_index({}), InvalidInputError);
}

TEST(Dispatch, OracleNeedsTruth)
{
    auto g = Grid::counting(1);
    const QuadraticPenalty pen(Signal::zeros(g), GramOperator::identity());
    const IterateTrace t = alpha_err_trace({0.5, 0.25}, {1e-3});
    StoppingRule r;
    r.kind = StoppingRule::Kind::oracle;
    EXPECT_THROW(apply_stopping(r, t, pen, std::nullopt), UnsupportedModeError);
    r.kind = StoppingRule::Kind::max_iter;
    EXPECT_EQ(apply_stopping(r, t, pen, std::nullopt).index, 1);
    r.kind = StoppingRule::Kind::theta;
    EXPECT_THROW(apply_stopping(r, t, pen, std::nullopt), InvalidInputError);
}
