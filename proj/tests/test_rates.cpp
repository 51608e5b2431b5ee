#include <gtest/gtest.h>

#include <random>

#include "irnm/problems.hpp"
#include "irnm/rates.hpp"

using namespace irnm;

namespace {

std::vector<double> logspace(double a, double b, int n)
{
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(a * std::pow(b / a, static_cast<double>(i) / (n - 1)));
    return v;
}

}  // namespace

TEST(IndexFunctions, HoelderValuesAndInverse)
{
    const IndexFunction f = hoelder(0.3);
    for (double t : logspace(1e-12, 1.0, 25)) {
        EXPECT_NEAR(f(t), std::pow(t, 0.3), 1e-15);
        EXPECT_NEAR(f.inverse(f(t)), t, 1e-12 * t);
        EXPECT_NEAR(f.derivative_inverse(f.derivative(t)), t, 1e-10 * t);
    }
    EXPECT_EQ(f(0.0), 0.0);
    EXPECT_THROW(f(2.0), RangeError);
    EXPECT_THROW(hoelder(0.6), InvalidInputError);
}

TEST(IndexFunctions, LogIndexIsContinuousAndIncreasing)
{
    const IndexFunction f = log_index(1.5);
    const double t0 = std::exp(-2.5);
    EXPECT_NEAR(f(t0 * (1 - 1e-12)), f(t0 * (1 + 1e-12)), 1e-10);
    double prev = 0.0;
    for (double t : logspace(1e-12, 1.0, 60)) {
        EXPECT_GT(f(t), prev);
        prev = f(t);
        EXPECT_NEAR(f.inverse(f(t)), t, 1e-10 * t);
    }
    EXPECT_NEAR(f(1e-6), std::pow(-std::log(1e-6), -1.5), 1e-15);
}

TEST(IndexFunctions, DerivedInverseRoundTrips)
{
    for (const IndexFunction& phi : {hoelder(0.5), hoelder(0.2), log_index(1.0)}) {
        const IndexFunction th = theta(phi), vt = vartheta(phi), bp = big_psi(phi);
        for (double t : logspace(1e-9, 0.9, 12)) {
            EXPECT_NEAR(th.inverse(th(t)), t, 1e-10 * t);
            EXPECT_NEAR(vt.inverse(vt(t)), t, 1e-10 * t);
        }
        for (double t : logspace(1e-6, 0.9, 6)) EXPECT_NEAR(bp.raw_inverse(bp(t)), t, 1e-10 * t);
    }
}

TEST(IndexFunctions, ThetaClosedForm)
{
    const IndexFunction th = theta(hoelder(0.25));
    for (double t : logspace(1e-10, 1.0, 10)) EXPECT_NEAR(th(t), std::pow(t, 1.5), 1e-14 * std::pow(t, 1.5) + 1e-300);
}

TEST(IndexFunctions, BigPsiAgreesWithYoungIdentity)
{
    // sqrt: psi^{-1}(b) = b / 2, Psi(t) = t^2 / 4 in closed form.
    const IndexFunction bp = big_psi(hoelder(0.5));
    for (double t : logspace(1e-6, 1.0, 7)) EXPECT_NEAR(bp(t), t * t / 4.0, 1e-9 * t * t);
    for (const IndexFunction& phi : {hoelder(1.0 / 3.0), log_index(2.0)}) {
        const IndexFunction b = big_psi(phi);
        for (double t : logspace(1e-5, 0.5, 6))
            EXPECT_NEAR(b(t), big_psi_young(phi, t), 1e-7 * b(t)) << t;
    }
}

TEST(Lambda, SqrtClosedForm)
{
    const IndexFunction lam = lambda_of(hoelder(0.5));
    for (double t : logspace(1e-6, 1.0, 20)) EXPECT_NEAR(lam(t), t / 4.0, 1e-6);
}

TEST(Lambda, IsConcaveMajorant)
{
    const IndexFunction phi = log_index(1.0);
    const IndexFunction lam = lambda_of(phi);
    const IndexFunction bp = big_psi(phi);
    const auto ts = logspace(1e-5, 1.0, 40);
    for (double t : ts) EXPECT_GE(lam(t), bp(t) / t * (1.0 - 1e-9));
    // sqrt(Lambda) concave: midpoint above the chord
    for (size_t i = 0; i + 2 < ts.size(); ++i) {
        const double a = ts[i], b = ts[i + 2], m = 0.5 * (a + b);
        EXPECT_GE(std::sqrt(lam(m)), 0.5 * (std::sqrt(lam(a)) + std::sqrt(lam(b))) * (1.0 - 1e-9));
    }
}

TEST(Lambda, HoelderCompositionSlope)
{
    // additive exponent kappa = 2 nu / (1 + 2 nu): Lambda(Psi^{-1}(s)) ~ s^kappa
    for (double nu : {0.25, 0.5}) {
        const double k = additive_exponent(nu);
        const IndexFunction phi = hoelder(k);
        const IndexFunction lam = lambda_of(phi), bp = big_psi(phi);
        std::vector<double> xs, ys;
        for (double s : logspace(1e-8, 1e-3, 8)) {
            const double t = bp.raw_inverse(s);
            if (t < lam.t_lo() || t > 1.0)
                continue;
            xs.push_back(s);
            ys.push_back(lam(t));
        }
        ASSERT_GE(xs.size(), 3u);
        EXPECT_NEAR(fit_rate(xs, ys).slope, k, 0.02) << nu;
    }
}

TEST(RateFit, RecoversExactPowerLaw)
{
    std::vector<double> xs, ys;
    for (double x : logspace(1e-4, 1.0, 9)) {
        xs.push_back(x);
        ys.push_back(3.0 * std::pow(x, 0.7));
    }
    const RateFit f = fit_rate(xs, ys);
    EXPECT_NEAR(f.slope, 0.7, 1e-12);
    EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-10);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_THROW(fit_rate({1.0, 2.0}, {1.0, 2.0}), InvalidInputError);
    EXPECT_THROW(fit_rate({1.0, 2.0, -1.0}, {1.0, 2.0, 3.0}), InvalidInputError);
    EXPECT_THROW(fit_rate({1.0, 2.0, 3.0}, {1.0, 2.0}), AlignmentError);
}

TEST(TangentialCone, LinearModelHasZeroEta)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    auto g = Grid::uniform_1d(20, 0.0, 1.0);
    DeconvolutionModel m(g, poisson_kernel(g, 0.7));
    std::vector<Signal> us, vs;
    for (int k = 0; k < 5; ++k) {
        VectorXd a(20), b(20);
        for (auto& x : a) x = nd(rng);
        for (auto& x : b) x = nd(rng);
        us.emplace_back(g, a);
        vs.emplace_back(g, b);
    }
    const TangentialCone tc = tangential_cone_probe(m, us, vs);
    EXPECT_LT(tc.eta_bar, 1e-12);
    EXPECT_NEAR(tc.c_tc, 2.0, 1e-9);
}

TEST(TangentialCone, PhaseRetrievalIsSmallForCloseSamples)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    PhaseRetrievalParams p;
    p.support_n = 12;
    p.measure_n = 12;
    p.kappa = 8.0;
    PhaseRetrievalModel m(p);
    const GridPtr& g = m.input_grid();
    auto sample = [&](double eps) {
        std::vector<Signal> us, vs;
        for (int k = 0; k < 4; ++k) {
            VectorXd a(g->size()), b(g->size());
            for (auto& x : a) x = nd(rng);
            for (Index i = 0; i < b.size(); ++i) b[i] = a[i] + eps * nd(rng);
            us.emplace_back(g, a);
            vs.emplace_back(g, b);
        }
        return tangential_cone_probe(m, us, vs).eta_bar;
    };
    // linearization error is second order, so eta_bar shrinks with the distance
    EXPECT_LT(sample(1e-3), 0.1 * sample(1e-1));
}

TEST(RateAssumptions, Validation)
{
    RateAssumptions a;
    EXPECT_NO_THROW(a.validate());
    a.beta1 = 0.5;
    EXPECT_THROW(a.validate(), InvalidInputError);
}
