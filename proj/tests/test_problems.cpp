#include <gtest/gtest.h>

#include <complex>
#include <numbers>
#include <random>

#include "irnm/problems.hpp"

using namespace irnm;

namespace {

VectorXd randn(Index n, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> nd(0.0, scale);
    VectorXd v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

// Direct periodic convolution sum: (F u)_i = sum_j w k[(i - j) mod n] u_j.
VectorXd direct_convolution(const Grid& g, const Signal& k, const VectorXd& u)
{
    const Index n = g.size();
    VectorXd out = VectorXd::Zero(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) out[i] += g.weights()[j] * k[((i - j) % n + n) % n] * u[j];
    return out;
}

}  // namespace

TEST(Deconvolution, MatchesDirectSum)
{
    std::mt19937_64 rng(1);
    auto g = Grid::uniform_1d(40, 0.0, 3.0);
    const Signal k = gaussian_kernel(g, 0.2);
    DeconvolutionModel m(g, k);
    const VectorXd u = randn(40, rng);
    EXPECT_LT((m.apply(Signal(g, u)).values() - direct_convolution(*g, k, u)).norm(), 1e-12 * u.norm());
}

TEST(Deconvolution, PreservesNonnegativity)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ud(0.0, 5.0);
    auto g = Grid::uniform_1d(64, 0.0, 1.0);
    for (const Signal& k : {gaussian_kernel(g, 0.05), poisson_kernel(g, 0.8)}) {
        DeconvolutionModel m(g, k);
        for (int trial = 0; trial < 50; ++trial) {
            VectorXd u(64);
            for (auto& x : u) x = trial % 2 ? ud(rng) : (ud(rng) < 4.0 ? 0.0 : ud(rng));
            EXPECT_GE(m.apply(Signal(g, u)).values().minCoeff(), 0.0);
        }
    }
}

TEST(Deconvolution, AdjointAndLinearity)
{
    std::mt19937_64 rng(3);
    auto g = Grid::uniform_1d(50, 0.0, 2.0);
    DeconvolutionModel m(g, poisson_kernel(g, 0.9));
    const Signal u(g, randn(50, rng));
    EXPECT_LT(check_adjoint(m, u, 10, 4), 1e-12);
    const Signal h(g, randn(50, rng));
    EXPECT_LT(norm(m.derivative(u, h) - m.apply(h)), 1e-14 * norm(m.apply(h)) + 1e-300);
}

TEST(Deconvolution, RejectsNegativeKernel)
{
    auto g = Grid::uniform_1d(8);
    VectorXd k = VectorXd::Ones(8);
    k[3] = -0.1;
    EXPECT_THROW(DeconvolutionModel(g, Signal(g, k)), InvalidInputError);
}

TEST(Kernels, PoissonKernelClosedFormAndMass)
{
    // Fourier coefficients r^|k|: discrete sum over the grid of
    // k(x) cos(2 pi m x / L) w equals r^m up to aliasing r^(n - m).
    const double r = 0.7, len = 2.0;
    const Index n = 64;
    auto g = Grid::uniform_1d(n, 0.0, len);
    const Signal k = poisson_kernel(g, r);
    for (int m = 0; m < 6; ++m) {
        double c = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double x = detail::periodic_offset(i, n, len);
            c += g->weights()[i] * k[i] * std::cos(2.0 * std::numbers::pi * m * x / len);
        }
        EXPECT_NEAR(c, std::pow(r, m), 1e-9) << m;
    }
    EXPECT_GT(k.values().minCoeff(), 0.0);
}

TEST(Kernels, GaussianHasUnitMassAndWidth)
{
    auto g = Grid::uniform_1d(200, 0.0, 10.0);
    const Signal k = gaussian_kernel(g, 0.4);
    EXPECT_NEAR(g->inner(k.values(), VectorXd::Ones(200)), 1.0, 1e-14);
    // second moment of a (well-resolved) Gaussian equals width^2
    double m2 = 0.0;
    for (Index i = 0; i < 200; ++i) {
        const double x = detail::periodic_offset(i, 200, 10.0);
        m2 += g->weights()[i] * k[i] * x * x;
    }
    EXPECT_NEAR(m2, 0.16, 1e-10);
}

TEST(TestObjects, ReferenceDetailDecomposes)
{
    auto g = Grid::uniform_1d(128, 0.0, 128.0);
    const Signal ref = reference_profile(g, 0.005, 5.0);
    const Signal t0 = reference_detail_truth(g, 0.005, 5.0, 0.0);
    const Signal t1 = reference_detail_truth(g, 0.005, 5.0, 0.1);
    const Signal t2 = reference_detail_truth(g, 0.005, 5.0, 0.2);
    EXPECT_EQ(t0.values(), ref.values());
    // detail enters linearly
    EXPECT_LT((t2.values() - ref.values() - 2.0 * (t1.values() - ref.values())).norm(), 1e-12);
    EXPECT_GE(t1.values().minCoeff(), 0.005);
    EXPECT_NEAR(ref.values().maxCoeff(), 5.005, 1e-2);
    // the detail stays below 0.1 * (1 + overlap)
    EXPECT_LT((t1.values() - ref.values()).maxCoeff(), 0.12);
}

TEST(TestObjects, PeaksAndPhantom)
{
    auto g = Grid::uniform_1d(100);
    const Signal p = peaks_truth(g, 0.02);
    EXPECT_GE(p.values().minCoeff(), 0.02);
    EXPECT_GT(p.values().maxCoeff(), 5.0);

    auto x = Grid::uniform_2d(32, 32, -0.5, 0.5, -0.5, 0.5);
    const Signal ph = make_cell_phantom(x, 0.4);
    const Signal disk = disk_indicator(x, 0.4);
    for (Index i = 0; i < x->size(); ++i) {
        if (disk[i] == 0.0)
            EXPECT_EQ(ph[i], 0.0);
        else
            EXPECT_GT(ph[i], 0.0);
    }
    // not point-symmetric: phi(x) != phi(-x) somewhere inside the disk
    double asym = 0.0;
    for (Index i = 0; i < x->size(); ++i) asym = std::max(asym, std::abs(ph[i] - ph[x->size() - 1 - i]));
    EXPECT_GT(asym, 0.1);
    EXPECT_THROW(make_cell_phantom(x, 0.4, 0.5), InvalidInputError);
}

namespace {

PhaseRetrievalParams small_pr()
{
    PhaseRetrievalParams p;
    p.support_n = 8;
    p.measure_n = 6;
    p.kappa = 6.0;
    return p;
}

}  // namespace

TEST(PhaseRetrieval, MatchesDirectFourierSum)
{
    std::mt19937_64 rng(7);
    PhaseRetrievalModel m(small_pr());
    const GridPtr& xg = m.input_grid();
    const GridPtr& yg = m.output_grid();
    const VectorXd phi = randn(xg->size(), rng);
    const VectorXd f = m.apply(Signal(xg, phi)).values();
    for (Index q = 0; q < yg->size(); ++q) {
        const Point& xi = yg->points()[static_cast<size_t>(q)];
        std::complex<double> s = 0.0;
        for (Index i = 0; i < xg->size(); ++i) {
            const Point& x = xg->points()[static_cast<size_t>(i)];
            if (x.x * x.x + x.y * x.y >= 0.16)
                continue;
            s += xg->weights()[i] * std::polar(1.0, -(xi.x * x.x + xi.y * x.y) + phi[i]);
        }
        EXPECT_NEAR(f[q], std::norm(s), 1e-12 * (1.0 + std::norm(s)));
    }
}

TEST(PhaseRetrieval, GlobalPhaseInvarianceAndNonnegativity)
{
    std::mt19937_64 rng(8);
    PhaseRetrievalModel m(small_pr());
    const GridPtr& xg = m.input_grid();
    const VectorXd phi = randn(xg->size(), rng);
    const Signal f0 = m.apply(Signal(xg, phi));
    for (double c : {0.3, -1.7, 2.0 * std::numbers::pi}) {
        const Signal f1 = m.apply(Signal(xg, (phi.array() + c).matrix()));
        EXPECT_LT((f1.values() - f0.values()).norm(), 1e-12 * f0.values().norm());
    }
    EXPECT_GE(f0.values().minCoeff(), 0.0);
    // the constant direction lies in the kernel of the derivative
    const Signal ones = Signal::constant(xg, 1.0);
    EXPECT_LT(norm(m.derivative(Signal(xg, phi), ones)), 1e-12 * norm(f0));
}

TEST(PhaseRetrieval, AdjointAndDerivativeOrder)
{
    std::mt19937_64 rng(9);
    PhaseRetrievalModel m;  // default desk scale
    const GridPtr& xg = m.input_grid();
    const Signal phi(xg, randn(xg->size(), rng));
    EXPECT_LT(check_adjoint(m, phi, 5, 10), 1e-8);
    Signal h(xg, randn(xg->size(), rng));
    h = (1.0 / norm(h)) * h;
    EXPECT_GE(check_derivative(m, phi, h).order, 0.9);
}

TEST(PhaseRetrieval, RejectsBadParameters)
{
    PhaseRetrievalParams p;
    p.rho = 0.7;  // larger than the half width
    EXPECT_THROW(PhaseRetrievalModel{p}, InvalidInputError);
}
