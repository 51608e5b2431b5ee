#pragma once

// Shared domain types: grids, signals, the forward-model contract and the
// quadratic penalty with its Bregman distance.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "irnm/error.hpp"

namespace irnm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

class Grid;
using GridPtr = std::shared_ptr<const Grid>;

// Discretization of a domain: ordered points with positive quadrature
// weights. Uniform grids additionally remember their tensor shape and extent
// so that periodic operators (convolution, Sobolev weighting) can be built.
struct GridShape {
    Index nx = 0;
    Index ny = 1;
    double lx = 0.0;
    double ly = 0.0;
    bool uniform = false;
};

class Grid {
public:
    using Shape = GridShape;

    Grid(std::vector<Point> points, VectorXd weights, double total_measure, Shape shape = {})
        : points_(std::move(points)), weights_(std::move(weights)), shape_(shape)
    {
        if (points_.empty())
            throw InvalidInputError("grid needs at least one point");
        if (static_cast<Index>(points_.size()) != weights_.size())
            throw AlignmentError("grid: points and weights differ in length");
        for (Index i = 0; i < weights_.size(); ++i) {
            if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i]))
                throw InvalidInputError("grid weights must be positive and finite");
        }
        const double sum = weights_.sum();
        if (std::abs(sum - total_measure) > 1e-12 * std::abs(total_measure))
            throw InvalidInputError("grid weights do not sum to the domain measure");
        measure_ = total_measure;
    }

    // Cell-centred uniform grid on [lo, hi).
    static GridPtr uniform_1d(Index n, double lo = 0.0, double hi = 1.0)
    {
        if (n < 1 || !(hi > lo))
            throw InvalidInputError("uniform_1d: need n >= 1 and hi > lo");
        const double h = (hi - lo) / static_cast<double>(n);
        std::vector<Point> pts(static_cast<size_t>(n));
        for (Index i = 0; i < n; ++i)
            pts[static_cast<size_t>(i)] = {lo + (static_cast<double>(i) + 0.5) * h, 0.0};
        VectorXd w = VectorXd::Constant(n, h);
        // Summing n equal weights can drift from hi-lo by a few ulps.
        return std::make_shared<const Grid>(std::move(pts), std::move(w), h * static_cast<double>(n),
                                            Shape{n, 1, hi - lo, 0.0, true});
    }

    // Cell-centred tensor grid on [xlo, xhi) x [ylo, yhi); index = i * ny + j.
    static GridPtr uniform_2d(Index nx, Index ny, double xlo, double xhi, double ylo, double yhi)
    {
        if (nx < 1 || ny < 1 || !(xhi > xlo) || !(yhi > ylo))
            throw InvalidInputError("uniform_2d: bad extent");
        const double hx = (xhi - xlo) / static_cast<double>(nx);
        const double hy = (yhi - ylo) / static_cast<double>(ny);
        std::vector<Point> pts;
        pts.reserve(static_cast<size_t>(nx * ny));
        for (Index i = 0; i < nx; ++i)
            for (Index j = 0; j < ny; ++j)
                pts.push_back({xlo + (static_cast<double>(i) + 0.5) * hx,
                               ylo + (static_cast<double>(j) + 0.5) * hy});
        VectorXd w = VectorXd::Constant(nx * ny, hx * hy);
        return std::make_shared<const Grid>(std::move(pts), std::move(w),
                                            hx * hy * static_cast<double>(nx * ny),
                                            Shape{nx, ny, xhi - xlo, yhi - ylo, true});
    }

    // Unit-weight grid of n points; handy for purely discrete vectors.
    static GridPtr counting(Index n)
    {
        std::vector<Point> pts(static_cast<size_t>(n));
        for (Index i = 0; i < n; ++i)
            pts[static_cast<size_t>(i)] = {static_cast<double>(i), 0.0};
        return std::make_shared<const Grid>(std::move(pts), VectorXd::Ones(n), static_cast<double>(n));
    }

    Index size() const { return weights_.size(); }
    const std::vector<Point>& points() const { return points_; }
    const VectorXd& weights() const { return weights_; }
    double total_measure() const { return measure_; }
    const Shape& shape() const { return shape_; }
    bool is_2d() const { return shape_.uniform && shape_.ny > 1; }

    double inner(const VectorXd& a, const VectorXd& b) const
    {
        return (weights_.array() * a.array() * b.array()).sum();
    }
    double norm(const VectorXd& a) const { return std::sqrt(inner(a, a)); }

    bool same_as(const Grid& other) const
    {
        return this == &other || (size() == other.size() && weights_ == other.weights_);
    }

private:
    std::vector<Point> points_;
    VectorXd weights_;
    double measure_ = 0.0;
    Shape shape_;
};

// Real vector aligned with a grid. All values are finite.
class Signal {
public:
    Signal() = default;
    Signal(GridPtr grid, VectorXd values) : grid_(std::move(grid)), values_(std::move(values))
    {
        if (!grid_)
            throw InvalidInputError("signal without grid");
        if (values_.size() != grid_->size())
            throw AlignmentError("signal length " + std::to_string(values_.size()) +
                                 " does not match grid size " + std::to_string(grid_->size()));
        if (!values_.allFinite())
            throw InvalidInputError("signal contains non-finite values");
    }

    static Signal constant(const GridPtr& grid, double v)
    {
        return Signal(grid, VectorXd::Constant(grid->size(), v));
    }
    static Signal zeros(const GridPtr& grid) { return constant(grid, 0.0); }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    const VectorXd& values() const { return values_; }
    Index size() const { return values_.size(); }
    double operator[](Index i) const { return values_[i]; }

    Signal with_values(VectorXd v) const { return Signal(grid_, std::move(v)); }

private:
    GridPtr grid_;
    VectorXd values_;
};

inline void require_aligned(const Signal& a, const Signal& b, const char* what)
{
    if (!a.grid().same_as(b.grid()))
        throw AlignmentError(std::string(what) + ": signals live on different grids");
}

inline void require_on(const Signal& a, const Grid& g, const char* what)
{
    if (!a.grid().same_as(g))
        throw AlignmentError(std::string(what) + ": signal not on the expected grid");
}

inline Signal operator+(const Signal& a, const Signal& b)
{
    require_aligned(a, b, "operator+");
    return a.with_values(a.values() + b.values());
}
inline Signal operator-(const Signal& a, const Signal& b)
{
    require_aligned(a, b, "operator-");
    return a.with_values(a.values() - b.values());
}
inline Signal operator*(double s, const Signal& a) { return a.with_values(s * a.values()); }

inline double inner(const Signal& a, const Signal& b)
{
    require_aligned(a, b, "inner");
    return a.grid().inner(a.values(), b.values());
}
inline double norm(const Signal& a) { return a.grid().norm(a.values()); }

// F'[u] frozen at a point: h -> F'(u;h) and its adjoint with respect to the
// quadrature-weighted inner products of input and output grid.
class Linearization {
public:
    virtual ~Linearization() = default;
    virtual VectorXd apply(const VectorXd& h) const = 0;
    virtual VectorXd adjoint(const VectorXd& r) const = 0;
};

class ForwardModel {
public:
    virtual ~ForwardModel() = default;

    virtual const GridPtr& input_grid() const = 0;
    virtual const GridPtr& output_grid() const = 0;

    virtual Signal apply(const Signal& u) const = 0;
    virtual Signal derivative(const Signal& u, const Signal& h) const = 0;
    virtual Signal adjoint_derivative(const Signal& u, const Signal& r) const = 0;
    virtual bool domain_check(const Signal& /*u*/) const { return true; }

    // Default linearization forwards to derivative/adjoint_derivative;
    // models with expensive state at u override this to cache it.
    virtual std::unique_ptr<Linearization> linearize(const Signal& u) const
    {
        class Forwarding final : public Linearization {
        public:
            Forwarding(const ForwardModel& m, Signal u) : m_(m), u_(std::move(u)) {}
            VectorXd apply(const VectorXd& h) const override
            {
                return m_.derivative(u_, Signal(m_.input_grid(), h)).values();
            }
            VectorXd adjoint(const VectorXd& r) const override
            {
                return m_.adjoint_derivative(u_, Signal(m_.output_grid(), r)).values();
            }

        private:
            const ForwardModel& m_;
            Signal u_;
        };
        return std::make_unique<Forwarding>(*this, u);
    }
};

// Positive definite operator G realizing the inner product of the penalty,
// R(u) = <u-u0, G(u-u0)>. Self-adjoint with respect to the grid inner product.
class GramOperator {
public:
    enum class Kind { identity, diagonal, dense };

    static GramOperator identity() { return GramOperator(Kind::identity, {}, {}); }

    static GramOperator diagonal(VectorXd d)
    {
        if (!(d.array() > 0.0).all())
            throw InvalidInputError("diagonal Gram operator must be positive");
        return GramOperator(Kind::diagonal, std::move(d), {});
    }

    static GramOperator dense(MatrixXd m)
    {
        if (m.rows() != m.cols())
            throw InvalidInputError("dense Gram operator must be square");
        return GramOperator(Kind::dense, {}, std::move(m));
    }

    // Periodic Sobolev weighting: diagonal in the discrete Fourier basis with
    // symbol (1 + |k|^2)^s. Realized as a dense circulant matrix, which is
    // fine for the desk-scale grids used here.
    static GramOperator sobolev(const Grid& grid, double s)
    {
        const auto& sh = grid.shape();
        if (!sh.uniform)
            throw InvalidInputError("Sobolev Gram operator needs a uniform grid");
        if (s < 0.0)
            throw InvalidInputError("Sobolev index must be nonnegative");
        if (s == 0.0)
            return identity();
        const Index nx = sh.nx;
        const Index ny = sh.ny;
        const double two_pi = 2.0 * std::numbers::pi;
        auto freq = [](Index m, Index n) { return static_cast<double>(m <= n / 2 ? m : m - n); };

        // Circulant kernel c(a, b) = (1/N) sum_k lambda(k) cos(2 pi (m1 a/nx + m2 b/ny)).
        MatrixXd kernel = MatrixXd::Zero(nx, ny);
        for (Index m1 = 0; m1 < nx; ++m1) {
            const double k1 = two_pi * freq(m1, nx) / sh.lx;
            for (Index m2 = 0; m2 < ny; ++m2) {
                const double k2 = ny > 1 ? two_pi * freq(m2, ny) / sh.ly : 0.0;
                const double lambda = std::pow(1.0 + k1 * k1 + k2 * k2, s);
                for (Index a = 0; a < nx; ++a) {
                    const double pa = two_pi * static_cast<double>(m1 * a % nx) / static_cast<double>(nx);
                    for (Index b = 0; b < ny; ++b) {
                        const double pb =
                            two_pi * static_cast<double>(m2 * b % ny) / static_cast<double>(ny);
                        kernel(a, b) += lambda * std::cos(pa + pb);
                    }
                }
            }
        }
        kernel /= static_cast<double>(nx * ny);

        const Index n = nx * ny;
        MatrixXd g(n, n);
        for (Index p = 0; p < n; ++p) {
            const Index pi = p / ny, pj = p % ny;
            for (Index q = 0; q < n; ++q) {
                const Index qi = q / ny, qj = q % ny;
                g(p, q) = kernel((pi - qi + nx) % nx, (pj - qj + ny) % ny);
            }
        }
        return dense(std::move(g));
    }

    Kind kind() const { return kind_; }

    VectorXd apply(const VectorXd& v) const
    {
        switch (kind_) {
        case Kind::identity:
            return v;
        case Kind::diagonal:
            if (diag_.size() != v.size())
                throw AlignmentError("Gram operator size mismatch");
            return diag_.cwiseProduct(v);
        case Kind::dense:
            if (dense_.cols() != v.size())
                throw AlignmentError("Gram operator size mismatch");
            return dense_ * v;
        }
        return v;
    }

    MatrixXd as_matrix(Index n) const
    {
        switch (kind_) {
        case Kind::identity:
            return MatrixXd::Identity(n, n);
        case Kind::diagonal:
            return diag_.asDiagonal();
        case Kind::dense:
            return dense_;
        }
        return {};
    }

private:
    GramOperator(Kind k, VectorXd d, MatrixXd m) : kind_(k), diag_(std::move(d)), dense_(std::move(m)) {}

    Kind kind_;
    VectorXd diag_;
    MatrixXd dense_;
};

// R(u) = <u - u0, G (u - u0)>_X. For this Hilbert penalty the Bregman
// distance is the G-norm distance and C_bd = 1 when q = 2.
class QuadraticPenalty {
public:
    QuadraticPenalty(Signal u0, GramOperator gram, double q = 2.0, double c_bd = 1.0)
        : u0_(std::move(u0)), gram_(std::move(gram)), q_(q), c_bd_(c_bd)
    {
        if (q_ < 1.0)
            throw InvalidInputError("penalty exponent q must be >= 1");
        if (!(c_bd_ > 0.0))
            throw InvalidInputError("C_bd must be positive");
    }

    const Signal& u0() const { return u0_; }
    const GramOperator& gram() const { return gram_; }
    double q() const { return q_; }
    double c_bd() const { return c_bd_; }
    const Grid& grid() const { return u0_.grid(); }

    VectorXd apply_gram(const VectorXd& v) const { return gram_.apply(v); }

    // <a, G b>_X
    double gram_inner(const VectorXd& a, const VectorXd& b) const
    {
        return grid().inner(a, gram_.apply(b));
    }

private:
    Signal u0_;
    GramOperator gram_;
    double q_;
    double c_bd_;
};

inline double bregman_distance(const QuadraticPenalty& p, const Signal& u, const Signal& uref)
{
    require_on(u, p.grid(), "bregman_distance");
    require_aligned(u, uref, "bregman_distance");
    const VectorXd d = u.values() - uref.values();
    return p.gram_inner(d, d);
}

inline double penalty_value(const QuadraticPenalty& p, const Signal& u)
{
    return bregman_distance(p, u, p.u0());
}

// Randomized inner-product test of F'[u]^*. Returns the largest
// |<F'h, r>_Y - <h, F'^* r>_X| / (|h| |r|) over `trials` Gaussian pairs.
inline double check_adjoint(const ForwardModel& model, const Signal& u, int trials, std::uint64_t seed)
{
    if (!model.domain_check(u))
        throw InvalidInputError("check_adjoint: u outside the model domain");
    const Grid& gx = *model.input_grid();
    const Grid& gy = *model.output_grid();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto lin = model.linearize(u);
    double worst = 0.0;
    for (int k = 0; k < trials; ++k) {
        VectorXd h(gx.size()), r(gy.size());
        for (Index i = 0; i < h.size(); ++i) h[i] = normal(rng);
        for (Index i = 0; i < r.size(); ++i) r[i] = normal(rng);
        const double nh = gx.norm(h), nr = gy.norm(r);
        if (nh == 0.0 || nr == 0.0)
            continue;
        const double lhs = gy.inner(lin->apply(h), r);
        const double rhs = gx.inner(h, lin->adjoint(r));
        worst = std::max(worst, std::abs(lhs - rhs) / (nh * nr));
    }
    return worst;
}

struct DerivativeCheck {
    std::vector<double> eps;
    std::vector<double> remainder;  // |F(u+eps h) - F(u) - eps F'(u;h)| / eps
    double order = 0.0;             // log-log slope of remainder vs eps
};

// Finite-difference check of the directional derivative. For a smooth model
// the remainder decays linearly in eps (order ~ 1); a linear model gives
// remainders at rounding level and order 0 is meaningless, so callers should
// look at the remainders themselves.
inline DerivativeCheck check_derivative(const ForwardModel& model, const Signal& u, const Signal& h,
                                        std::vector<double> eps = {1e-3, 1e-4, 1e-5})
{
    DerivativeCheck out;
    const Signal fu = model.apply(u);
    const Signal dfu = model.derivative(u, h);
    for (double e : eps) {
        const Signal fe = model.apply(u + e * h);
        const VectorXd rem = fe.values() - fu.values() - e * dfu.values();
        out.eps.push_back(e);
        out.remainder.push_back(fu.grid().norm(rem) / e);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(eps.size());
    for (size_t i = 0; i < eps.size(); ++i) {
        const double x = std::log(out.eps[i]);
        const double y = std::log(std::max(out.remainder[i], 1e-300));
        sx += x; sy += y; sxx += x * x; sxy += x * y;
    }
    out.order = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return out;
}

}  // namespace irnm
