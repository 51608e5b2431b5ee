#pragma once

// Shipped forward models: periodic convolution (linear, positivity
// preserving) and the Fourier-modulus phase-retrieval operator.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

#include "irnm/core.hpp"

namespace irnm {

// Circular convolution on a uniform periodic grid,
//   (F u)(x_i) = sum_j w_j k(x_i - x_j) u_j,
// with the kernel stored as a Signal indexed by displacement. Realized as a
// dense matrix, which is plenty for desk-scale grids.
class DeconvolutionModel final : public ForwardModel {
public:
    DeconvolutionModel(GridPtr grid, const Signal& kernel) : grid_(std::move(grid))
    {
        if (!grid_ || !grid_->shape().uniform)
            throw InvalidInputError("deconvolution needs a uniform periodic grid");
        require_on(kernel, *grid_, "DeconvolutionModel");
        if ((kernel.values().array() < 0.0).any())
            throw InvalidInputError("deconvolution kernel must be nonnegative");
        const Index nx = grid_->shape().nx, ny = grid_->shape().ny, n = grid_->size();
        mat_.resize(n, n);
        for (Index p = 0; p < n; ++p) {
            const Index pi = p / ny, pj = p % ny;
            for (Index q = 0; q < n; ++q) {
                const Index qi = q / ny, qj = q % ny;
                const Index d = ((pi - qi + nx) % nx) * ny + (pj - qj + ny) % ny;
                mat_(p, q) = kernel[d] * grid_->weights()[q];
            }
        }
        kernel_mass_ = grid_->inner(kernel.values(), VectorXd::Ones(n));
    }

    const GridPtr& input_grid() const override { return grid_; }
    const GridPtr& output_grid() const override { return grid_; }
    const MatrixXd& matrix() const { return mat_; }
    double kernel_mass() const { return kernel_mass_; }

    Signal apply(const Signal& u) const override
    {
        require_on(u, *grid_, "deconv_apply");
        return u.with_values(mat_ * u.values());
    }
    Signal derivative(const Signal& /*u*/, const Signal& h) const override { return apply(h); }
    // Weights are uniform, so the adjoint in the weighted inner products is the transpose.
    Signal adjoint_derivative(const Signal& /*u*/, const Signal& r) const override
    {
        require_on(r, *grid_, "deconv_adjoint");
        return r.with_values(mat_.transpose() * r.values());
    }

    std::unique_ptr<Linearization> linearize(const Signal& /*u*/) const override
    {
        class Lin final : public Linearization {
        public:
            explicit Lin(const MatrixXd& m) : m_(m) {}
            VectorXd apply(const VectorXd& h) const override { return m_ * h; }
            VectorXd adjoint(const VectorXd& r) const override { return m_.transpose() * r; }

        private:
            const MatrixXd& m_;
        };
        return std::make_unique<Lin>(mat_);
    }

private:
    GridPtr grid_;
    MatrixXd mat_;
    double kernel_mass_ = 0.0;
};

namespace detail {
inline double periodic_offset(Index i, Index n, double len)
{
    const Index m = i <= n / 2 ? i : i - n;
    return static_cast<double>(m) * len / static_cast<double>(n);
}
}  // namespace detail

// Periodic Poisson kernel on [0, L): Fourier coefficients r^|k|, i.e.
//   P_r(x) = (1/L) (1 - r^2) / (1 - 2 r cos(2 pi x / L) + r^2).
// Positive, unit mass, geometrically decaying spectrum. On 2D grids the
// tensor product is used.
inline Signal poisson_kernel(const GridPtr& grid, double r)
{
    if (!(r > 0.0) || !(r < 1.0))
        throw InvalidInputError("poisson_kernel: r must lie in (0, 1)");
    const auto& sh = grid->shape();
    if (!sh.uniform)
        throw InvalidInputError("poisson_kernel needs a uniform grid");
    auto p1 = [r](double x, double len) {
        return (1.0 - r * r) / (len * (1.0 - 2.0 * r * std::cos(2.0 * std::numbers::pi * x / len) + r * r));
    };
    VectorXd k(grid->size());
    for (Index i = 0; i < sh.nx; ++i)
        for (Index j = 0; j < sh.ny; ++j) {
            double v = p1(detail::periodic_offset(i, sh.nx, sh.lx), sh.lx);
            if (sh.ny > 1)
                v *= p1(detail::periodic_offset(j, sh.ny, sh.ly), sh.ly);
            k[i * sh.ny + j] = v;
        }
    return Signal(grid, std::move(k));
}

// Periodized Gaussian of width `width`, normalized to unit discrete mass.
inline Signal gaussian_kernel(const GridPtr& grid, double width)
{
    if (!(width > 0.0))
        throw InvalidInputError("gaussian_kernel: width must be positive");
    const auto& sh = grid->shape();
    if (!sh.uniform)
        throw InvalidInputError("gaussian_kernel needs a uniform grid");
    VectorXd k(grid->size());
    for (Index i = 0; i < sh.nx; ++i)
        for (Index j = 0; j < sh.ny; ++j) {
            const double x = detail::periodic_offset(i, sh.nx, sh.lx);
            const double y = sh.ny > 1 ? detail::periodic_offset(j, sh.ny, sh.ly) : 0.0;
            k[i * sh.ny + j] = std::exp(-(x * x + y * y) / (2.0 * width * width));
        }
    k /= grid->inner(k, VectorXd::Ones(k.size()));
    return Signal(grid, std::move(k));
}

// Nonnegative test object with a high dynamic range: a low background and a
// few narrow peaks of different heights (1D, coordinates in [0, 1)).
inline Signal peaks_truth(const GridPtr& grid, double background = 0.02)
{
    struct Peak {
        double centre, height, width;
    };
    static constexpr Peak peaks[] = {{0.2, 4.0, 0.015}, {0.45, 1.5, 0.03}, {0.7, 6.0, 0.01}, {0.85, 0.8, 0.05}};
    VectorXd v(grid->size());
    for (Index i = 0; i < grid->size(); ++i) {
        const double x = grid->points()[static_cast<size_t>(i)].x;
        double s = background;
        for (const auto& p : peaks) {
            double d = std::abs(x - p.centre);
            d = std::min(d, 1.0 - d);
            s += p.height * std::exp(-d * d / (2.0 * p.width * p.width));
        }
        v[i] = s;
    }
    return Signal(grid, std::move(v));
}

namespace detail {
// Periodic Gaussian bump in relative coordinates s in [0, 1).
inline double periodic_bump(double s, double centre, double height, double width)
{
    double d = std::abs(s - centre);
    d = std::min(d, 1.0 - d);
    return height * std::exp(-d * d / (2.0 * width * width));
}
}  // namespace detail

// Known bright component: background plus one broad bump. Serves as the
// penalty centre for the reference_detail test object. Coordinates are
// relative to the grid extent, so the object does not depend on the length.
inline Signal reference_profile(const GridPtr& grid, double background = 0.005, double height = 5.0)
{
    const Index n = grid->size();
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) {
        const double s = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        v[i] = background + detail::periodic_bump(s, 0.2, height, 0.08);
    }
    return Signal(grid, std::move(v));
}

// reference_profile plus `detail` times four narrow peaks of height <= 1.
inline Signal reference_detail_truth(const GridPtr& grid, double background = 0.005, double height = 5.0,
                                     double detail = 0.1)
{
    if (!(detail >= 0.0))
        throw InvalidInputError("reference_detail_truth: detail must be >= 0");
    struct Peak {
        double centre, height, width;
    };
    static constexpr Peak peaks[] = {{0.5, 1.0, 0.015}, {0.6, 0.7, 0.02}, {0.72, 1.0, 0.015}, {0.85, 0.8, 0.02}};
    Signal ref = reference_profile(grid, background, height);
    VectorXd v = ref.values();
    const Index n = grid->size();
    for (Index i = 0; i < n; ++i) {
        const double s = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        for (const auto& p : peaks) v[i] += detail * detail::periodic_bump(s, p.centre, p.height, p.width);
    }
    return Signal(grid, std::move(v));
}

struct PhaseRetrievalParams {
    Index support_n = 32;
    Index measure_n = 48;
    double half_width = 0.5;  // support grid covers [-half_width, half_width)^2
    double rho = 0.4;
    double kappa = 16.0;
};

// Fourier-modulus operator
//   (F phi)(xi) = | sum_x w_x m(x) e^{-i xi.x} e^{i phi(x)} |^2
// on a square support grid with disk mask m = 1_{|x| < rho}, measured on a
// tensor grid of frequencies in [-kappa, kappa]^2. The transform is separable,
// A = E Z E^T with Z = w m e^{i phi} arranged as an nx x ny matrix.
class PhaseRetrievalModel final : public ForwardModel {
public:
    using MatrixXcd = Eigen::MatrixXcd;
    using cd = std::complex<double>;

    using Params = PhaseRetrievalParams;

    explicit PhaseRetrievalModel(Params p = {}) : p_(p)
    {
        if (p_.support_n < 2 || p_.measure_n < 2 || !(p_.rho > 0.0) || !(p_.kappa > 0.0) ||
            !(p_.rho <= p_.half_width))
            throw InvalidInputError("phase retrieval: bad parameters");
        xgrid_ = Grid::uniform_2d(p_.support_n, p_.support_n, -p_.half_width, p_.half_width, -p_.half_width,
                                  p_.half_width);
        ygrid_ = Grid::uniform_2d(p_.measure_n, p_.measure_n, -p_.kappa, p_.kappa, -p_.kappa, p_.kappa);
        const Index n = p_.support_n, m = p_.measure_n;
        mask_ = VectorXd::Zero(n * n);
        for (Index i = 0; i < n * n; ++i) {
            const Point& x = xgrid_->points()[static_cast<size_t>(i)];
            mask_[i] = (x.x * x.x + x.y * x.y < p_.rho * p_.rho) ? 1.0 : 0.0;
        }
        // 1D coordinates
        std::vector<double> xs(static_cast<size_t>(n)), ks(static_cast<size_t>(m));
        for (Index a = 0; a < n; ++a) xs[static_cast<size_t>(a)] = xgrid_->points()[static_cast<size_t>(a * n)].x;
        for (Index q = 0; q < m; ++q) ks[static_cast<size_t>(q)] = ygrid_->points()[static_cast<size_t>(q * m)].x;
        e_.resize(m, n);
        for (Index q = 0; q < m; ++q)
            for (Index a = 0; a < n; ++a)
                e_(q, a) = std::polar(1.0, -ks[static_cast<size_t>(q)] * xs[static_cast<size_t>(a)]);
        wx_ = xgrid_->weights()[0];
        wy_ = ygrid_->weights()[0];
    }

    const GridPtr& input_grid() const override { return xgrid_; }
    const GridPtr& output_grid() const override { return ygrid_; }
    const VectorXd& mask() const { return mask_; }
    const Params& params() const { return p_; }

    Signal apply(const Signal& phi) const override
    {
        require_on(phi, *xgrid_, "pr_apply");
        const MatrixXcd a = transform(phase(phi.values()));
        return Signal(ygrid_, modulus2(a));
    }

    Signal derivative(const Signal& phi, const Signal& h) const override
    {
        return Signal(ygrid_, Lin(*this, phi.values()).apply(h.values()));
    }

    Signal adjoint_derivative(const Signal& phi, const Signal& r) const override
    {
        return Signal(xgrid_, Lin(*this, phi.values()).adjoint(r.values()));
    }

    std::unique_ptr<Linearization> linearize(const Signal& phi) const override
    {
        require_on(phi, *xgrid_, "pr_linearize");
        return std::make_unique<Lin>(*this, phi.values());
    }

private:
    // e^{i phi} on the support grid, as a flat vector.
    Eigen::VectorXcd phase(const VectorXd& phi) const
    {
        Eigen::VectorXcd z(phi.size());
        for (Index i = 0; i < phi.size(); ++i) z[i] = std::polar(1.0, phi[i]);
        return z;
    }

    // D[z](xi) = sum_x w m(x) e^{-i xi.x} z(x)
    MatrixXcd transform(const Eigen::VectorXcd& z) const
    {
        const Index n = p_.support_n;
        MatrixXcd zm(n, n);
        for (Index a = 0; a < n; ++a)
            for (Index b = 0; b < n; ++b) zm(a, b) = wx_ * mask_[a * n + b] * z[a * n + b];
        return e_ * zm * e_.transpose();
    }

    // sum_xi v y(xi) e^{+i xi.x}
    MatrixXcd back_transform(const MatrixXcd& y) const { return e_.adjoint() * y * e_.conjugate(); }

    static VectorXd modulus2(const MatrixXcd& a)
    {
        const Index m = a.rows();
        VectorXd out(m * a.cols());
        for (Index p = 0; p < m; ++p)
            for (Index q = 0; q < a.cols(); ++q) out[p * a.cols() + q] = std::norm(a(p, q));
        return out;
    }

    class Lin final : public Linearization {
    public:
        Lin(const PhaseRetrievalModel& m, const VectorXd& phi) : m_(m), z_(m.phase(phi)), a_(m.transform(z_)) {}

        // F'(phi; h) = 2 Re(conj(A) D[i e^{i phi} h])
        VectorXd apply(const VectorXd& h) const override
        {
            if (h.size() != z_.size())
                throw AlignmentError("pr_derivative: direction has wrong length");
            Eigen::VectorXcd v(h.size());
            for (Index i = 0; i < h.size(); ++i) v[i] = cd(0.0, 1.0) * z_[i] * h[i];
            const MatrixXcd d = m_.transform(v);
            const Index mm = d.rows();
            VectorXd out(mm * d.cols());
            for (Index p = 0; p < mm; ++p)
                for (Index q = 0; q < d.cols(); ++q)
                    out[p * d.cols() + q] = 2.0 * (std::conj(a_(p, q)) * d(p, q)).real();
            return out;
        }

        // F'*r (x) = 2 m(x) Im(e^{-i phi(x)} B(x)),  B(x) = sum_xi v r A e^{i xi.x}
        VectorXd adjoint(const VectorXd& r) const override
        {
            const Index mm = a_.rows();
            if (r.size() != mm * a_.cols())
                throw AlignmentError("pr_adjoint: residual has wrong length");
            MatrixXcd y(mm, a_.cols());
            for (Index p = 0; p < mm; ++p)
                for (Index q = 0; q < a_.cols(); ++q) y(p, q) = m_.wy_ * r[p * a_.cols() + q] * a_(p, q);
            const MatrixXcd b = m_.back_transform(y);
            const Index n = m_.p_.support_n;
            VectorXd out(n * n);
            for (Index a = 0; a < n; ++a)
                for (Index c = 0; c < n; ++c) {
                    const Index i = a * n + c;
                    out[i] = 2.0 * m_.mask_[i] * (std::conj(z_[i]) * b(a, c)).imag();
                }
            return out;
        }

    private:
        const PhaseRetrievalModel& m_;
        Eigen::VectorXcd z_;
        MatrixXcd a_;
    };

    Params p_;
    GridPtr xgrid_, ygrid_;
    VectorXd mask_;
    MatrixXcd e_;
    double wx_ = 0.0, wy_ = 0.0;
};

// Synthetic phase object on the support grid: value 1 in the annulus
// rho - band <= |x| < rho, smooth interior bumps on top of the level 1
// elsewhere inside the disk, 0 outside.
inline Signal make_cell_phantom(const GridPtr& grid, double rho, double band = 0.1)
{
    if (!(rho > 0.0) || !(band > 0.0) || band >= rho)
        throw InvalidInputError("make_cell_phantom: need 0 < band < rho");
    struct Bump {
        double cx, cy, height, width;
    };
    static constexpr Bump bumps[] = {{-0.12, 0.08, 0.8, 0.07}, {0.06, 0.12, 0.5, 0.05}, {0.08, -0.1, -0.4, 0.06}};
    VectorXd v(grid->size());
    for (Index i = 0; i < grid->size(); ++i) {
        const Point& p = grid->points()[static_cast<size_t>(i)];
        const double r = std::sqrt(p.x * p.x + p.y * p.y);
        if (r >= rho) {
            v[i] = 0.0;
            continue;
        }
        double s = 1.0;
        if (r < rho - band)
            for (const auto& b : bumps) {
                const double dx = p.x - b.cx, dy = p.y - b.cy;
                s += b.height * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
            }
        v[i] = s;
    }
    return Signal(grid, std::move(v));
}

// Characteristic function of the disk |x| < rho.
inline Signal disk_indicator(const GridPtr& grid, double rho)
{
    VectorXd v(grid->size());
    for (Index i = 0; i < grid->size(); ++i) {
        const Point& p = grid->points()[static_cast<size_t>(i)];
        v[i] = (p.x * p.x + p.y * p.y < rho * rho) ? 1.0 : 0.0;
    }
    return Signal(grid, std::move(v));
}

}  // namespace irnm
