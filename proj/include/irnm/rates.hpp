#pragma once

// Index-function calculus (phi, Theta, vartheta, psi, Psi, Lambda) and the
// small regression helpers used to read convergence orders off experiments.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "irnm/core.hpp"

namespace irnm {

namespace detail {
// Smallest argument used internally when an inverse has to reach below the
// public working interval (e.g. inside the Psi integral).
inline constexpr double kTinyArg = 1e-300;

// x in [a, b] with f(x) ~ y for increasing f, bisecting in log x.
template <class F>
double log_bisect(const F& f, double y, double a, double b)
{
    double lo = std::log(a), hi = std::log(b);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        if (f(std::exp(mid)) < y)
            lo = mid;
        else
            hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
}
}  // namespace detail

// Continuous strictly increasing function on [0, t_hi] with value 0 at 0.
// Public evaluation is restricted to {0} U [t_lo, t_hi]; `raw` evaluates the
// underlying formula anywhere in (0, t_hi] for internal constructions.
class IndexFunction {
public:
    enum class Kind { hoelder, log, custom };
    using Fn = std::function<double(double)>;

    IndexFunction(Kind kind, double param, Fn f, Fn df, double t_lo, double t_hi, Fn inv = {})
        : kind_(kind), param_(param), f_(std::move(f)), df_(std::move(df)), inv_(std::move(inv)),
          t_lo_(t_lo), t_hi_(t_hi)
    {
        if (!(t_lo_ > 0.0) || !(t_hi_ > t_lo_))
            throw InvalidInputError("index function: need 0 < t_lo < t_hi");
    }

    // Closed form for (phi')^{-1}, when known.
    IndexFunction& with_derivative_inverse(Fn dinv)
    {
        dinv_ = std::move(dinv);
        return *this;
    }

    Kind kind() const { return kind_; }
    double param() const { return param_; }
    double t_lo() const { return t_lo_; }
    double t_hi() const { return t_hi_; }

    double raw(double t) const { return t <= 0.0 ? 0.0 : f_(t); }

    double operator()(double t) const
    {
        if (t == 0.0)
            return 0.0;
        check_arg(t);
        return f_(std::min(t, t_hi_));
    }

    double derivative(double t) const
    {
        if (df_)
            return df_(t);
        // central difference in log t; only used for custom kinds
        const double h = 1e-6 * t;
        return (f_(t + h) - f_(t - h)) / (2.0 * h);
    }

    // Inverse on [f(t_lo), f(t_hi)] (and 0 -> 0).
    double inverse(double y) const
    {
        if (y == 0.0)
            return 0.0;
        const double ylo = f_(t_lo_), yhi = f_(t_hi_);
        if (!(y >= ylo * (1.0 - 1e-13)) || !(y <= yhi * (1.0 + 1e-13)))
            throw RangeError("index function inverse: value outside the represented range");
        return raw_inverse(y, t_lo_);
    }

    // Inverse that may go below t_lo (down to 1e-300).
    double raw_inverse(double y, double floor = detail::kTinyArg) const
    {
        if (y <= 0.0)
            return 0.0;
        if (inv_)
            return std::min(inv_(y), t_hi_);
        if (y >= f_(t_hi_))
            return t_hi_;
        if (y <= f_(floor))
            return floor;
        return detail::log_bisect(f_, y, floor, t_hi_);
    }

    // Generalized inverse of the (nonincreasing) derivative: largest t with
    // phi'(t) >= y, clamped to [1e-300, t_hi].
    double derivative_inverse(double y) const
    {
        if (dinv_)
            return std::clamp(dinv_(y), detail::kTinyArg, t_hi_);
        auto neg = [this](double t) { return -derivative(t); };
        if (derivative(t_hi_) >= y)
            return t_hi_;
        if (derivative(detail::kTinyArg) <= y)
            return detail::kTinyArg;
        return detail::log_bisect(neg, -y, detail::kTinyArg, t_hi_);
    }

private:
    void check_arg(double t) const
    {
        if (!(t >= t_lo_ * (1.0 - 1e-13)) || !(t <= t_hi_ * (1.0 + 1e-13)))
            throw RangeError("index function evaluated outside [" + std::to_string(t_lo_) + ", " +
                             std::to_string(t_hi_) + "]");
    }

    Kind kind_;
    double param_;
    Fn f_, df_, inv_, dinv_;
    double t_lo_, t_hi_;
};

inline constexpr double kWorkLo = 1e-12;
inline constexpr double kWorkHi = 1.0;

// t^nu with nu in (0, 1/2].
inline IndexFunction hoelder(double nu)
{
    if (!(nu > 0.0) || !(nu <= 0.5))
        throw InvalidInputError("hoelder: nu must lie in (0, 1/2]");
    IndexFunction f(
        IndexFunction::Kind::hoelder, nu, [nu](double t) { return std::pow(t, nu); },
        [nu](double t) { return nu * std::pow(t, nu - 1.0); }, kWorkLo, kWorkHi,
        [nu](double y) { return std::pow(y, 1.0 / nu); });
    f.with_derivative_inverse([nu](double y) { return std::pow(y / nu, 1.0 / (nu - 1.0)); });
    return f;
}

// Exponent of the additive-form index function that corresponds to a
// classical source condition of order nu: 2 nu / (1 + 2 nu).
inline double additive_exponent(double nu) { return 2.0 * nu / (1.0 + 2.0 * nu); }

// (-ln t)^(-p) on (0, e^{-p-1}], continued by its tangent line beyond the
// splice so that the result stays concave.
inline IndexFunction log_index(double p)
{
    if (!(p > 0.0) || !std::isfinite(p))
        throw InvalidInputError("log_index: p must be positive");
    const double t0 = std::exp(-p - 1.0);
    const double v0 = std::pow(p + 1.0, -p);
    const double s0 = p * std::pow(p + 1.0, -p - 1.0) / t0;
    auto f = [=](double t) {
        if (t <= t0)
            return std::pow(-std::log(t), -p);
        return v0 + s0 * (t - t0);
    };
    auto df = [=](double t) {
        if (t <= t0)
            return p * std::pow(-std::log(t), -p - 1.0) / t;
        return s0;
    };
    auto inv = [=](double y) {
        if (y <= v0)
            return std::exp(-std::pow(y, -1.0 / p));
        return t0 + (y - v0) / s0;
    };
    return IndexFunction(IndexFunction::Kind::log, p, f, df, kWorkLo, kWorkHi, inv);
}

// Largest t on which phi(t)/sqrt(t) is known to be nonincreasing for the
// shipped kinds (the whole interval for Hoelder, min(e^{-p-1}, e^{-2p}) for log).
inline double sqrt_monotone_limit(const IndexFunction& phi)
{
    if (phi.kind() == IndexFunction::Kind::log)
        return std::min(std::exp(-phi.param() - 1.0), std::exp(-2.0 * phi.param()));
    return phi.t_hi();
}

// Theta(t) = t phi(t)^2.
inline IndexFunction theta(const IndexFunction& phi)
{
    return IndexFunction(
        IndexFunction::Kind::custom, 0.0, [phi](double t) { const double v = phi.raw(t); return t * v * v; },
        [phi](double t) {
            const double v = phi.raw(t);
            return v * v + 2.0 * t * v * phi.derivative(t);
        },
        phi.t_lo(), phi.t_hi());
}

// vartheta(t) = sqrt(t) phi(t).
inline IndexFunction vartheta(const IndexFunction& phi)
{
    return IndexFunction(
        IndexFunction::Kind::custom, 0.0, [phi](double t) { return std::sqrt(t) * phi.raw(t); },
        [phi](double t) {
            return phi.raw(t) / (2.0 * std::sqrt(t)) + std::sqrt(t) * phi.derivative(t);
        },
        phi.t_lo(), phi.t_hi());
}

// psi(s) = 1/phi'(phi^{-1}(s)), with psi^{-1}(b) = phi((phi')^{-1}(1/b)).
inline IndexFunction psi_of(const IndexFunction& phi)
{
    auto f = [phi](double s) { return 1.0 / phi.derivative(phi.raw_inverse(s)); };
    auto inv = [phi](double b) { return phi.raw(phi.derivative_inverse(1.0 / b)); };
    return IndexFunction(IndexFunction::Kind::custom, 0.0, f, {}, phi.raw(phi.t_lo()), phi.raw(phi.t_hi()),
                         inv);
}

namespace detail {
// Adaptive bisection over the non-adaptive 31-point Gauss-Kronrod rule.
// Boost 1.74's own recursion compares the [-1,1] error estimate with the
// scaled integral, so on short intervals it always runs to max depth; the
// estimate is rescaled here instead.
template <class F>
double gk_adaptive(const F& f, double a, double b, double rel_tol, int depth, double abs_tol = -1.0)
{
    double err = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 0, 0.0, &err);
    err *= 0.5 * (b - a);
    if (abs_tol < 0.0)
        abs_tol = rel_tol * std::abs(v);
    if (depth <= 0 || err <= abs_tol || err <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(v))
        return v;
    const double m = 0.5 * (a + b);
    return gk_adaptive(f, a, m, rel_tol, depth - 1, 0.5 * abs_tol) +
           gk_adaptive(f, m, b, rel_tol, depth - 1, 0.5 * abs_tol);
}

inline constexpr double kPsiRelTol = 1e-8;

inline double integrate_psi_inv(const IndexFunction& psi, double a, double b)
{
    auto g = [&psi](double s) { return psi.raw_inverse(s); };
    return gk_adaptive(g, a, b, kPsiRelTol, 30);
}
}  // namespace detail

// Psi(t) = integral_0^t psi^{-1}(s) ds by adaptive Gauss-Kronrod quadrature.
inline IndexFunction big_psi(const IndexFunction& phi)
{
    const IndexFunction psi = psi_of(phi);
    auto f = [psi](double t) { return detail::integrate_psi_inv(psi, 0.0, t); };
    auto df = [psi](double t) { return psi.raw_inverse(t); };
    return IndexFunction(IndexFunction::Kind::custom, 0.0, f, df, kWorkLo, kWorkHi);
}

// Young's identity Psi(b) = b psi^{-1}(b) - phi^{-1}(psi^{-1}(b)); an
// independent evaluation of Psi used to cross-check the quadrature.
inline double big_psi_young(const IndexFunction& phi, double b)
{
    const IndexFunction psi = psi_of(phi);
    const double a = psi.raw_inverse(b);
    return b * a - phi.raw_inverse(a);
}

struct LambdaOptions {
    int points_per_decade = 400;
    int decades = 6;
};

// Lambda = square of the least concave majorant of sqrt(Psi(t)/t), computed
// as the upper hull of {(0,0)} and the log-spaced grid. Between two hull
// vertices that are neighbouring grid points the function itself is used.
inline IndexFunction lambda_of(const IndexFunction& phi, LambdaOptions opt = {})
{
    const IndexFunction psi = psi_of(phi);
    const int n = opt.points_per_decade * opt.decades + 1;
    const double t_min = std::pow(10.0, -opt.decades);

    struct Hull {
        std::vector<double> t, f;      // grid and sqrt(Psi/t)
        std::vector<int> vertex;       // hull vertex indices into t (grid indices); -1 = origin
    };
    auto h = std::make_shared<Hull>();
    h->t.resize(static_cast<size_t>(n));
    h->f.resize(static_cast<size_t>(n));
    double acc = detail::integrate_psi_inv(psi, 0.0, t_min);
    for (int k = 0; k < n; ++k) {
        const double t = t_min * std::pow(10.0, static_cast<double>(k) / opt.points_per_decade);
        if (k > 0)
            acc += detail::integrate_psi_inv(psi, h->t[static_cast<size_t>(k - 1)], t);
        h->t[static_cast<size_t>(k)] = t;
        h->f[static_cast<size_t>(k)] = std::sqrt(acc / t);
    }
    h->t.back() = 1.0;

    // Monotone chain upper hull starting at the origin.
    std::vector<std::pair<double, double>> pts;
    std::vector<int> idx;
    pts.emplace_back(0.0, 0.0);
    idx.push_back(-1);
    for (int k = 0; k < n; ++k) {
        const double x = h->t[static_cast<size_t>(k)], y = h->f[static_cast<size_t>(k)];
        while (pts.size() >= 2) {
            const auto& [x1, y1] = pts[pts.size() - 2];
            const auto& [x2, y2] = pts[pts.size() - 1];
            // drop the middle point if it lies on or below the chord
            if ((y2 - y1) * (x - x1) <= (y - y1) * (x2 - x1)) {
                pts.pop_back();
                idx.pop_back();
            } else {
                break;
            }
        }
        pts.emplace_back(x, y);
        idx.push_back(k);
    }
    h->vertex = idx;

    auto f = [h, psi](double t) {
        if (t <= 0.0)
            return 0.0;
        const auto& v = h->vertex;
        // find hull segment containing t
        size_t lo = 0, hi = v.size() - 1;
        auto tx = [&](size_t i) { return v[i] < 0 ? 0.0 : h->t[static_cast<size_t>(v[i])]; };
        auto fy = [&](size_t i) { return v[i] < 0 ? 0.0 : h->f[static_cast<size_t>(v[i])]; };
        if (t >= tx(hi))
            return fy(hi) * fy(hi);
        while (hi - lo > 1) {
            const size_t mid = (lo + hi) / 2;
            if (tx(mid) <= t)
                lo = mid;
            else
                hi = mid;
        }
        const double x1 = tx(lo), x2 = tx(hi);
        if (t == x1)
            return fy(lo) * fy(lo);
        if (v[lo] >= 0 && v[hi] == v[lo] + 1) {
            const double val = detail::integrate_psi_inv(psi, 0.0, t) / t;
            const double chord = fy(lo) + (fy(hi) - fy(lo)) * (t - x1) / (x2 - x1);
            return std::max(val, chord * chord);
        }
        const double y = fy(lo) + (fy(hi) - fy(lo)) * (t - x1) / (x2 - x1);
        return y * y;
    };
    return IndexFunction(IndexFunction::Kind::custom, 0.0, f, {}, t_min, 1.0);
}

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// Least-squares line through (ln x, ln y).
inline RateFit fit_rate(const std::vector<double>& xs, const std::vector<double>& ys)
{
    if (xs.size() != ys.size())
        throw AlignmentError("fit_rate: xs and ys differ in length");
    if (xs.size() < 3)
        throw InvalidInputError("fit_rate: need at least 3 points");
    const size_t n = xs.size();
    std::vector<double> lx(n), ly(n);
    for (size_t i = 0; i < n; ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0) || !std::isfinite(xs[i]) || !std::isfinite(ys[i]))
            throw InvalidInputError("fit_rate: inputs must be positive and finite");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx == 0.0)
        throw InvalidInputError("fit_rate: xs must not all be equal");
    RateFit out;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    out.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return out;
}

// Named theory constants. None of them is estimated from data.
struct RateAssumptions {
    double c_tc = 1.0;
    double eta = 0.0;
    double c_err = 1.0;
    double c_dec = 1.5;
    double beta = 1.0;
    double beta1 = 0.0;
    double beta2 = 1.0;
    double c_bd = 1.0;
    double q = 2.0;

    void validate() const
    {
        if (c_tc < 1.0 || c_err < 1.0 || !(c_dec > 1.0) || beta1 < 0.0 || beta1 >= 0.5 || q < 1.0)
            throw InvalidInputError("rate assumptions out of range");
    }
};

struct TangentialCone {
    double eta_bar = 0.0;  // max sampled ratio
    double eta = 0.0;      // 2^{2r-2} eta_bar^r
    double c_tc = 1.0;     // max{1/(2^{1-r} - 2^{r-1} eta_bar^r), 2^{r-1} + 2^{2r-2} eta_bar^r}; inf if too large
};

// Sampled tangential cone constant
//   max ||F(u) + F'(u; v-u) - F(v)|| / ||F(u) - F(v)||
// over the given pairs (pairs with F(u) == F(v) are skipped), together with
// the constants it implies for the power-r norm misfit.
inline TangentialCone tangential_cone_probe(const ForwardModel& model, const std::vector<Signal>& us,
                                            const std::vector<Signal>& vs, double r = 2.0)
{
    if (us.size() != vs.size())
        throw AlignmentError("tangential_cone_probe: sample lists differ in length");
    if (r < 1.0)
        throw InvalidInputError("tangential_cone_probe: r must be >= 1");
    TangentialCone out;
    for (size_t k = 0; k < us.size(); ++k) {
        const Signal fu = model.apply(us[k]);
        const Signal fv = model.apply(vs[k]);
        const double den = norm(fu - fv);
        if (den == 0.0)
            continue;
        const Signal lin = fu + model.derivative(us[k], vs[k] - us[k]);
        out.eta_bar = std::max(out.eta_bar, norm(lin - fv) / den);
    }
    const double er = std::pow(out.eta_bar, r);
    out.eta = std::pow(2.0, 2.0 * r - 2.0) * er;
    const double lower = std::pow(2.0, 1.0 - r) - std::pow(2.0, r - 1.0) * er;
    out.c_tc = lower > 0.0 ? std::max(1.0 / lower, std::pow(2.0, r - 1.0) + std::pow(2.0, 2.0 * r - 2.0) * er)
                           : std::numeric_limits<double>::infinity();
    return out;
}

}  // namespace irnm
