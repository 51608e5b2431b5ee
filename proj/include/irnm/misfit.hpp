#pragma once

// Data fidelity functionals S(g; obs), exact-data divergences T(g; g_true)
// and the second-order models the inner Gauss-Newton solver works with.
//
// Infinite values are returned as +inf, never thrown.

#include <cmath>
#include <limits>
#include <string>

#include "irnm/core.hpp"
#include "irnm/counts.hpp"

namespace irnm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {
inline void check_sigma(double sigma)
{
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw InvalidInputError("offset sigma must be finite and >= 0");
}
}  // namespace detail

// Offset Kullback-Leibler divergence
//   sum_j w_j [g_j - gt_j - (gt_j + s) ln((g_j + s)/(gt_j + s))]
// with side constraint g >= -s/2 and the convention 0 ln 0 = 0. Points with
// gt_j + s = 0 contribute g_j - gt_j.
inline double kl_divergence(const Signal& g, const Signal& gdag, double sigma)
{
    require_aligned(g, gdag, "kl_divergence");
    detail::check_sigma(sigma);
    const VectorXd& w = g.grid().weights();
    double sum = 0.0;
    for (Index j = 0; j < g.size(); ++j) {
        if (g[j] < -0.5 * sigma)
            return kInf;
        const double a = gdag[j] + sigma;
        if (a < 0.0)
            throw InvalidInputError("kl_divergence: reference below -sigma");
        double term = g[j] - gdag[j];
        if (a > 0.0) {
            const double b = g[j] + sigma;
            if (b <= 0.0)
                return kInf;
            term -= a * std::log(b / a);
        }
        sum += w[j] * term;
    }
    return sum;
}

// Negative Poisson log-likelihood of binned counts for the density g:
//   sum_j [(S_J g)_j - (s |M_j| + c_j/t) ln(gbar_j + s)],  gbar_j = (S_J g)_j/|M_j|
// i.e. the offset likelihood applied to the bin-averaged density.
inline double poisson_neg_loglik(const Signal& g, const CountData& data, double sigma)
{
    detail::check_sigma(sigma);
    require_on(g, data.binning.grid(), "poisson_neg_loglik");
    if ((g.values().array() < -0.5 * sigma).any())
        return kInf;
    const VectorXd sg = data.binning.apply(g);
    const VectorXd& m = data.bin_measures();
    double sum = 0.0;
    for (Index j = 0; j < data.bins(); ++j) {
        const double coeff = sigma * m[j] + static_cast<double>(data.counts[static_cast<size_t>(j)]) / data.t;
        const double arg = sg[j] / m[j] + sigma;
        sum += sg[j];
        if (coeff > 0.0) {
            if (arg <= 0.0)
                return kInf;
            sum -= coeff * std::log(arg);
        }
    }
    return sum;
}

// The additive constant s(g_true) = sum_j w_j [gt_j - (gt_j + s) ln(gt_j + s)].
// Does not influence any iterate; used to check the error splitting.
inline double poisson_constant(const Signal& gdag, double sigma)
{
    detail::check_sigma(sigma);
    const VectorXd& w = gdag.grid().weights();
    double sum = 0.0;
    for (Index j = 0; j < gdag.size(); ++j) {
        const double a = gdag[j] + sigma;
        sum += w[j] * (gdag[j] - (a > 0.0 ? a * std::log(a) : 0.0));
    }
    return sum;
}

inline double l2_misfit(const Signal& g, const Signal& obs)
{
    require_aligned(g, obs, "l2_misfit");
    const VectorXd d = g.values() - obs.values();
    return g.grid().inner(d, d);
}

// Pearson's phi^2 distance with the denominator guarded by a cutoff:
//   sum_j w_j |g_j - obs_j|^2 / max(obs_j, c).
inline double pearson_phi2(const Signal& g, const Signal& obs, double cutoff)
{
    require_aligned(g, obs, "pearson_phi2");
    if (!(cutoff > 0.0))
        throw InvalidInputError("pearson cutoff must be positive");
    const VectorXd& w = g.grid().weights();
    double sum = 0.0;
    for (Index j = 0; j < g.size(); ++j) {
        const double d = g[j] - obs[j];
        sum += w[j] * d * d / std::max(obs[j], cutoff);
    }
    return sum;
}

// Second-order model of a misfit around g:
//   S(g + h) ~ const + (scale/2) * integral (weight*h + residual)^2.
// scale is 1 for the Kullback-Leibler likelihood (whose Taylor model is
// exactly half a square) and 2 for the quadratic misfits.
struct QuadraticModel {
    VectorXd weight;
    VectorXd residual;
    double scale = 1.0;
};

enum class MisfitKind { l2, kl, pearson };

class Misfit {
public:
    static Misfit l2() { return Misfit(MisfitKind::l2, 0.0); }
    static Misfit kl() { return Misfit(MisfitKind::kl, 0.0); }
    static Misfit pearson(double cutoff)
    {
        if (!(cutoff > 0.0))
            throw InvalidInputError("pearson cutoff must be positive");
        return Misfit(MisfitKind::pearson, cutoff);
    }

    MisfitKind kind() const { return kind_; }
    double cutoff() const { return cutoff_; }
    bool has_side_constraint() const { return kind_ == MisfitKind::kl; }

    std::string name() const
    {
        switch (kind_) {
        case MisfitKind::l2: return "l2";
        case MisfitKind::kl: return "kl";
        case MisfitKind::pearson: return "pearson";
        }
        return "?";
    }

    // g >= -sigma/2 pointwise for the offset likelihood; always true otherwise.
    bool feasible(const Signal& g, double sigma) const
    {
        if (kind_ != MisfitKind::kl)
            return true;
        return (g.values().array() >= -0.5 * sigma).all();
    }

    // S(g; obs) with obs a density on the same grid as g.
    double value(const Signal& g, const Signal& obs, double sigma) const
    {
        switch (kind_) {
        case MisfitKind::l2: return l2_misfit(g, obs);
        case MisfitKind::pearson: return pearson_phi2(g, obs, cutoff_);
        case MisfitKind::kl:
            if (!feasible(g, sigma))
                return kInf;
            return kl_functional(g, obs, sigma);
        }
        return kInf;
    }

    // Value on the natural domain of the logarithm (g + sigma > 0) without the
    // -sigma/2 side constraint. This is the functional the inner iteration
    // actually decreases when the step tuning parameter exceeds 1/2.
    double model_value(const Signal& g, const Signal& obs, double sigma) const
    {
        if (kind_ != MisfitKind::kl)
            return value(g, obs, sigma);
        return kl_functional(g, obs, sigma);
    }

    double exact_divergence(const Signal& g, const Signal& gdag, double sigma) const
    {
        switch (kind_) {
        case MisfitKind::l2: return l2_misfit(g, gdag);
        case MisfitKind::pearson: return pearson_phi2(g, gdag, cutoff_);
        case MisfitKind::kl: return kl_divergence(g, gdag, sigma);
        }
        return kInf;
    }

    QuadraticModel quadratic_model(const Signal& g, const Signal& obs, double sigma) const
    {
        require_aligned(g, obs, "quadratic_model");
        detail::check_sigma(sigma);
        QuadraticModel qm;
        const VectorXd& gv = g.values();
        const VectorXd& ov = obs.values();
        switch (kind_) {
        case MisfitKind::l2:
            qm.weight = VectorXd::Ones(g.size());
            qm.residual = gv - ov;
            qm.scale = 2.0;
            break;
        case MisfitKind::pearson: {
            const VectorXd inv_sqrt = ov.cwiseMax(cutoff_).cwiseSqrt().cwiseInverse();
            qm.weight = inv_sqrt;
            qm.residual = (gv - ov).cwiseProduct(inv_sqrt);
            qm.scale = 2.0;
            break;
        }
        case MisfitKind::kl: {
            qm.weight.resize(g.size());
            qm.residual.resize(g.size());
            for (Index j = 0; j < g.size(); ++j) {
                const double gs = gv[j] + sigma;
                const double os = ov[j] + sigma;
                if (!(gs > 0.0))
                    throw FeasibilityError("quadratic_model: g + sigma must be positive");
                if (!(os > 0.0))
                    throw FeasibilityError("quadratic_model: obs + sigma must be positive (use sigma > 0)");
                const double r = std::sqrt(os);
                qm.weight[j] = r / gs;
                qm.residual[j] = (gv[j] - ov[j]) / r;
            }
            qm.scale = 1.0;
            break;
        }
        }
        return qm;
    }

    // Pointwise derivative dS/dg_j divided by w_j (the gradient with respect to
    // the grid inner product).
    VectorXd gradient(const Signal& g, const Signal& obs, double sigma) const
    {
        const QuadraticModel qm = quadratic_model(g, obs, sigma);
        return qm.scale * qm.weight.cwiseProduct(qm.residual);
    }

private:
    Misfit(MisfitKind k, double c) : kind_(k), cutoff_(c) {}

    static double kl_functional(const Signal& g, const Signal& obs, double sigma)
    {
        require_aligned(g, obs, "kl misfit");
        detail::check_sigma(sigma);
        const VectorXd& w = g.grid().weights();
        double sum = 0.0;
        for (Index j = 0; j < g.size(); ++j) {
            const double coeff = sigma + obs[j];
            if (obs[j] < 0.0)
                throw InvalidInputError("kl misfit: negative observation");
            double term = g[j];
            if (coeff > 0.0) {
                const double arg = g[j] + sigma;
                if (arg <= 0.0)
                    return kInf;
                term -= coeff * std::log(arg);
            } else if (g[j] + sigma < 0.0) {
                return kInf;
            }
            sum += w[j] * term;
        }
        return sum;
    }

    MisfitKind kind_;
    double cutoff_;
};

inline QuadraticModel quadratic_model(const Misfit& m, const Signal& g, const Signal& obs, double sigma)
{
    return m.quadratic_model(g, obs, sigma);
}

}  // namespace irnm
