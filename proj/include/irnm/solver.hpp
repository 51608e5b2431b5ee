#pragma once

// Outer iteratively regularized Newton iteration and the inner Gauss-Newton
// iteration that minimizes the convex Newton functional with CG.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "irnm/core.hpp"
#include "irnm/misfit.hpp"
#include "irnm/poisson.hpp"
#include "irnm/stopping.hpp"
#include "irnm/trace.hpp"

namespace irnm {

struct OffsetParam {
    double sigma = 0.002;
    double decay = 0.8;

    void validate() const
    {
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
            throw InvalidInputError("offset sigma must be >= 0");
        if (!(decay > 0.0) || decay > 1.0)
            throw InvalidInputError("offset decay must lie in (0, 1]");
    }
};

struct NewtonConfig {
    double alpha0 = 0.5;
    double c_dec = 1.5;
    int max_outer = 20;
    double inner_tol = 0.1;
    int max_inner = 10;
    double step_eta = 0.9;
    OffsetParam offset;
    double cg_tol = 1e-10;
    int cg_max_iter = 500;
    double min_step = 1e-4;

    void validate() const
    {
        if (!(alpha0 > 0.0) || alpha0 > 1.0)
            throw InvalidInputError("alpha0 must lie in (0, 1]");
        if (!(c_dec > 1.0))
            throw InvalidInputError("c_dec must be > 1");
        if (max_outer < 0 || max_inner < 1 || cg_max_iter < 1)
            throw InvalidInputError("iteration limits must be positive");
        if (!(inner_tol > 0.0))
            throw InvalidInputError("inner_tol must be positive");
        if (!(step_eta >= 0.0) || !(step_eta < 1.0))
            throw InvalidInputError("step_eta must lie in [0, 1)");
        if (!(cg_tol > 0.0) || !(min_step > 0.0) || min_step > 1.0)
            throw InvalidInputError("cg_tol and min_step must be positive");
        offset.validate();
    }

    double alpha(int n) const { return alpha0 * std::pow(c_dec, -n); }
    double sigma(int n) const { return offset.sigma * std::pow(offset.decay, n); }
};

struct CgResult {
    VectorXd h;
    int iterations = 0;
    double rel_residual = 0.0;
    bool converged = false;
    bool breakdown = false;
};

// Minimizes 1/2 ||weight * F'h + residual||_Y^2 + alpha/2 <u+h-u0, G(u+h-u0)>_X
// by CG on the normal equation (F'* W^2 F' + alpha G) h = -F'*(W r) - alpha G(u-u0),
// in the quadrature-weighted inner product of X.
inline CgResult solve_inner_ls(const VectorXd& weight, const VectorXd& residual, const Linearization& lin,
                               const QuadraticPenalty& penalty, const Signal& u_nl, double alpha, double cg_tol,
                               int cg_max_iter)
{
    if (weight.size() != residual.size())
        throw AlignmentError("solve_inner_ls: weight and residual differ in length");
    if (!weight.allFinite() || !residual.allFinite() || !std::isfinite(alpha))
        throw NumericError("solve_inner_ls: non-finite input");
    const Grid& gx = penalty.grid();
    require_on(u_nl, gx, "solve_inner_ls");
    const VectorXd w2 = weight.cwiseProduct(weight);
    auto op = [&](const VectorXd& h) -> VectorXd {
        VectorXd jh = lin.apply(h);
        if (jh.size() != w2.size())
            throw AlignmentError("solve_inner_ls: linearization output has wrong length");
        return lin.adjoint(w2.cwiseProduct(jh)) + alpha * penalty.apply_gram(h);
    };
    const VectorXd b =
        -lin.adjoint(weight.cwiseProduct(residual)) - alpha * penalty.apply_gram(u_nl.values() - penalty.u0().values());

    CgResult out;
    out.h = VectorXd::Zero(gx.size());
    const double bn = gx.norm(b);
    if (!std::isfinite(bn))
        throw NumericError("solve_inner_ls: non-finite right-hand side");
    if (bn == 0.0) {
        out.converged = true;
        return out;
    }
    VectorXd r = b;
    VectorXd p = r;
    double rr = gx.inner(r, r);
    for (int it = 0; it < cg_max_iter; ++it) {
        const VectorXd ap = op(p);
        const double pap = gx.inner(p, ap);
        if (!std::isfinite(pap))
            throw NumericError("solve_inner_ls: non-finite operator value");
        if (pap <= 0.0) {
            out.breakdown = true;
            break;
        }
        const double a = rr / pap;
        out.h += a * p;
        r -= a * ap;
        out.iterations = it + 1;
        const double rr_new = gx.inner(r, r);
        if (std::sqrt(rr_new) <= cg_tol * bn) {
            rr = rr_new;
            out.converged = true;
            break;
        }
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    out.rel_residual = std::sqrt(rr) / bn;
    if (!out.h.allFinite())
        throw NumericError("solve_inner_ls: CG produced non-finite values");
    return out;
}

struct InnerResult {
    Signal u_next;
    Signal g_lin;  // F(u_n) + F'(u_n; u_next - u_n)
    int iterations = 0;
    double min_step = 1.0;
    std::vector<double> steps;
    std::string reason;
    bool cg_breakdown = false;
};

// Value of the Newton functional S(F(u_n) + F'(u_n)(v - u_n)) + alpha R(v),
// with the misfit on its natural logarithmic domain.
inline double newton_functional(const Misfit& misfit, const QuadraticPenalty& penalty, const Signal& g_lin,
                                const Signal& v, const Signal& obs, double alpha, double sigma)
{
    return misfit.model_value(g_lin, obs, sigma) + alpha * penalty_value(penalty, v);
}

// Largest s in [0,1] with g + s d >= -eta sigma pointwise, given g >= -eta sigma.
inline double max_feasible_step(const VectorXd& g, const VectorXd& d, double eta, double sigma)
{
    double s = 1.0;
    for (Index j = 0; j < g.size(); ++j)
        if (d[j] < 0.0)
            s = std::min(s, (g[j] + eta * sigma) / (-d[j]));
    return std::max(s, 0.0);
}

inline InnerResult inner_gauss_newton(const ForwardModel& model, const Misfit& misfit,
                                      const QuadraticPenalty& penalty, const Signal& u_n, const Signal& fu_n,
                                      const Signal& obs, double alpha_n, double sigma_n, const NewtonConfig& cfg)
{
    if (!model.domain_check(u_n))
        throw InvalidInputError("inner_gauss_newton: u_n outside the model domain");
    require_aligned(fu_n, obs, "inner_gauss_newton");
    const bool constrained = misfit.has_side_constraint();
    if (constrained && (fu_n.values().array() < -cfg.step_eta * sigma_n).any())
        throw FeasibilityError("inner_gauss_newton: F(u_n) below -step_eta*sigma");

    const auto lin = model.linearize(u_n);
    const Grid& gx = penalty.grid();
    InnerResult res;
    VectorXd u = u_n.values();
    VectorXd g = fu_n.values();
    double h0 = -1.0;
    double current = newton_functional(misfit, penalty, fu_n, u_n, obs, alpha_n, sigma_n);

    for (int l = 0; l < cfg.max_inner; ++l) {
        const Signal g_sig = fu_n.with_values(g);
        const QuadraticModel qm = misfit.quadratic_model(g_sig, obs, sigma_n);
        const double alpha_eff = 2.0 * alpha_n / qm.scale;
        const CgResult cg = solve_inner_ls(qm.weight, qm.residual, *lin, penalty, u_n.with_values(u), alpha_eff,
                                           cfg.cg_tol, cfg.cg_max_iter);
        res.cg_breakdown = res.cg_breakdown || cg.breakdown;
        const double hn = gx.norm(cg.h);
        if (l == 0) {
            h0 = hn;
            if (h0 == 0.0) {
                res.reason = "stationary";
                break;
            }
        }
        const VectorXd jh = lin->apply(cg.h);
        double s = constrained ? max_feasible_step(g, jh, cfg.step_eta, sigma_n) : 1.0;
        // Halve until the Newton functional does not increase.
        double trial = current;
        while (s >= cfg.min_step) {
            trial = newton_functional(misfit, penalty, fu_n.with_values(g + s * jh), u_n.with_values(u + s * cg.h),
                                      obs, alpha_n, sigma_n);
            if (trial <= current + 1e-10 * (1.0 + std::abs(current)))
                break;
            s *= 0.5;
        }
        if (s < cfg.min_step) {
            res.reason = "min_step";
            res.min_step = std::min(res.min_step, s);
            break;
        }
        u += s * cg.h;
        g += s * jh;
        current = trial;
        res.steps.push_back(s);
        res.min_step = std::min(res.min_step, s);
        res.iterations = l + 1;
        if (l > 0 && hn <= cfg.inner_tol * h0) {
            res.reason = "converged";
            break;
        }
        if (l + 1 == cfg.max_inner)
            res.reason = "max_inner";
    }
    if (res.cg_breakdown && res.reason != "min_step")
        res.reason += "+cg_breakdown";
    res.u_next = u_n.with_values(std::move(u));
    res.g_lin = fu_n.with_values(std::move(g));
    return res;
}

enum class ErrVariant { a, b };

struct RunOptions {
    StoppingRule rule;
    std::optional<ErrFunctional> err;  // enables err_n in the trace
    ErrVariant variant = ErrVariant::b;
    ErrConstants constants;
    std::optional<Signal> u_true;      // synthetic mode
    std::optional<Signal> u_start;     // defaults to the penalty centre u0
};

struct NewtonResult {
    Signal u;
    IterateTrace trace;
    StopResult stop;
};

// Offset used at step n: the scheduled value, raised if necessary so that
// F(u_n) >= -min(eta, 1/2) sigma / 1.5 keeps the iterate strictly inside the
// feasible region of both the step rule and the side constraint.
inline double effective_sigma(double scheduled, const Signal& fu, double step_eta)
{
    const double m = fu.values().minCoeff();
    if (m >= 0.0)
        return scheduled;
    return std::max(scheduled, -1.5 * m / std::min(step_eta, 0.5));
}

inline NewtonResult run_newton(const ForwardModel& model, const Misfit& misfit, const QuadraticPenalty& penalty,
                               const Signal& obs, const NewtonConfig& cfg, const RunOptions& opts = {})
{
    cfg.validate();
    require_on(obs, *model.output_grid(), "run_newton");
    require_on(penalty.u0(), *model.input_grid(), "run_newton");
    if (opts.rule.kind == StoppingRule::Kind::oracle && !opts.u_true)
        throw UnsupportedModeError("oracle stopping needs the true solution");
    if (opts.rule.is_a_priori() && !opts.err)
        throw UnsupportedModeError("a priori stopping needs an err functional");
    if (opts.err && opts.variant == ErrVariant::b && !opts.u_true)
        throw UnsupportedModeError("err_n variant B needs the true solution");

    Signal u = opts.u_start ? *opts.u_start : penalty.u0();
    if (!model.domain_check(u))
        throw InvalidInputError("run_newton: initial guess outside the model domain");

    int last = cfg.max_outer;
    if (opts.rule.kind == StoppingRule::Kind::lepskii)
        last = std::min(last, lepskii_n_max(cfg.alpha0, cfg.c_dec, opts.rule.err_bound, penalty.c_bd(), penalty.q()));

    NewtonResult out;
    IterateTrace& trace = out.trace;
    Signal fu = model.apply(u);
    const bool constrained = misfit.has_side_constraint();
    for (int n = 0; n <= last; ++n) {
        TraceRecord rec;
        rec.n = n;
        rec.alpha = cfg.alpha(n);
        rec.sigma = constrained ? effective_sigma(cfg.sigma(n), fu, cfg.step_eta) : cfg.sigma(n);
        rec.u = u;
        rec.fu = fu;
        rec.misfit = misfit.value(fu, obs, rec.sigma);
        rec.penalty = penalty_value(penalty, u);
        if (opts.u_true) {
            rec.true_error = norm(u - *opts.u_true);
            rec.bregman = bregman_distance(penalty, u, *opts.u_true);
        }
        if (n == last) {
            rec.status = "final";
            trace.records.push_back(std::move(rec));
            break;
        }
        InnerResult inner;
        try {
            inner = inner_gauss_newton(model, misfit, penalty, u, fu, obs, rec.alpha, rec.sigma, cfg);
        } catch (const Error& e) {
            rec.status = std::string("failed:") + e.code();
            trace.records.push_back(std::move(rec));
            trace.status = std::string("inner failure at n=") + std::to_string(n) + ": " + e.what();
            break;
        }
        rec.inner_iters = inner.iterations;
        rec.min_step = inner.steps.empty() ? 0.0 : inner.min_step;
        rec.status = inner.reason;
        rec.g_lin = inner.g_lin;
        Signal fu_next = model.apply(inner.u_next);
        if (opts.err) {
            const ErrFunctional& err = *opts.err;
            if (opts.variant == ErrVariant::a) {
                rec.err_n = err_n_variant_a(err(fu_next, rec.sigma), err(fu, rec.sigma), err(err.gdag(), rec.sigma),
                                            opts.constants);
            } else {
                const Signal g_truth = fu + model.derivative(u, *opts.u_true - u);
                rec.err_n = err_n_variant_b(err(inner.g_lin, rec.sigma), err(g_truth, rec.sigma), opts.constants);
            }
        }
        trace.records.push_back(std::move(rec));
        if (opts.rule.is_a_priori()) {
            const StopResult sr = apply_stopping(opts.rule, trace, penalty, opts.u_true);
            if (sr.stopped)
                break;
        }
        u = std::move(inner.u_next);
        fu = std::move(fu_next);
    }

    if (opts.rule.kind == StoppingRule::Kind::lepskii && trace.size() < 2) {
        out.stop.rule = "lepskii";
        out.stop.index = 0;
    } else {
        out.stop = apply_stopping(opts.rule, trace, penalty, opts.u_true);
    }
    out.u = trace[static_cast<size_t>(out.stop.index)].u;
    return out;
}

}  // namespace irnm
