#pragma once

// Stopping rules: a priori rules driven by err_n, the Lepskii balancing
// principle and the oracle rule for synthetic experiments.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "irnm/core.hpp"
#include "irnm/rates.hpp"
#include "irnm/trace.hpp"

namespace irnm {

struct StopResult {
    int index = 0;         // selected n (iterate u_n)
    bool stopped = false;  // false when the rule never triggered / window truncated
    std::string rule;
    int n_max = -1;        // Lepskii only
};

namespace detail {
// Scan n = 0, 1, ... for the first record satisfying pred(alpha_n, err_n).
// A missing err_n is allowed only on the last record (it needs u_{n+1}).
template <class Pred>
StopResult scan_a_priori(const IterateTrace& trace, const char* rule, Pred pred)
{
    if (trace.empty())
        throw InvalidInputError(std::string(rule) + ": empty trace");
    StopResult res;
    res.rule = rule;
    bool any = false;
    for (size_t i = 0; i < trace.size(); ++i) {
        const double e = trace[i].err_n;
        if (std::isnan(e)) {
            if (i + 1 == trace.size())
                break;
            throw UnsupportedModeError(std::string(rule) + ": err_n missing at n=" + std::to_string(i));
        }
        any = true;
        if (pred(trace[i].alpha, e)) {
            res.index = static_cast<int>(i);
            res.stopped = true;
            return res;
        }
    }
    if (!any)
        throw UnsupportedModeError(std::string(rule) + ": trace carries no err_n values");
    res.index = static_cast<int>(trace.size()) - 1;
    return res;
}
}  // namespace detail

// n* = min{n : Theta(alpha_n) <= tau err_n}, Theta(t) = t phi(t)^2.
inline StopResult a_priori_stop_theta(const IterateTrace& trace, double tau, const IndexFunction& phi)
{
    if (!(tau >= 1.0))
        throw InvalidInputError("tau must be >= 1");
    const IndexFunction th = theta(phi);
    return detail::scan_a_priori(trace, "apriori_theta",
                                 [&](double a, double e) { return th(a) <= tau * e; });
}

// n* = min{n : alpha_n <= tau err_n^{1/(1+2 nu)}}.
inline StopResult a_priori_stop_hoelder(const IterateTrace& trace, double tau, double nu)
{
    if (!(tau >= 1.0))
        throw InvalidInputError("tau must be >= 1");
    if (!(nu > 0.0) || nu > 0.5)
        throw InvalidInputError("nu must lie in (0, 1/2]");
    const double ex = 1.0 / (1.0 + 2.0 * nu);
    return detail::scan_a_priori(trace, "apriori_hoelder",
                                 [&](double a, double e) { return a <= tau * std::pow(e, ex); });
}

// n* = min{n : alpha_n^2 <= tau err_n}; needs no smoothness index.
inline StopResult a_priori_stop_log(const IterateTrace& trace, double tau)
{
    if (!(tau >= 1.0))
        throw InvalidInputError("tau must be >= 1");
    return detail::scan_a_priori(trace, "apriori_log", [&](double a, double e) { return a * a <= tau * e; });
}

using Distance = std::function<double(const Signal&, const Signal&)>;

// Norm of the penalty: sqrt(<a-b, G(a-b)>).
inline Distance penalty_distance(const QuadraticPenalty& p)
{
    return [p](const Signal& a, const Signal& b) { return std::sqrt(bregman_distance(p, a, b)); };
}

// Phi_noi(n) = 2 err / alpha_{n-1}, n >= 1.
inline double phi_noi(const IterateTrace& trace, int n, double err_bound)
{
    return 2.0 * err_bound / trace[static_cast<size_t>(n - 1)].alpha;
}

// N_max = min{n >= 1 : C_bd^{1/q} Phi_noi(n)^{1/q} >= 1}, computed from the
// alpha schedule alpha_0 c_dec^{-n}; does not need the iterates.
inline int lepskii_n_max(double alpha0, double c_dec, double err_bound, double c_bd, double q, int cap = 100000)
{
    if (!(err_bound > 0.0))
        return cap;
    for (int n = 1; n < cap; ++n) {
        const double a = alpha0 * std::pow(c_dec, -(n - 1));
        if (std::pow(c_bd, 1.0 / q) * std::pow(2.0 * err_bound / a, 1.0 / q) >= 1.0)
            return n;
    }
    return cap;
}

// Balancing principle
//   N_max = min{n : C_bd^{1/q} Phi_noi(n)^{1/q} >= 1},
//   n_bal = min{n <= N_max : ||u_n - u_m|| <= c Phi_noi(m)^{1/q} for all n <= m <= N_max},
//   c = C_bd^{1/q} 4 (1 + gamma_nl).
// If the trace ends before N_max the available prefix is used and `stopped`
// is false.
inline StopResult lepskii_select(const IterateTrace& trace, double err_bound, double gamma_nl, double c_bd,
                                 double q, const Distance& dist)
{
    if (!(err_bound >= 0.0) || !std::isfinite(err_bound))
        throw InvalidInputError("lepskii: err bound must be finite and >= 0");
    if (gamma_nl < 0.0 || !(c_bd > 0.0) || q < 1.0)
        throw InvalidInputError("lepskii: need gamma_nl >= 0, C_bd > 0, q >= 1");
    if (trace.size() < 2)
        throw InvalidInputError("lepskii: need at least u_0 and u_1");
    StopResult res;
    res.rule = "lepskii";
    const double cb = std::pow(c_bd, 1.0 / q);
    int n_max = -1;
    for (int n = 1; n < static_cast<int>(trace.size()); ++n) {
        if (cb * std::pow(phi_noi(trace, n, err_bound), 1.0 / q) >= 1.0) {
            n_max = n;
            break;
        }
    }
    res.stopped = n_max > 0;
    if (n_max < 0)
        n_max = static_cast<int>(trace.size()) - 1;
    res.n_max = n_max;
    const double c = cb * 4.0 * (1.0 + gamma_nl);
    for (int n = 1; n <= n_max; ++n) {
        bool ok = true;
        for (int m = n; m <= n_max && ok; ++m) {
            const double d = dist(trace[static_cast<size_t>(n)].u, trace[static_cast<size_t>(m)].u);
            ok = d <= c * std::pow(phi_noi(trace, m, err_bound), 1.0 / q);
        }
        if (ok) {
            res.index = n;
            return res;
        }
    }
    res.index = n_max;
    return res;
}

inline StopResult lepskii_select(const IterateTrace& trace, double err_bound, double gamma_nl,
                                 const QuadraticPenalty& penalty)
{
    return lepskii_select(trace, err_bound, gamma_nl, penalty.c_bd(), penalty.q(), penalty_distance(penalty));
}

// Right-hand side of the balancing oracle inequality
//   6 (1+gamma)^{1/q} C_dec^{2/q} C_bd^{1/q} min_n (Phi_app(n)^{1/q} + Phi_noi(n)^{1/q}).
inline double lepskii_oracle_bound(const std::vector<double>& phi_app, const std::vector<double>& phi_noi,
                                   double gamma_nl, double c_dec, double c_bd, double q)
{
    if (phi_app.size() != phi_noi.size() || phi_app.empty())
        throw AlignmentError("lepskii_oracle_bound: sequences differ in length");
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < phi_app.size(); ++i)
        best = std::min(best, std::pow(phi_app[i], 1.0 / q) + std::pow(phi_noi[i], 1.0 / q));
    return 6.0 * std::pow(1.0 + gamma_nl, 1.0 / q) * std::pow(c_dec, 2.0 / q) * std::pow(c_bd, 1.0 / q) * best;
}

// argmin of a sequence, ties to the smaller index; NaN entries are skipped.
inline int argmin_index(const std::vector<double>& v)
{
    int best = -1;
    for (size_t i = 0; i < v.size(); ++i) {
        if (std::isnan(v[i]))
            continue;
        if (best < 0 || v[i] < v[static_cast<size_t>(best)])
            best = static_cast<int>(i);
    }
    if (best < 0)
        throw InvalidInputError("argmin of an empty sequence");
    return best;
}

// Per-run oracle: argmin_n ||u_n - u_true|| (X-norm by default).
inline StopResult oracle_stop(const IterateTrace& trace, const Signal& u_true, const Distance& dist = {})
{
    std::vector<double> e;
    for (const auto& r : trace.records) e.push_back(dist ? dist(r.u, u_true) : norm(r.u - u_true));
    StopResult res;
    res.rule = "oracle";
    res.index = argmin_index(e);
    res.stopped = true;
    return res;
}

// Oracle of the empirical mean square error: argmin_n mean_k errors[k][n]^2.
// Runs of different length contribute to the indices they reach.
inline int mean_oracle_index(const std::vector<std::vector<double>>& errors)
{
    size_t len = 0;
    for (const auto& e : errors) len = std::max(len, e.size());
    std::vector<double> mean(len, 0.0), cnt(len, 0.0);
    for (const auto& e : errors)
        for (size_t i = 0; i < e.size(); ++i)
            if (!std::isnan(e[i])) {
                mean[i] += e[i] * e[i];
                cnt[i] += 1.0;
            }
    for (size_t i = 0; i < len; ++i) mean[i] = cnt[i] > 0 ? mean[i] / cnt[i] : kNaN;
    return argmin_index(mean);
}

struct StoppingRule {
    enum class Kind { max_iter, theta, hoelder, log, lepskii, oracle };
    Kind kind = Kind::max_iter;
    double tau = 1.0;
    double nu = 0.5;
    std::optional<IndexFunction> phi;  // theta rule
    double err_bound = 0.0;            // lepskii
    double gamma_nl = 0.0;

    bool is_a_priori() const { return kind == Kind::theta || kind == Kind::hoelder || kind == Kind::log; }

    static std::string name(Kind k)
    {
        switch (k) {
        case Kind::max_iter: return "max_iter";
        case Kind::theta: return "apriori_theta";
        case Kind::hoelder: return "apriori_hoelder";
        case Kind::log: return "apriori_log";
        case Kind::lepskii: return "lepskii";
        case Kind::oracle: return "oracle";
        }
        return "?";
    }
};

inline StopResult apply_stopping(const StoppingRule& rule, const IterateTrace& trace, const QuadraticPenalty& penalty,
                                 const std::optional<Signal>& u_true)
{
    switch (rule.kind) {
    case StoppingRule::Kind::max_iter: {
        StopResult r;
        r.rule = "max_iter";
        r.index = static_cast<int>(trace.size()) - 1;
        r.stopped = true;
        return r;
    }
    case StoppingRule::Kind::theta:
        if (!rule.phi)
            throw InvalidInputError("theta rule needs an index function");
        return a_priori_stop_theta(trace, rule.tau, *rule.phi);
    case StoppingRule::Kind::hoelder: return a_priori_stop_hoelder(trace, rule.tau, rule.nu);
    case StoppingRule::Kind::log: return a_priori_stop_log(trace, rule.tau);
    case StoppingRule::Kind::lepskii: return lepskii_select(trace, rule.err_bound, rule.gamma_nl, penalty);
    case StoppingRule::Kind::oracle:
        if (!u_true)
            throw UnsupportedModeError("oracle stopping needs the true solution");
        return oracle_stop(trace, *u_true);
    }
    throw InvalidInputError("unknown stopping rule");
}

}  // namespace irnm
