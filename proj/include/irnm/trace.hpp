#pragma once

// Per-Newton-step records shared by the solver, the stopping rules and the
// reporting code.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "irnm/core.hpp"

namespace irnm {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TraceRecord {
    int n = 0;
    double alpha = kNaN;
    double sigma = 0.0;
    Signal u;                      // u_n
    Signal fu;                     // F(u_n)
    std::optional<Signal> g_lin;   // F(u_n) + F'(u_n; u_{n+1} - u_n), absent on the last record
    double misfit = kNaN;          // S(F(u_n); obs) with offset sigma_n
    double penalty = kNaN;         // R(u_n)
    double err_n = kNaN;           // effective noise surrogate for step n (needs u_{n+1})
    double true_error = kNaN;      // ||u_n - u_true||_X, synthetic mode only
    double bregman = kNaN;         // D(u_n, u_true), synthetic mode only
    int inner_iters = 0;
    double min_step = kNaN;
    std::string status;            // inner exit reason, "final" on the last record
};

struct IterateTrace {
    std::vector<TraceRecord> records;
    std::string status = "ok";

    size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    const TraceRecord& operator[](size_t i) const { return records[i]; }

    std::vector<double> alphas() const
    {
        std::vector<double> a;
        for (const auto& r : records) a.push_back(r.alpha);
        return a;
    }
    std::vector<double> err_n() const
    {
        std::vector<double> e;
        for (const auto& r : records) e.push_back(r.err_n);
        return e;
    }
    std::vector<double> true_errors() const
    {
        std::vector<double> e;
        for (const auto& r : records) e.push_back(r.true_error);
        return e;
    }
};

// alpha_0 <= 1, strictly decreasing, 1 <= alpha_n/alpha_{n+1} <= c_dec.
inline bool alpha_schedule_ok(const std::vector<double>& alpha, double c_dec)
{
    if (alpha.empty())
        return true;
    if (!(alpha[0] > 0.0) || alpha[0] > 1.0)
        return false;
    for (size_t i = 1; i < alpha.size(); ++i) {
        if (!(alpha[i] < alpha[i - 1]))
            return false;
        const double q = alpha[i - 1] / alpha[i];
        if (q < 1.0 || q > c_dec * (1.0 + 1e-12))
            return false;
    }
    return true;
}

}  // namespace irnm
