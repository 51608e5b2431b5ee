#pragma once

// Poisson count simulation on binned detectors and the effective noise
// level err(g) that separates the noisy misfit from the exact divergence.

#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "irnm/counts.hpp"
#include "irnm/misfit.hpp"

namespace irnm {

inline VectorXd bin_apply(const Binning& b, const Signal& g) { return b.apply(g); }
inline Signal bin_adjoint(const Binning& b, const VectorXd& v) { return b.adjoint(v); }

// Counts per bin drawn independently from Poisson(t * integral of gdag over the bin).
inline CountData sample_counts(const Signal& gdag, double t, const Binning& binning, std::uint64_t seed)
{
    if (!(t > 0.0) || !std::isfinite(t))
        throw InvalidInputError("sample_counts: exposure time must be positive");
    require_on(gdag, binning.grid(), "sample_counts");
    if ((gdag.values().array() < 0.0).any())
        throw InvalidInputError("sample_counts: negative intensity");
    const VectorXd mean = t * binning.apply(gdag);
    std::mt19937_64 rng(seed);
    std::vector<std::int64_t> counts(static_cast<size_t>(binning.bins()), 0);
    for (Index j = 0; j < binning.bins(); ++j) {
        if (mean[j] > 0.0) {
            std::poisson_distribution<std::int64_t> pois(mean[j]);
            counts[static_cast<size_t>(j)] = pois(rng);
        }
    }
    return CountData(std::move(counts), t, binning, seed);
}

namespace detail {
// Bin averages (S_J g)_j / |M_j|.
inline VectorXd bin_average(const Binning& b, const Signal& g)
{
    return b.apply(g).cwiseQuotient(b.measures());
}
}  // namespace detail

// Signed fluctuation sum_j ln(gbar_j + s) ((1/t) c_j - (S_J gdag)_j).
// Its negative is S(g) - s(gdag) - T(g; gdag) for the binned likelihood, T the
// offset divergence of the bin averages. Returns 0 for g below -s/2 (all
// three terms are +inf there) and +inf when the log is singular on a bin with
// observed or true mass.
inline double poisson_fluctuation(const Signal& g, const CountData& data, const Signal& gdag, double sigma)
{
    detail::check_sigma(sigma);
    require_on(g, data.binning.grid(), "poisson_fluctuation");
    require_aligned(g, gdag, "poisson_fluctuation");
    if ((g.values().array() < -0.5 * sigma).any())
        return 0.0;
    const VectorXd gbar = detail::bin_average(data.binning, g);
    const VectorXd sgd = data.binning.apply(gdag);
    const VectorXd obs = data.scaled();
    double sum = 0.0;
    for (Index j = 0; j < data.bins(); ++j) {
        const double diff = obs[j] - sgd[j];
        const double arg = gbar[j] + sigma;
        if (arg <= 0.0) {
            if (obs[j] + sgd[j] > 0.0)
                return kInf;
            continue;
        }
        sum += std::log(arg) * diff;
    }
    return sum;
}

inline double err_poisson(const Signal& g, const CountData& data, const Signal& gdag, double sigma)
{
    return std::abs(poisson_fluctuation(g, data, gdag, sigma));
}

// |KL(g; gdag) - KL(P_J g; P_J gdag)| with sigma = 0 on the fine grid.
inline double err_discretization(const Signal& g, const Signal& gdag, const Binning& binning)
{
    const double fine = kl_divergence(g, gdag, 0.0);
    const double coarse = kl_divergence(binning.project(g), binning.project(gdag), 0.0);
    if (std::isinf(fine) && std::isinf(coarse))
        return 0.0;
    return std::abs(fine - coarse);
}

// err(g) for a fixed observation and truth. For the Poisson likelihood this is
// err_poisson (C_err = 1); for the squared L2 misfit it is ||obs - gdag||^2,
// independent of g (C_err = 2). Pearson's distance has no splitting.
class ErrFunctional {
public:
    static ErrFunctional poisson(CountData data, Signal gdag)
    {
        return ErrFunctional(MisfitKind::kl, std::move(data), std::move(gdag), {});
    }
    static ErrFunctional l2(Signal obs, Signal gdag)
    {
        require_aligned(obs, gdag, "ErrFunctional::l2");
        return ErrFunctional(MisfitKind::l2, std::nullopt, std::move(gdag), std::move(obs));
    }

    MisfitKind kind() const { return kind_; }
    const Signal& gdag() const { return gdag_; }
    double c_err() const { return kind_ == MisfitKind::l2 ? 2.0 : 1.0; }

    double operator()(const Signal& g, double sigma) const
    {
        if (kind_ == MisfitKind::kl)
            return err_poisson(g, *data_, gdag_, sigma);
        require_aligned(g, gdag_, "err");
        return l2_misfit(obs_, gdag_);
    }

private:
    ErrFunctional(MisfitKind k, std::optional<CountData> d, Signal gdag, Signal obs)
        : kind_(k), data_(std::move(d)), gdag_(std::move(gdag)), obs_(std::move(obs)) {}

    MisfitKind kind_;
    std::optional<CountData> data_;
    Signal gdag_;
    Signal obs_;
};

inline ErrFunctional make_err_functional(const Misfit& m, const CountData& data, const Signal& gdag)
{
    switch (m.kind()) {
    case MisfitKind::kl: return ErrFunctional::poisson(data, gdag);
    case MisfitKind::l2: return ErrFunctional::l2(observed_density(data), gdag);
    case MisfitKind::pearson: break;
    }
    throw UnsupportedModeError("err is not defined for the Pearson misfit");
}

struct ErrConstants {
    double c_err = 1.0;
    double c_tc = 1.0;
    double eta = 0.0;
};

// Variant A: (1/C_err) err(F(u_{n+1})) + 2 eta C_tc err(F(u_n)) + C_tc C_err err(g_true).
inline double err_n_variant_a(double err_next, double err_cur, double err_true, const ErrConstants& c)
{
    return err_next / c.c_err + 2.0 * c.eta * c.c_tc * err_cur + c.c_tc * c.c_err * err_true;
}

// Variant B: err(F(u_n) + F'(u_n; u_{n+1} - u_n)) + C_err err(F(u_n) + F'(u_n; u_true - u_n)).
inline double err_n_variant_b(double err_step, double err_truth_lin, const ErrConstants& c)
{
    return err_step + c.c_err * err_truth_lin;
}

inline void write_counts_csv(std::ostream& os, const CountData& data)
{
    std::ostringstream tbuf;
    tbuf << std::setprecision(17) << data.t;
    os << "# t=" << tbuf.str() << " seed=" << data.seed << "\n";
    os << "bin_index,count,measure\n";
    const VectorXd& m = data.bin_measures();
    for (Index j = 0; j < data.bins(); ++j) {
        std::ostringstream mb;
        mb << std::setprecision(17) << m[j];
        os << j << "," << data.counts[static_cast<size_t>(j)] << "," << mb.str() << "\n";
    }
}

// Reads counts written by write_counts_csv. The binning must match the file's
// bin count and measures (to 1e-12 relative).
inline CountData read_counts_csv(std::istream& is, const Binning& binning)
{
    std::string line;
    double t = 0.0;
    std::uint64_t seed = 0;
    bool have_meta = false;
    bool have_header = false;
    std::vector<std::int64_t> counts;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        if (line[0] == '#') {
            const auto tp = line.find("t=");
            const auto sp = line.find("seed=");
            if (tp != std::string::npos && sp != std::string::npos) {
                try {
                    t = std::stod(line.substr(tp + 2));
                    seed = std::stoull(line.substr(sp + 5));
                } catch (const std::exception&) {
                    throw InvalidInputError("counts csv: bad metadata line");
                }
                have_meta = true;
            }
            continue;
        }
        if (!have_header) {
            if (line != "bin_index,count,measure")
                throw InvalidInputError("counts csv: unexpected header '" + line + "'");
            have_header = true;
            continue;
        }
        std::istringstream row(line);
        std::string a, b, c;
        if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
            throw InvalidInputError("counts csv: malformed row '" + line + "'");
        Index j = 0;
        std::int64_t cnt = 0;
        double meas = 0.0;
        try {
            j = std::stol(a);
            cnt = std::stoll(b);
            meas = std::stod(c);
        } catch (const std::exception&) {
            throw InvalidInputError("counts csv: malformed row '" + line + "'");
        }
        if (j != static_cast<Index>(counts.size()))
            throw InvalidInputError("counts csv: bin indices must be 0..J-1 in order");
        if (j >= binning.bins() || std::abs(meas - binning.measures()[j]) > 1e-12 * binning.measures()[j])
            throw AlignmentError("counts csv: bins do not match the binning");
        counts.push_back(cnt);
    }
    if (!have_meta)
        throw InvalidInputError("counts csv: missing '# t=... seed=...' line");
    return CountData(std::move(counts), t, binning, seed);
}

}  // namespace irnm
