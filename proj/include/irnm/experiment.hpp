#pragma once

// Experiment harness: JSON-configured problem / misfit / stopping
// combinations, replicated runs over exposure times or noise levels,
// aggregate tables, rate and err_n studies, CSV output.

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "irnm/poisson.hpp"
#include "irnm/problems.hpp"
#include "irnm/rates.hpp"
#include "irnm/solver.hpp"
#include "irnm/stopping.hpp"

namespace irnm {

using json = nlohmann::json;

struct KernelSpec {
    std::string type = "gaussian";  // gaussian | poisson
    double width = 2.56;            // absolute, gaussian only
    double r = 0.9;                 // poisson only
};

struct TruthSpec {
    std::string type = "reference_detail";  // reference_detail | peaks | kernel_source
    double background = 0.005;
    double height = 5.0;
    double detail = 0.1;
};

struct ProblemSpec {
    std::string type = "deconvolution";  // deconvolution | phase_retrieval
    Index n = 128;
    double length = 128.0;
    KernelSpec kernel;
    TruthSpec truth;
    std::string u0 = "auto";  // auto | reference | constant | disk
    double u0_value = 0.0;
    Index bins = 0;  // 0: one bin per grid point
    PhaseRetrievalParams pr;
    double band = 0.1;
};

struct MisfitSpec {
    std::string type = "kl";  // kl | l2 | pearson
    double cutoff = 0.2;
};

struct PenaltySpec {
    double sobolev = 0.0;  // 0 gives the plain L2 norm
    double c_bd = 1.0;
    double q = 2.0;
};

struct StoppingSpec {
    // max_iter | oracle (per-run argmin) | mean_oracle (argmin of the mean
    // squared error over replicates) | hoelder | log | theta | lepskii
    std::string rule = "oracle";
    double tau = 1.0;
    double nu = 0.5;
    std::string phi = "hoelder";  // theta rule: hoelder(nu) | log(p)
    double p = 1.0;
    double gamma = 0.0;
    std::optional<double> err_bound;  // lepskii; default err(g_true)
    std::string err_variant = "b";
};

struct NoiseSpec {
    std::string type = "poisson";  // poisson | gaussian | none
    std::vector<double> exposure_times{1e3, 1e4};
    bool total_counts = false;     // exposure time is the expected total count
    std::vector<double> levels;    // gaussian: noise norms delta
};

struct ExperimentConfig {
    ProblemSpec problem;
    MisfitSpec misfit;
    PenaltySpec penalty;
    NewtonConfig newton;
    StoppingSpec stopping;
    NoiseSpec noise;
    int replicates = 10;
    std::uint64_t seed = 1;
    int threads = 0;  // 0: hardware concurrency; never affects results

    void validate() const;
    json to_json() const;
    static ExperimentConfig from_json(const json& j);
    std::string hash() const;

    // Noise parameter of each level: exposure times or noise norms.
    std::vector<double> levels() const
    {
        if (noise.type == "gaussian")
            return noise.levels;
        if (noise.type == "none")
            return {0.0};
        return noise.exposure_times;
    }
};

// ---------------------------------------------------------------- JSON

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known = known || it.key() == k;
        if (!known)
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline void read_int(const json& j, const char* key, Index& out, const std::string& where)
{
    long long v = out;
    read(j, key, v, where);
    out = static_cast<Index>(v);
}

inline bool one_of(const std::string& s, std::initializer_list<const char*> opts)
{
    for (const char* o : opts)
        if (s == o)
            return true;
    return false;
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& j)
{
    using detail::read;
    ExperimentConfig c;
    detail::reject_unknown(j,
                           {"problem", "misfit", "penalty", "newton", "stopping", "noise", "replicates", "seed",
                            "threads"},
                           "config");
    if (j.contains("problem")) {
        const json& p = j["problem"];
        detail::reject_unknown(p,
                               {"type", "n", "length", "kernel", "truth", "u0", "u0_value", "bins", "support_n",
                                "measure_n", "half_width", "rho", "kappa", "band"},
                               "problem");
        ProblemSpec& s = c.problem;
        read(p, "type", s.type, "problem");
        detail::read_int(p, "n", s.n, "problem");
        read(p, "length", s.length, "problem");
        read(p, "u0", s.u0, "problem");
        read(p, "u0_value", s.u0_value, "problem");
        detail::read_int(p, "bins", s.bins, "problem");
        detail::read_int(p, "support_n", s.pr.support_n, "problem");
        detail::read_int(p, "measure_n", s.pr.measure_n, "problem");
        read(p, "half_width", s.pr.half_width, "problem");
        read(p, "rho", s.pr.rho, "problem");
        read(p, "kappa", s.pr.kappa, "problem");
        read(p, "band", s.band, "problem");
        if (p.contains("kernel")) {
            const json& k = p["kernel"];
            detail::reject_unknown(k, {"type", "width", "r"}, "problem.kernel");
            read(k, "type", s.kernel.type, "problem.kernel");
            read(k, "width", s.kernel.width, "problem.kernel");
            read(k, "r", s.kernel.r, "problem.kernel");
        }
        if (p.contains("truth")) {
            const json& t = p["truth"];
            detail::reject_unknown(t, {"type", "background", "height", "detail"}, "problem.truth");
            read(t, "type", s.truth.type, "problem.truth");
            read(t, "background", s.truth.background, "problem.truth");
            read(t, "height", s.truth.height, "problem.truth");
            read(t, "detail", s.truth.detail, "problem.truth");
        }
    }
    if (j.contains("misfit")) {
        const json& m = j["misfit"];
        detail::reject_unknown(m, {"type", "cutoff", "sigma0", "decay"}, "misfit");
        read(m, "type", c.misfit.type, "misfit");
        read(m, "cutoff", c.misfit.cutoff, "misfit");
        read(m, "sigma0", c.newton.offset.sigma, "misfit");
        read(m, "decay", c.newton.offset.decay, "misfit");
    }
    if (j.contains("penalty")) {
        const json& p = j["penalty"];
        detail::reject_unknown(p, {"sobolev", "c_bd", "q"}, "penalty");
        read(p, "sobolev", c.penalty.sobolev, "penalty");
        read(p, "c_bd", c.penalty.c_bd, "penalty");
        read(p, "q", c.penalty.q, "penalty");
    }
    if (j.contains("newton")) {
        const json& n = j["newton"];
        detail::reject_unknown(n,
                               {"alpha0", "c_dec", "max_outer", "inner_tol", "max_inner", "step_eta", "cg_tol",
                                "cg_max_iter", "min_step"},
                               "newton");
        NewtonConfig& s = c.newton;
        read(n, "alpha0", s.alpha0, "newton");
        read(n, "c_dec", s.c_dec, "newton");
        read(n, "max_outer", s.max_outer, "newton");
        read(n, "inner_tol", s.inner_tol, "newton");
        read(n, "max_inner", s.max_inner, "newton");
        read(n, "step_eta", s.step_eta, "newton");
        read(n, "cg_tol", s.cg_tol, "newton");
        read(n, "cg_max_iter", s.cg_max_iter, "newton");
        read(n, "min_step", s.min_step, "newton");
    }
    if (j.contains("stopping")) {
        const json& s = j["stopping"];
        detail::reject_unknown(s, {"rule", "tau", "nu", "phi", "p", "gamma", "err_bound", "err_variant"}, "stopping");
        StoppingSpec& t = c.stopping;
        read(s, "rule", t.rule, "stopping");
        read(s, "tau", t.tau, "stopping");
        read(s, "nu", t.nu, "stopping");
        read(s, "phi", t.phi, "stopping");
        read(s, "p", t.p, "stopping");
        read(s, "gamma", t.gamma, "stopping");
        read(s, "err_variant", t.err_variant, "stopping");
        if (s.contains("err_bound") && !s["err_bound"].is_null()) {
            double v = 0.0;
            read(s, "err_bound", v, "stopping");
            t.err_bound = v;
        }
    }
    if (j.contains("noise")) {
        const json& n = j["noise"];
        detail::reject_unknown(n, {"type", "exposure_times", "total_counts", "levels"}, "noise");
        read(n, "type", c.noise.type, "noise");
        read(n, "exposure_times", c.noise.exposure_times, "noise");
        read(n, "total_counts", c.noise.total_counts, "noise");
        read(n, "levels", c.noise.levels, "noise");
    }
    read(j, "replicates", c.replicates, "config");
    read(j, "seed", c.seed, "config");
    read(j, "threads", c.threads, "config");
    c.validate();
    return c;
}

inline json ExperimentConfig::to_json() const
{
    json j;
    const ProblemSpec& p = problem;
    j["problem"] = {{"type", p.type},
                    {"n", p.n},
                    {"length", p.length},
                    {"kernel", {{"type", p.kernel.type}, {"width", p.kernel.width}, {"r", p.kernel.r}}},
                    {"truth",
                     {{"type", p.truth.type},
                      {"background", p.truth.background},
                      {"height", p.truth.height},
                      {"detail", p.truth.detail}}},
                    {"u0", p.u0},
                    {"u0_value", p.u0_value},
                    {"bins", p.bins},
                    {"support_n", p.pr.support_n},
                    {"measure_n", p.pr.measure_n},
                    {"half_width", p.pr.half_width},
                    {"rho", p.pr.rho},
                    {"kappa", p.pr.kappa},
                    {"band", p.band}};
    j["misfit"] = {{"type", misfit.type},
                   {"cutoff", misfit.cutoff},
                   {"sigma0", newton.offset.sigma},
                   {"decay", newton.offset.decay}};
    j["penalty"] = {{"sobolev", penalty.sobolev}, {"c_bd", penalty.c_bd}, {"q", penalty.q}};
    j["newton"] = {{"alpha0", newton.alpha0},     {"c_dec", newton.c_dec},         {"max_outer", newton.max_outer},
                   {"inner_tol", newton.inner_tol}, {"max_inner", newton.max_inner}, {"step_eta", newton.step_eta},
                   {"cg_tol", newton.cg_tol},     {"cg_max_iter", newton.cg_max_iter},
                   {"min_step", newton.min_step}};
    j["stopping"] = {{"rule", stopping.rule},
                     {"tau", stopping.tau},
                     {"nu", stopping.nu},
                     {"phi", stopping.phi},
                     {"p", stopping.p},
                     {"gamma", stopping.gamma},
                     {"err_bound", stopping.err_bound ? json(*stopping.err_bound) : json(nullptr)},
                     {"err_variant", stopping.err_variant}};
    j["noise"] = {{"type", noise.type},
                  {"exposure_times", noise.exposure_times},
                  {"total_counts", noise.total_counts},
                  {"levels", noise.levels}};
    j["replicates"] = replicates;
    j["seed"] = seed;
    j["threads"] = threads;
    return j;
}

// FNV-1a of the canonical (sorted-key) dump, without the thread count.
inline std::string ExperimentConfig::hash() const
{
    json j = to_json();
    j.erase("threads");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, detail::fnv1a(j.dump()));
    return buf;
}

inline void ExperimentConfig::validate() const
{
    using detail::one_of;
    if (replicates < 1)
        throw ConfigError("replicates must be >= 1");
    if (threads < 0)
        throw ConfigError("threads must be >= 0");
    if (!one_of(problem.type, {"deconvolution", "phase_retrieval"}))
        throw ConfigError("problem.type must be deconvolution or phase_retrieval");
    if (problem.type == "deconvolution") {
        if (problem.n < 2 || !(problem.length > 0.0))
            throw ConfigError("problem: need n >= 2 and length > 0");
        if (!one_of(problem.kernel.type, {"gaussian", "poisson"}))
            throw ConfigError("problem.kernel.type must be gaussian or poisson");
        if (!one_of(problem.truth.type, {"reference_detail", "peaks", "kernel_source"}))
            throw ConfigError("problem.truth.type must be reference_detail, peaks or kernel_source");
        if (!one_of(problem.u0, {"auto", "reference", "constant"}))
            throw ConfigError("problem.u0 must be auto, reference or constant for deconvolution");
        if (problem.bins < 0 || problem.bins > problem.n)
            throw ConfigError("problem.bins must lie in [0, n]");
    } else {
        if (!one_of(problem.u0, {"auto", "disk", "constant"}))
            throw ConfigError("problem.u0 must be auto, disk or constant for phase retrieval");
        if (problem.bins != 0)
            throw ConfigError("problem.bins is not supported for phase retrieval");
    }
    if (!one_of(misfit.type, {"kl", "l2", "pearson"}))
        throw ConfigError("misfit.type must be kl, l2 or pearson");
    if (misfit.type == "pearson" && !(misfit.cutoff > 0.0))
        throw ConfigError("misfit.cutoff must be positive");
    if (penalty.sobolev < 0.0 || !(penalty.c_bd > 0.0) || penalty.q < 1.0)
        throw ConfigError("penalty: need sobolev >= 0, c_bd > 0, q >= 1");
    try {
        newton.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("newton: ") + e.what());
    }
    if (!one_of(stopping.rule, {"max_iter", "oracle", "mean_oracle", "hoelder", "log", "theta", "lepskii"}))
        throw ConfigError("stopping.rule: unknown rule '" + stopping.rule + "'");
    if (!one_of(stopping.err_variant, {"a", "b"}))
        throw ConfigError("stopping.err_variant must be a or b");
    if (!one_of(stopping.phi, {"hoelder", "log"}))
        throw ConfigError("stopping.phi must be hoelder or log");
    if (!one_of(noise.type, {"poisson", "gaussian", "none"}))
        throw ConfigError("noise.type must be poisson, gaussian or none");
    const std::vector<double> lv = levels();
    if (noise.type != "none") {
        if (lv.empty())
            throw ConfigError("noise: need at least one exposure time / level");
        for (size_t i = 0; i < lv.size(); ++i) {
            if (!(lv[i] > 0.0) || !std::isfinite(lv[i]))
                throw ConfigError("noise: exposure times / levels must be positive");
            if (i > 0 && !(lv[i] > lv[i - 1]))
                throw ConfigError("noise: exposure times / levels must be strictly ascending");
        }
    }
    if (noise.type == "gaussian" && misfit.type == "kl")
        throw ConfigError("the kl misfit needs count data (noise.type poisson)");
}

// ---------------------------------------------------------------- problems

struct Problem {
    std::shared_ptr<const ForwardModel> model;
    Signal u_true;
    Signal g_true;
    Signal u0;
    std::optional<Binning> binning;
    double mass = 0.0;  // integral of g_true
};

inline Problem build_problem(const ProblemSpec& s)
{
    Problem out;
    if (s.type == "deconvolution") {
        auto grid = Grid::uniform_1d(s.n, 0.0, s.length);
        const Signal k = s.kernel.type == "poisson" ? poisson_kernel(grid, s.kernel.r)
                                                    : gaussian_kernel(grid, s.kernel.width);
        out.model = std::make_shared<DeconvolutionModel>(grid, k);
        const Signal zero(grid, VectorXd::Zero(s.n));
        const TruthSpec& t = s.truth;
        Signal ref = zero;
        if (t.type == "reference_detail") {
            out.u_true = reference_detail_truth(grid, t.background, t.height, t.detail);
            ref = reference_profile(grid, t.background, t.height);
        } else if (t.type == "peaks") {
            // peaks_truth works in coordinates of [0, 1)
            auto unit = Grid::uniform_1d(s.n, 0.0, 1.0);
            out.u_true = Signal(grid, peaks_truth(unit, t.background).values());
            ref = Signal(grid, VectorXd::Constant(s.n, t.background));
        } else {
            out.u_true = k;
        }
        if (s.u0 == "constant")
            out.u0 = Signal(grid, VectorXd::Constant(s.n, s.u0_value));
        else if (s.u0 == "reference" || (s.u0 == "auto" && t.type != "kernel_source"))
            out.u0 = ref;
        else
            out.u0 = zero;
        out.binning = s.bins > 0 ? Binning::blocks(grid, s.bins) : Binning::identity(grid);
    } else {
        auto m = std::make_shared<PhaseRetrievalModel>(s.pr);
        const GridPtr& xg = m->input_grid();
        out.model = m;
        out.u_true = make_cell_phantom(xg, s.pr.rho, s.band);
        out.u0 = s.u0 == "constant" ? Signal(xg, VectorXd::Constant(xg->size(), s.u0_value))
                                    : disk_indicator(xg, s.pr.rho);
        out.binning = Binning::identity(m->output_grid());
    }
    out.g_true = out.model->apply(out.u_true);
    const Grid& gy = out.g_true.grid();
    out.mass = gy.inner(out.g_true.values(), VectorXd::Ones(out.g_true.size()));
    return out;
}

inline Misfit build_misfit(const MisfitSpec& s)
{
    if (s.type == "l2")
        return Misfit::l2();
    if (s.type == "pearson")
        return Misfit::pearson(s.cutoff);
    return Misfit::kl();
}

inline QuadraticPenalty build_penalty(const PenaltySpec& s, const Problem& p)
{
    const Grid& g = p.u0.grid();
    GramOperator gram = s.sobolev > 0.0 ? GramOperator::sobolev(g, s.sobolev) : GramOperator::identity();
    return QuadraticPenalty(p.u0, gram, s.q, s.c_bd);
}

// ---------------------------------------------------------------- data

struct Observation {
    Signal obs;
    std::optional<CountData> data;
};

// Replicate data for one noise level. Poisson: counts at exposure `level`
// (divided by the mass of g_true when total_counts is set). Gaussian: g_true
// plus white noise rescaled to grid norm exactly `level`.
inline Observation make_observation(const ExperimentConfig& cfg, const Problem& p, double level,
                                    std::uint64_t seed)
{
    Observation o;
    if (cfg.noise.type == "none") {
        o.obs = p.g_true;
    } else if (cfg.noise.type == "gaussian") {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd(0.0, 1.0);
        VectorXd z(p.g_true.size());
        for (Index i = 0; i < z.size(); ++i) z[i] = nd(rng);
        z *= level / p.g_true.grid().norm(z);
        o.obs = p.g_true.with_values(p.g_true.values() + z);
    } else {
        const double t = cfg.noise.total_counts ? level / p.mass : level;
        o.data = sample_counts(p.g_true, t, *p.binning, seed);
        o.obs = observed_density(*o.data);
    }
    return o;
}

inline std::optional<ErrFunctional> make_err(const Misfit& m, const Observation& o, const Signal& gdag)
{
    if (m.kind() == MisfitKind::pearson)
        return std::nullopt;
    if (m.kind() == MisfitKind::kl)
        return o.data ? std::optional<ErrFunctional>(ErrFunctional::poisson(*o.data, gdag)) : std::nullopt;
    return ErrFunctional::l2(o.obs, gdag);
}

inline StoppingRule build_rule(const StoppingSpec& s)
{
    StoppingRule r;
    r.tau = s.tau;
    r.nu = s.nu;
    r.gamma_nl = s.gamma;
    if (s.rule == "oracle")
        r.kind = StoppingRule::Kind::oracle;
    else if (s.rule == "hoelder")
        r.kind = StoppingRule::Kind::hoelder;
    else if (s.rule == "log")
        r.kind = StoppingRule::Kind::log;
    else if (s.rule == "theta") {
        r.kind = StoppingRule::Kind::theta;
        r.phi = s.phi == "log" ? log_index(s.p) : hoelder(s.nu);
    } else if (s.rule == "lepskii")
        r.kind = StoppingRule::Kind::lepskii;
    else
        r.kind = StoppingRule::Kind::max_iter;  // max_iter, mean_oracle
    return r;
}

// ---------------------------------------------------------------- runs

struct RunRow {
    double level = 0.0;  // exposure time or noise norm
    int replicate = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error_code;  // empty when ok
    std::string message;
    int stop_index = -1;
    bool stopped = false;
    int iterations = 0;          // last Newton index computed
    double error = kNaN;         // ||u_N - u_true||
    double bregman = kNaN;       // D(u_N, u_true)
    double max_err_n = kNaN;     // max over the trace of err_n
    double initial_error = kNaN;

    std::vector<double> errors;    // per-n true errors, kept in memory only
    std::vector<double> bregmans;
};

struct AggregateRow {
    double level = 0.0;
    std::string rule;  // stopping rule that produced the indices
    int successes = 0;
    int failures = 0;
    double mean_index = kNaN;
    double rms_error = kNaN;   // sqrt(E ||u_N - u_true||^2)
    double sd_error = kNaN;    // sqrt(Var ||u_N - u_true||), population variance
    double mean_bregman = kNaN;
    double mean_max_err_n = kNaN;
    double initial_error = kNaN;
};

struct ExperimentResult {
    std::vector<RunRow> runs;  // ordered by (level, replicate)
    std::vector<AggregateRow> aggregates;
    std::string config_hash;
};

// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
// stored by index; the order of execution is unspecified.
inline void parallel_for(size_t count, int threads, const std::function<void(size_t)>& fn)
{
    size_t workers = threads > 0 ? static_cast<size_t>(threads) : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, count);
    if (workers <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (size_t i = next++; i < count; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

inline double max_finite(const std::vector<double>& v)
{
    double m = kNaN;
    for (double x : v)
        if (std::isfinite(x) && !(x <= m))
            m = x;
    return m;
}

namespace detail {

struct Prepared {
    explicit Prepared(const ExperimentConfig& c)
        : cfg(c), problem(build_problem(c.problem)), misfit(build_misfit(c.misfit)),
          penalty(build_penalty(c.penalty, problem)), rule(build_rule(c.stopping))
    {
    }
    ExperimentConfig cfg;
    Problem problem;
    Misfit misfit;
    QuadraticPenalty penalty;
    StoppingRule rule;
    bool need_err = false;
};

inline Prepared prepare(const ExperimentConfig& cfg)
{
    cfg.validate();
    Prepared p(cfg);
    const bool a_priori = p.rule.is_a_priori();
    if (a_priori && cfg.misfit.type == "pearson")
        throw ConfigError("a priori stopping needs err, which the Pearson misfit does not provide");
    if (cfg.stopping.rule == "lepskii" && !cfg.stopping.err_bound && cfg.misfit.type == "pearson")
        throw ConfigError("lepskii with the Pearson misfit needs an explicit err_bound");
    p.need_err = cfg.misfit.type != "pearson";
    return p;
}

inline RunOptions run_options(const Prepared& p, const Observation& o)
{
    RunOptions opts;
    opts.rule = p.rule;
    opts.u_true = p.problem.u_true;
    opts.variant = p.cfg.stopping.err_variant == "a" ? ErrVariant::a : ErrVariant::b;
    if (p.need_err) {
        opts.err = make_err(p.misfit, o, p.problem.g_true);
        if (opts.err)
            opts.constants.c_err = opts.err->c_err();
    }
    if (p.rule.is_a_priori() && !opts.err)
        throw UnsupportedModeError("a priori stopping needs err for this misfit and noise model");
    if (p.rule.kind == StoppingRule::Kind::lepskii) {
        if (p.cfg.stopping.err_bound)
            opts.rule.err_bound = *p.cfg.stopping.err_bound;
        else if (opts.err)
            opts.rule.err_bound = (*opts.err)(p.problem.g_true, p.cfg.newton.sigma(0));
        else
            throw UnsupportedModeError("lepskii needs an err bound");
    }
    return opts;
}

inline RunRow run_one(const Prepared& p, double level, int rep)
{
    RunRow row;
    row.level = level;
    row.replicate = rep;
    row.seed = p.cfg.seed + static_cast<std::uint64_t>(rep);
    row.initial_error = norm(p.problem.u0 - p.problem.u_true);
    try {
        const Observation o = make_observation(p.cfg, p.problem, level, row.seed);
        const NewtonResult r =
            run_newton(*p.problem.model, p.misfit, p.penalty, o.obs, p.cfg.newton, run_options(p, o));
        row.ok = true;
        row.stop_index = r.stop.index;
        row.stopped = r.stop.stopped;
        row.iterations = static_cast<int>(r.trace.size()) - 1;
        row.errors = r.trace.true_errors();
        for (const auto& rec : r.trace.records) row.bregmans.push_back(rec.bregman);
        row.error = row.errors[static_cast<size_t>(row.stop_index)];
        row.bregman = row.bregmans[static_cast<size_t>(row.stop_index)];
        row.max_err_n = max_finite(r.trace.err_n());
        if (r.trace.status != "ok")
            row.message = r.trace.status;
    } catch (const Error& e) {
        row.ok = false;
        row.error_code = e.code();
        row.message = e.what();
    }
    return row;
}

}  // namespace detail

inline AggregateRow aggregate(const std::vector<RunRow>& rows, double level, const std::string& rule)
{
    AggregateRow a;
    a.level = level;
    a.rule = rule;
    double s_idx = 0, s_e2 = 0, s_e = 0, s_b = 0, s_m = 0;
    int n_m = 0;
    for (const auto& r : rows) {
        if (r.level != level)
            continue;
        a.initial_error = r.initial_error;
        if (!r.ok) {
            ++a.failures;
            continue;
        }
        ++a.successes;
        s_idx += r.stop_index;
        s_e += r.error;
        s_e2 += r.error * r.error;
        s_b += r.bregman;
        if (std::isfinite(r.max_err_n)) {
            s_m += r.max_err_n;
            ++n_m;
        }
    }
    if (a.successes > 0) {
        const double n = a.successes;
        a.mean_index = s_idx / n;
        a.rms_error = std::sqrt(s_e2 / n);
        const double mean = s_e / n;
        a.sd_error = std::sqrt(std::max(0.0, s_e2 / n - mean * mean));
        a.mean_bregman = s_b / n;
    }
    if (n_m > 0)
        a.mean_max_err_n = s_m / n_m;
    return a;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg)
{
    const detail::Prepared p = detail::prepare(cfg);
    const std::vector<double> lv = cfg.levels();
    const size_t reps = static_cast<size_t>(cfg.replicates);
    ExperimentResult out;
    out.config_hash = cfg.hash();
    out.runs.resize(lv.size() * reps);
    parallel_for(out.runs.size(), cfg.threads, [&](size_t i) {
        out.runs[i] = detail::run_one(p, lv[i / reps], static_cast<int>(i % reps));
    });
    const bool mean_oracle = cfg.stopping.rule == "mean_oracle";
    for (size_t l = 0; l < lv.size(); ++l) {
        if (mean_oracle) {
            std::vector<std::vector<double>> errs;
            for (size_t k = 0; k < reps; ++k)
                if (out.runs[l * reps + k].ok)
                    errs.push_back(out.runs[l * reps + k].errors);
            if (!errs.empty()) {
                const int n = mean_oracle_index(errs);
                for (size_t k = 0; k < reps; ++k) {
                    RunRow& r = out.runs[l * reps + k];
                    if (!r.ok)
                        continue;
                    r.stop_index = std::min(n, static_cast<int>(r.errors.size()) - 1);
                    r.error = r.errors[static_cast<size_t>(r.stop_index)];
                    r.bregman = r.bregmans[static_cast<size_t>(r.stop_index)];
                }
            }
        }
        out.aggregates.push_back(aggregate(out.runs, lv[l], cfg.stopping.rule));
    }
    return out;
}

struct Reconstruction {
    Problem problem;
    Signal obs;
    Signal u;  // iterate at the stopping index
    int stop_index = 0;
};

// One run at the first noise level with replicate 0, for plotting. The
// mean-oracle rule falls back to the per-run oracle here.
inline Reconstruction reconstruct(const ExperimentConfig& cfg)
{
    ExperimentConfig c = cfg;
    if (c.stopping.rule == "mean_oracle")
        c.stopping.rule = "oracle";
    const detail::Prepared p = detail::prepare(c);
    const Observation o = make_observation(c, p.problem, c.levels().front(), c.seed);
    const NewtonResult r = run_newton(*p.problem.model, p.misfit, p.penalty, o.obs, c.newton, detail::run_options(p, o));
    return {p.problem, o.obs, r.trace[static_cast<size_t>(r.stop.index)].u, r.stop.index};
}

// ---------------------------------------------------------------- studies

struct ErrnRow {
    double level = 0.0;
    int successes = 0;
    double mean_max_err_n = kNaN;
    double ratio = kNaN;  // previous mean / this mean
};

// Mean over replicates of max_n err_n for each exposure time, with the
// successive ratios. Runs every replicate to max_outer.
inline std::vector<ErrnRow> run_errn_study(ExperimentConfig cfg)
{
    if (cfg.noise.type != "poisson")
        throw ConfigError("errn study needs Poisson data");
    if (cfg.misfit.type == "pearson")
        throw ConfigError("errn study needs a misfit with an err functional (kl or l2)");
    cfg.stopping.rule = "max_iter";
    const ExperimentResult res = run_experiment(cfg);
    std::vector<ErrnRow> out;
    for (const auto& a : res.aggregates) {
        ErrnRow r;
        r.level = a.level;
        r.successes = a.successes;
        r.mean_max_err_n = a.mean_max_err_n;
        if (!out.empty())
            r.ratio = out.back().mean_max_err_n / r.mean_max_err_n;
        out.push_back(r);
    }
    return out;
}

struct RatePoint {
    double x = 0.0;  // effective noise level, or alpha_n for exact data
    double y = 0.0;  // mean Bregman distance at the stopping index
    double mean_index = kNaN;
    double level = 0.0;
};

struct RateStudyResult {
    std::vector<RatePoint> points;
    RateFit fit;
    double expected_slope = kNaN;
    std::string mode;  // noise | exact
};

// Noisy data: for each level the mean over replicates of D(u_N, u_true) at
// the configured stopping index, against the effective noise level
// (1/sqrt(t) for Poisson data, delta^2 = err for Gaussian data).
// Exact data (noise.type none): D(u_n, u_true) against alpha_n along one run,
// n >= 1. The expected slope is reported for the Hoelder rule / index.
inline RateStudyResult run_rate_study(const ExperimentConfig& cfg)
{
    RateStudyResult out;
    if (cfg.noise.type == "none") {
        out.mode = "exact";
        ExperimentConfig c = cfg;
        c.replicates = 1;
        c.stopping.rule = "max_iter";
        const ExperimentResult res = run_experiment(c);
        const RunRow& r = res.runs.front();
        if (!r.ok)
            throw NumericError("rate study: exact-data run failed: " + r.message);
        std::vector<double> xs, ys;
        for (size_t n = 1; n < r.bregmans.size(); ++n) {
            RatePoint pt;
            pt.x = cfg.newton.alpha(static_cast<int>(n));
            pt.y = r.bregmans[n];
            pt.mean_index = static_cast<double>(n);
            out.points.push_back(pt);
            xs.push_back(pt.x);
            ys.push_back(pt.y);
        }
        out.fit = fit_rate(xs, ys);
        out.expected_slope = 2.0 * cfg.stopping.nu;
        return out;
    }
    out.mode = "noise";
    if (cfg.levels().size() < 3)
        throw InvalidInputError("rate study: need at least 3 noise levels");
    const ExperimentResult res = run_experiment(cfg);
    std::vector<double> xs, ys;
    for (const auto& a : res.aggregates) {
        if (a.successes == 0)
            throw NumericError("rate study: every run failed at level " + std::to_string(a.level));
        RatePoint pt;
        pt.level = a.level;
        pt.x = cfg.noise.type == "gaussian" ? a.level * a.level : 1.0 / std::sqrt(a.level);
        pt.y = a.mean_bregman;
        pt.mean_index = a.mean_index;
        out.points.push_back(pt);
        xs.push_back(pt.x);
        ys.push_back(pt.y);
    }
    out.fit = fit_rate(xs, ys);
    if (cfg.stopping.rule == "hoelder" || (cfg.stopping.rule == "theta" && cfg.stopping.phi == "hoelder"))
        out.expected_slope = additive_exponent(cfg.stopping.nu);
    return out;
}

// ---------------------------------------------------------------- checks

struct CheckRow {
    std::string name;
    double value = kNaN;
    double threshold = kNaN;
    bool pass = false;
};

// Adjoint, derivative and misfit-gradient checks on the shipped models and
// misfits at random points. Passing means value <= threshold, except for the
// derivative order where value >= threshold.
inline std::vector<CheckRow> run_check_suite(std::uint64_t seed)
{
    std::vector<CheckRow> rows;
    auto le = [&](std::string name, double v, double thr) { rows.push_back({std::move(name), v, thr, v <= thr}); };
    auto ge = [&](std::string name, double v, double thr) { rows.push_back({std::move(name), v, thr, v >= thr}); };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.5, 2.0);
    auto random_signal = [&](const GridPtr& g, bool positive) {
        VectorXd v(g->size());
        for (Index i = 0; i < v.size(); ++i) v[i] = positive ? ud(rng) : nd(rng);
        return Signal(g, std::move(v));
    };

    struct Named {
        std::string name;
        std::shared_ptr<const ForwardModel> model;
        bool linear;
    };
    std::vector<Named> models;
    {
        auto g = Grid::uniform_1d(64, 0.0, 1.0);
        models.push_back({"deconvolution_gaussian", std::make_shared<DeconvolutionModel>(g, gaussian_kernel(g, 0.03)),
                          true});
        models.push_back({"deconvolution_poisson", std::make_shared<DeconvolutionModel>(g, poisson_kernel(g, 0.9)),
                          true});
        PhaseRetrievalParams pr;
        pr.support_n = 16;
        pr.measure_n = 24;
        pr.kappa = 8.0;
        models.push_back({"phase_retrieval", std::make_shared<PhaseRetrievalModel>(pr), false});
    }
    for (const auto& m : models) {
        const GridPtr& gx = m.model->input_grid();
        const Signal u = random_signal(gx, !m.linear);
        le(m.name + ".adjoint", check_adjoint(*m.model, u, 10, rng()), 1e-8);
        Signal h = random_signal(gx, false);
        h = (1.0 / norm(h)) * h;
        const DerivativeCheck d = check_derivative(*m.model, u, h);
        if (m.linear) {
            // exact linearization: the remainder is rounding noise
            const double scale = norm(m.model->apply(h));
            le(m.name + ".derivative_remainder", max_finite(d.remainder) / scale, 1e-6);
        } else {
            ge(m.name + ".derivative_order", d.order, 0.9);
        }
    }

    // Misfit gradients against central differences of the value.
    auto g = Grid::uniform_1d(32, 0.0, 1.0);
    const double sigma = 0.01;
    const Misfit misfits[] = {Misfit::l2(), Misfit::kl(), Misfit::pearson(0.2)};
    for (const Misfit& ms : misfits) {
        const Signal gv = random_signal(g, true);
        const Signal obs = random_signal(g, true);
        const VectorXd grad = ms.gradient(gv, obs, sigma);
        Signal h = random_signal(g, false);
        h = (1.0 / norm(h)) * h;
        const double e = 1e-6;
        const double fd = (ms.value(gv + e * h, obs, sigma) - ms.value(gv - e * h, obs, sigma)) / (2.0 * e);
        const double an = g->inner(grad, h.values());
        le(ms.name() + ".gradient", std::abs(fd - an) / std::max(std::abs(an), 1e-300), 1e-5);
    }
    return rows;
}

// ---------------------------------------------------------------- output

namespace detail {
inline std::string fmt(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Quote a free-text CSV field.
inline std::string quote(const std::string& s)
{
    std::string q = "\"";
    for (char c : s) {
        if (c == '"')
            q += '"';
        q += c == '\n' ? ' ' : c;
    }
    return q + "\"";
}
}  // namespace detail

inline void write_header(std::ostream& os, const std::string& hash) { os << "# config_hash=" << hash << "\n"; }

inline void write_runs_csv(std::ostream& os, const ExperimentResult& r, const std::string& rule)
{
    using detail::fmt;
    write_header(os, r.config_hash);
    os << "level,replicate,seed,status,rule,stop_index,stopped,iterations,error,bregman,max_err_n,initial_error,"
          "message\n";
    for (const auto& x : r.runs) {
        os << fmt(x.level) << ',' << x.replicate << ',' << x.seed << ',' << (x.ok ? "ok" : x.error_code) << ','
           << rule << ',' << x.stop_index << ',' << (x.stopped ? 1 : 0) << ',' << x.iterations << ','
           << fmt(x.error) << ',' << fmt(x.bregman) << ',' << fmt(x.max_err_n) << ',' << fmt(x.initial_error)
           << ',' << detail::quote(x.message) << "\n";
    }
}

inline void write_summary_csv(std::ostream& os, const ExperimentResult& r)
{
    using detail::fmt;
    write_header(os, r.config_hash);
    os << "level,rule,successes,failures,N,rms_error,sd_error,mean_bregman,mean_max_err_n,initial_error\n";
    for (const auto& a : r.aggregates)
        os << fmt(a.level) << ',' << a.rule << ',' << a.successes << ',' << a.failures << ',' << fmt(a.mean_index)
           << ',' << fmt(a.rms_error) << ',' << fmt(a.sd_error) << ',' << fmt(a.mean_bregman) << ','
           << fmt(a.mean_max_err_n) << ',' << fmt(a.initial_error) << "\n";
}

inline void write_errn_csv(std::ostream& os, const std::vector<ErrnRow>& rows, const std::string& hash)
{
    using detail::fmt;
    write_header(os, hash);
    os << "level,successes,mean_max_err_n,ratio\n";
    for (const auto& r : rows)
        os << fmt(r.level) << ',' << r.successes << ',' << fmt(r.mean_max_err_n) << ',' << fmt(r.ratio) << "\n";
}

inline void write_rates_csv(std::ostream& os, const RateStudyResult& r, const std::string& hash)
{
    using detail::fmt;
    write_header(os, hash);
    os << "# mode=" << r.mode << " slope=" << fmt(r.fit.slope) << " intercept=" << fmt(r.fit.intercept)
       << " r2=" << fmt(r.fit.r2) << " expected_slope=" << fmt(r.expected_slope) << "\n";
    os << "level,x,mean_bregman,mean_index\n";
    for (const auto& p : r.points)
        os << fmt(p.level) << ',' << fmt(p.x) << ',' << fmt(p.y) << ',' << fmt(p.mean_index) << "\n";
}

inline void write_checks_csv(std::ostream& os, const std::vector<CheckRow>& rows, const std::string& hash)
{
    using detail::fmt;
    write_header(os, hash);
    os << "check,value,threshold,pass\n";
    for (const auto& r : rows) os << r.name << ',' << fmt(r.value) << ',' << fmt(r.threshold) << ',' << r.pass << "\n";
}

// Row-major matrix: 2D uniform grids as nx rows of ny values, anything else
// as a single row.
inline void write_matrix_csv(std::ostream& os, const Signal& s, const std::string& hash)
{
    const GridShape& sh = s.grid().shape();
    const Index rows = sh.uniform && sh.ny > 1 ? sh.nx : 1;
    const Index cols = s.size() / rows;
    write_header(os, hash);
    os << "# rows=" << rows << " cols=" << cols << "\n";
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) os << (j ? "," : "") << detail::fmt(s[i * cols + j]);
        os << "\n";
    }
}

// Reads a matrix written by write_matrix_csv into a flat row-major vector.
inline VectorXd read_matrix_csv(std::istream& is, Index* rows_out = nullptr, Index* cols_out = nullptr)
{
    std::string line;
    long long rows = -1, cols = -1;
    std::vector<double> vals;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        if (line[0] == '#') {
            std::sscanf(line.c_str(), "# rows=%lld cols=%lld", &rows, &cols);
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw InvalidInputError("matrix csv: bad value '" + cell + "'");
            }
        }
    }
    if (rows < 0 || cols < 0 || static_cast<long long>(vals.size()) != rows * cols)
        throw InvalidInputError("matrix csv: size does not match the header");
    if (rows_out)
        *rows_out = rows;
    if (cols_out)
        *cols_out = cols;
    return Eigen::Map<VectorXd>(vals.data(), static_cast<Index>(vals.size()));
}

}  // namespace irnm
