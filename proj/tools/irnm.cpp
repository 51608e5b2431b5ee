// irnm: experiment harness command line.
//
//   irnm run   --config cfg.json --seed 1 --out dir   per-run and summary tables
//   irnm rates --config cfg.json --seed 1 --out dir   rate study with log-log fit
//   irnm errn  --config cfg.json --seed 1 --out dir   err_n decay over exposure times
//   irnm check --seed 1 --out dir                     adjoint / derivative / gradient suite
//   irnm plot  --config cfg.json --seed 1 --out dir   truth, data and reconstruction matrices
//
// Every subcommand accepts --set path=value (JSON value, path with dots) to
// override config entries, plus --replicates and --threads.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "irnm/experiment.hpp"

namespace fs = std::filesystem;
using namespace irnm;

namespace {

struct Options {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::vector<std::string> sets;
    int replicates = 0;
    int threads = -1;
};

json load_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("io", "cannot open config file '" + path + "'");
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("cannot parse '") + path + "': " + e.what());
    }
}

void apply_set(json& j, const std::string& kv)
{
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects path=value, got '" + kv + "'");
    std::string ptr = "/" + kv.substr(0, eq);
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    const std::string raw = kv.substr(eq + 1);
    json v;
    try {
        v = json::parse(raw);
    } catch (const json::exception&) {
        v = raw;  // bare strings
    }
    j[json::json_pointer(ptr)] = v;
}

ExperimentConfig make_config(const Options& o, bool need_file)
{
    json j = json::object();
    if (!o.config.empty())
        j = load_json(o.config);
    else if (need_file)
        throw ConfigError("--config is required for this subcommand");
    for (const auto& s : o.sets) apply_set(j, s);
    j["seed"] = o.seed;
    if (o.replicates > 0)
        j["replicates"] = o.replicates;
    if (o.threads >= 0)
        j["threads"] = o.threads;
    return ExperimentConfig::from_json(j);
}

std::ofstream open_out(const fs::path& p)
{
    std::ofstream f(p, std::ios::binary);
    if (!f)
        throw Error("io", "cannot write '" + p.string() + "'");
    return f;
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::string>& files)
{
    auto f = open_out(dir / "manifest.txt");
    f << "# config_hash=" << cfg.hash() << "\n";
    f << "command=" << command << "\n";
    f << "seed=" << cfg.seed << "\n";
    f << "files=";
    for (size_t i = 0; i < files.size(); ++i) f << (i ? "," : "") << files[i];
    f << "\n";
    json j = cfg.to_json();
    j.erase("threads");
    f << "config=" << j.dump() << "\n";
}

void cmd_run(const Options& o)
{
    const ExperimentConfig cfg = make_config(o, true);
    const ExperimentResult r = run_experiment(cfg);
    const fs::path dir(o.out);
    {
        auto f = open_out(dir / "runs.csv");
        write_runs_csv(f, r, cfg.stopping.rule);
    }
    {
        auto f = open_out(dir / "summary.csv");
        write_summary_csv(f, r);
    }
    write_manifest(dir, "run", cfg, {"runs.csv", "summary.csv"});
    for (const auto& a : r.aggregates)
        std::cout << "level=" << detail::fmt(a.level) << " N=" << detail::fmt(a.mean_index)
                  << " rms_error=" << detail::fmt(a.rms_error) << " sd_error=" << detail::fmt(a.sd_error)
                  << " ok=" << a.successes << " failed=" << a.failures << "\n";
}

void cmd_rates(const Options& o)
{
    const ExperimentConfig cfg = make_config(o, true);
    const RateStudyResult r = run_rate_study(cfg);
    const fs::path dir(o.out);
    {
        auto f = open_out(dir / "rates.csv");
        write_rates_csv(f, r, cfg.hash());
    }
    write_manifest(dir, "rates", cfg, {"rates.csv"});
    std::cout << "mode=" << r.mode << " slope=" << detail::fmt(r.fit.slope) << " r2=" << detail::fmt(r.fit.r2)
              << " expected=" << detail::fmt(r.expected_slope) << "\n";
}

void cmd_errn(const Options& o)
{
    const ExperimentConfig cfg = make_config(o, true);
    const auto rows = run_errn_study(cfg);
    const fs::path dir(o.out);
    {
        auto f = open_out(dir / "errn.csv");
        write_errn_csv(f, rows, cfg.hash());
    }
    write_manifest(dir, "errn", cfg, {"errn.csv"});
    for (const auto& r : rows)
        std::cout << "t=" << detail::fmt(r.level) << " mean_max_err_n=" << detail::fmt(r.mean_max_err_n)
                  << " ratio=" << detail::fmt(r.ratio) << "\n";
}

int cmd_check(const Options& o)
{
    const ExperimentConfig cfg = make_config(o, false);
    const auto rows = run_check_suite(cfg.seed);
    const fs::path dir(o.out);
    {
        auto f = open_out(dir / "checks.csv");
        write_checks_csv(f, rows, cfg.hash());
    }
    write_manifest(dir, "check", cfg, {"checks.csv"});
    int failed = 0;
    for (const auto& r : rows) {
        std::cout << (r.pass ? "ok   " : "FAIL ") << r.name << " " << detail::fmt(r.value) << "\n";
        failed += !r.pass;
    }
    if (failed) {
        std::cerr << "error: code=check_failed message=\"" << failed << " check(s) failed\"\n";
        return 1;
    }
    return 0;
}

void cmd_plot(const Options& o)
{
    const ExperimentConfig cfg = make_config(o, true);
    const Reconstruction r = reconstruct(cfg);
    const fs::path dir(o.out);
    const std::string h = cfg.hash();
    const std::pair<const char*, const Signal*> out[] = {{"truth.csv", &r.problem.u_true},
                                                          {"initial.csv", &r.problem.u0},
                                                          {"observation.csv", &r.obs},
                                                          {"reconstruction.csv", &r.u}};
    std::vector<std::string> files;
    for (const auto& [name, sig] : out) {
        auto f = open_out(dir / name);
        write_matrix_csv(f, *sig, h);
        files.push_back(name);
    }
    write_manifest(dir, "plot", cfg, files);
    std::cout << "stop_index=" << r.stop_index << " error=" << detail::fmt(norm(r.u - r.problem.u_true)) << "\n";
}

std::string escape(const std::string& s)
{
    std::string e;
    for (char c : s) {
        if (c == '"' || c == '\\')
            e += '\\';
        e += c == '\n' ? ' ' : c;
    }
    return e;
}

int fail(const std::string& code, const std::string& msg)
{
    std::cerr << "error: code=" << code << " message=\"" << escape(msg) << "\"\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Iteratively regularized Newton methods: experiment harness"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", o.config, "JSON config file");
        if (config_required)
            c->required();
        sub->add_option("--seed", o.seed, "base seed; replicate k uses seed + k")->required();
        sub->add_option("--out", o.out, "output directory (created if missing)")->required();
        sub->add_option("--set", o.sets, "override a config entry, e.g. --set noise.exposure_times=[100,1000]");
        sub->add_option("--replicates", o.replicates, "override the replicate count");
        sub->add_option("--threads", o.threads, "worker threads (0: all cores)");
    };
    auto* run = app.add_subcommand("run", "run replicated experiments");
    auto* rates = app.add_subcommand("rates", "convergence rate study");
    auto* errn = app.add_subcommand("errn", "err_n decay study");
    auto* check = app.add_subcommand("check", "adjoint, derivative and gradient checks");
    auto* plot = app.add_subcommand("plot", "truth, data and reconstruction as CSV matrices");
    add_common(run, true);
    add_common(rates, true);
    add_common(errn, true);
    add_common(check, false);
    add_common(plot, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        std::error_code ec;
        fs::create_directories(o.out, ec);
        if (ec)
            throw Error("io", "cannot create output directory '" + o.out + "': " + ec.message());
        if (*run)
            cmd_run(o);
        else if (*rates)
            cmd_rates(o);
        else if (*errn)
            cmd_errn(o);
        else if (*check)
            return cmd_check(o);
        else if (*plot)
            cmd_plot(o);
    } catch (const Error& e) {
        return fail(e.code(), e.what());
    } catch (const json::exception& e) {
        return fail("config", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
