// Command-line front end for the sketchtrack library: deterministic solves
// and the validation experiments, with CSV/JSON outputs suitable for CI
// gating. Exit codes: 0 success (or stop reached), 2 iteration cap hit
// without stopping, 3 experiment predicate failed, 64 bad flags, 74 I/O
// failure, 1 unexpected error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sketchtrack/sketchtrack.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sketchtrack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitMaxIters = 2;
constexpr int kExitPredicate = 3;
constexpr int kExitUsage = 64;
constexpr int kExitIo = 74;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

SketchMethodId method_from_string(const std::string& name) {
    if (name == "gaussian") return SketchMethodId::Gaussian;
    if (name == "achlioptas") return SketchMethodId::Achlioptas;
    if (name == "fjlt") return SketchMethodId::FJLT;
    if (name == "rowsubset") return SketchMethodId::RowSubset;
    throw std::invalid_argument("--method: unknown sketch method '" + name + "'");
}

// Published conservative contraction values by sketch family; row subsets are
// not covered by the table and keep eta = 1.
double eta_table(SketchMethodId m) {
    switch (m) {
        case SketchMethodId::Achlioptas: return 26.0;
        case SketchMethodId::FJLT: return 188.0;
        case SketchMethodId::Gaussian: return 26.0;
        case SketchMethodId::RowSubset: return 1.0;
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Option bundles
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::uint64_t seed = 1;
    std::string outdir = ".";
    std::string csv_name;
    std::string json_name;
    long jobs = 1;
    std::string preset;
    std::string config_path;
};

// Handle needed to decide whether the output-directory env fallback applies.
struct CommonHooks {
    CLI::Option* outdir = nullptr;
};

struct SystemOpts {
    std::string gen = "rand_uniform";
    long n = 64;
    std::string method = "gaussian";
    long p = 16;
    std::string matrix_path;
    std::string rhs_path;
};

struct StoppingOpts {
    double upsilon = 1.0;
    double delta_i = 0.9;
    double delta_ii = 1.1;
    double xi_i = 0.01;
    double xi_ii = 0.01;
    double eta = 1.0;
    double alpha = 0.05;

    StoppingParams params() const {
        StoppingParams sp;
        sp.upsilon = upsilon;
        sp.delta_i = delta_i;
        sp.delta_ii = delta_ii;
        sp.xi_i = xi_i;
        sp.xi_ii = xi_ii;
        sp.eta = eta;
        sp.alpha = alpha;
        return sp;
    }
};

// Option handles needed to apply --preset without clobbering explicit flags.
struct PresetHooks {
    CLI::Option* p = nullptr;
    CLI::Option* lambda = nullptr;
    CLI::Option* lambda1 = nullptr;
    CLI::Option* lambda2 = nullptr;
    CLI::Option* iters = nullptr;
    CLI::Option* upsilon = nullptr;
    CLI::Option* delta_i = nullptr;
    CLI::Option* delta_ii = nullptr;
    CLI::Option* xi_i = nullptr;
    CLI::Option* xi_ii = nullptr;
    CLI::Option* eta = nullptr;
};

CommonHooks add_common(CLI::App* sub, CommonOpts& c, const std::string& command) {
    c.csv_name = command + ".csv";
    c.json_name = command + ".json";
    CommonHooks h;
    sub->add_option("--seed", c.seed, "Master seed; identical seeds give bit-identical outputs")
        ->capture_default_str();
    h.outdir = sub->add_option("--outdir", c.outdir,
                               "Directory all outputs are written into (defaults to "
                               "$SKETCHTRACK_OUTDIR, then the working directory)")
                   ->capture_default_str();
    sub->add_option("--csv", c.csv_name, "CSV file name inside --outdir")->capture_default_str();
    sub->add_option("--json", c.json_name, "JSON summary file name inside --outdir")
        ->capture_default_str();
    sub->add_option("--jobs", c.jobs, "Worker threads (1 keeps reduction order fixed)")
        ->capture_default_str();
    sub->add_option("--config", c.config_path,
                    "Read options from a key = value file (# comments); explicit flags win");
    return h;
}

// Applies `key = value` lines to every option the command line left unset.
// Values are whitespace-split so list options take several entries.
void apply_config_file(CLI::App* sub, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("--config: cannot open " + path);
    std::string line;
    long line_no = 0;
    auto trim = [](const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string entry = trim(line);
        if (entry.empty()) continue;
        auto eq = entry.find('=');
        std::string where = path + ':' + std::to_string(line_no);
        if (eq == std::string::npos)
            throw std::invalid_argument("--config: " + where + ": expected key = value");
        std::string key = trim(entry.substr(0, eq));
        std::string value = trim(entry.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("--config: " + where + ": empty key or value");
        if (key == "config")
            throw std::invalid_argument("--config: " + where + ": files cannot nest configs");
        CLI::Option* op = sub->get_option_no_throw("--" + key);
        if (op == nullptr)
            throw std::invalid_argument("--config: " + where + ": unknown key '" + key + "'");
        if (op->count() > 0) continue;  // explicit flag wins
        std::istringstream pieces(value);
        std::string piece;
        while (pieces >> piece) op->add_result(piece);
        op->run_callback();
    }
}

// Config file first, then the env-var output directory for anything still
// unset; runs at the head of every subcommand callback.
void apply_common(CLI::App* sub, const CommonHooks& h, CommonOpts& c) {
    apply_config_file(sub, c.config_path);
    if (h.outdir != nullptr && h.outdir->count() == 0) {
        const char* env = std::getenv("SKETCHTRACK_OUTDIR");
        if (env != nullptr && *env != '\0') c.outdir = env;
    }
}

void add_preset(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--preset", c.preset,
                    "Named parameter set; 'paper' pins p=25, lambda=15, 300 iters, "
                    "(100,0.9,1.1,0.01,0.01), eta from the published table")
        ->check(CLI::IsMember({"paper"}));
}

PresetHooks add_stopping(CLI::App* sub, StoppingOpts& s) {
    PresetHooks h;
    h.upsilon = sub->add_option("--upsilon", s.upsilon, "Residual-level stopping threshold")
                    ->capture_default_str();
    h.delta_i = sub->add_option("--delta-i", s.delta_i, "Late-stop margin in (0,1)")
                    ->capture_default_str();
    h.delta_ii = sub->add_option("--delta-ii", s.delta_ii, "Early-stop margin > 1")
                     ->capture_default_str();
    h.xi_i = sub->add_option("--xi-i", s.xi_i, "Tolerated late-stop probability")
                 ->capture_default_str();
    h.xi_ii = sub->add_option("--xi-ii", s.xi_ii, "Tolerated early-stop probability")
                  ->capture_default_str();
    h.eta = sub->add_option("--eta", s.eta, "Interval contraction parameter >= 1")
                ->capture_default_str();
    sub->add_option("--alpha", s.alpha, "Interval level: 1 - alpha coverage")
        ->capture_default_str();
    return h;
}

void add_system(CLI::App* sub, SystemOpts& sys, PresetHooks& h, bool with_files) {
    sub->add_option("--gen", sys.gen, "Test-matrix generator")
        ->check(CLI::IsMember({"golub", "wilkinson", "rohess", "rand_uniform"}))
        ->capture_default_str();
    sub->add_option("--n", sys.n, "System dimension (square n x n)")->capture_default_str();
    sub->add_option("--method", sys.method, "Sketch family")
        ->check(CLI::IsMember({"gaussian", "achlioptas", "fjlt", "rowsubset"}))
        ->capture_default_str();
    h.p = sub->add_option("--p", sys.p, "Embedding dimension")->capture_default_str();
    if (with_files) {
        sub->add_option("--matrix", sys.matrix_path,
                        "Read A from a whitespace text file instead of --gen");
        sub->add_option("--rhs", sys.rhs_path, "Read b from a text file (with --matrix)");
    }
}

void apply_preset(const std::string& preset, const std::string& method, const PresetHooks& h,
                  long* p, long* lambda, long* lambda1, long* lambda2, long* iters,
                  StoppingOpts* s) {
    if (preset != "paper") return;
    auto unset = [](const CLI::Option* o) { return o != nullptr && o->count() == 0; };
    if (unset(h.p) && p) *p = 25;
    if (unset(h.lambda) && lambda) *lambda = 15;
    if (unset(h.lambda1) && lambda1) *lambda1 = 15;
    if (unset(h.lambda2) && lambda2) *lambda2 = 15;
    if (unset(h.iters) && iters) *iters = 300;
    if (s != nullptr) {
        if (unset(h.upsilon)) s->upsilon = 100.0;
        if (unset(h.delta_i)) s->delta_i = 0.9;
        if (unset(h.delta_ii)) s->delta_ii = 1.1;
        if (unset(h.xi_i)) s->xi_i = 0.01;
        if (unset(h.xi_ii)) s->xi_ii = 0.01;
        if (unset(h.eta)) s->eta = eta_table(method_from_string(method));
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

void validate_common(const CommonOpts& c) {
    if (c.jobs < 1) throw std::invalid_argument("--jobs: must be >= 1");
    for (const std::string* name : {&c.csv_name, &c.json_name})
        if (name->empty() || name->find('/') != std::string::npos)
            throw std::invalid_argument("--csv/--json: output names must be plain file names");
}

Vector random_uniform_solution(long n, RngHandle& rng) {
    Vector x(n);
    for (long i = 0; i < n; ++i) x[i] = rng.uniform01();
    return x;
}

StreamSource make_generated_source(const SystemOpts& sys, RngHandle& rng) {
    GeneratorId gen = generator_from_string(sys.gen);
    SketchMethodId method = method_from_string(sys.method);
    Matrix a = depot_matrix(gen, sys.n, rng);
    Vector x_star = random_uniform_solution(sys.n, rng);
    Vector b = a * x_star;
    if (method == SketchMethodId::RowSubset)
        return StreamSource::row_subset(std::move(a), std::move(b), sys.p, std::move(x_star));
    return StreamSource::sketched_system(std::move(a), std::move(b), method, sys.p,
                                         std::move(x_star));
}

StreamSource make_file_source(const SystemOpts& sys) {
    Matrix a = load_matrix_text(sys.matrix_path);
    Vector b = load_vector(sys.rhs_path);
    SketchMethodId method = method_from_string(sys.method);
    if (method == SketchMethodId::RowSubset)
        return StreamSource::row_subset(std::move(a), std::move(b), sys.p);
    return StreamSource::sketched_system(std::move(a), std::move(b), method, sys.p);
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Writes <outdir>/<csv_name> and <outdir>/<json_name>; every byte is a pure
// function of the flags and seed.
void write_outputs(const CommonOpts& c, const std::string& command,
                   const std::map<std::string, std::string>& config, const json& results,
                   const std::string& csv_content) {
    fs::create_directories(c.outdir);
    write_text_file(fs::path(c.outdir) / c.csv_name, csv_content);
    json j;
    j["command"] = command;
    j["seed"] = c.seed;
    j["config"] = config;
    j["results"] = results;
    write_text_file(fs::path(c.outdir) / c.json_name, j.dump(2) + "\n");
}

std::map<std::string, std::string> system_config(const SystemOpts& sys) {
    std::map<std::string, std::string> m;
    if (!sys.matrix_path.empty()) {
        m["matrix"] = sys.matrix_path;
        m["rhs"] = sys.rhs_path;
    } else {
        m["gen"] = sys.gen;
        m["n"] = std::to_string(sys.n);
    }
    m["method"] = sys.method;
    m["p"] = std::to_string(sys.p);
    return m;
}

void merge_stopping_config(std::map<std::string, std::string>& m, const StoppingOpts& s) {
    m["upsilon"] = fmt(s.upsilon);
    m["delta_i"] = fmt(s.delta_i);
    m["delta_ii"] = fmt(s.delta_ii);
    m["xi_i"] = fmt(s.xi_i);
    m["xi_ii"] = fmt(s.xi_ii);
    m["eta"] = fmt(s.eta);
    m["alpha"] = fmt(s.alpha);
}

int usage_error(const std::string& what) {
    std::cerr << "error: " << what << "\n";
    return kExitUsage;
}

int io_error(const std::string& what) {
    std::cerr << "I/O error: " << what << "\n";
    return kExitIo;
}

int internal_error(const std::string& what) {
    std::cerr << "error: " << what << "\n";
    return kExitError;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolveOpts {
    CommonOpts common;
    SystemOpts sys;
    StoppingOpts stop;
    long lambda1 = 1;
    long lambda2 = 100;
    long iters = 1000000;
};

int cmd_solve(const SolveOpts& o) {
    StoppingParams sp = o.stop.params();
    try {
        validate_common(o.common);
        sp.validate();
        if (o.lambda1 < 1 || o.lambda2 < o.lambda1)
            throw std::invalid_argument("--lambda1/--lambda2: need 1 <= lambda1 <= lambda2");
        if (o.iters < 1) throw std::invalid_argument("--iters: must be >= 1");
        if (o.sys.matrix_path.empty() != o.sys.rhs_path.empty())
            throw std::invalid_argument("--matrix/--rhs: both are required for file input");
        method_from_string(o.sys.method);
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    }

    RngHandle rng(o.common.seed, 0);
    std::optional<StreamSource> src;
    if (!o.sys.matrix_path.empty()) {
        try {
            src.emplace(make_file_source(o.sys));
        } catch (const std::invalid_argument& e) {
            return usage_error(e.what());
        } catch (const std::exception& e) {
            return io_error(e.what());
        }
    } else {
        try {
            src.emplace(make_generated_source(o.sys, rng));
        } catch (const std::invalid_argument& e) {
            return usage_error(e.what());
        } catch (const std::exception& e) {
            return internal_error(e.what());
        }
    }

    RunTrace trace;
    try {
        RunOptions opt;
        opt.max_iters = o.iters;
        opt.lambda1 = o.lambda1;
        opt.lambda2 = o.lambda2;
        opt.stopping = sp;
        trace = run_tracked_solve(*src, Vector::Zero(src->n()), BInv{}, src->se(), opt, rng);
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }

    std::map<std::string, std::string> config = system_config(o.sys);
    merge_stopping_config(config, o.stop);
    config["lambda1"] = std::to_string(o.lambda1);
    config["lambda2"] = std::to_string(o.lambda2);
    config["iters"] = std::to_string(o.iters);

    json results;
    results["stopped"] = trace.stop_iteration.has_value();
    results["stop_iteration"] = trace.stop_iteration ? *trace.stop_iteration : -1;
    results["iterations"] = static_cast<long>(trace.records.size());
    results["final_rho"] = trace.records.back().rho;
    results["final_interval_lo"] = trace.records.back().lo;
    results["final_interval_hi"] = trace.records.back().hi;
    if (trace.records.back().err_b) results["final_err_b"] = *trace.records.back().err_b;

    try {
        std::ostringstream csv;
        write_trace_csv(csv, trace);
        write_outputs(o.common, "solve", config, results, csv.str());
    } catch (const std::exception& e) {
        return io_error(e.what());
    }
    return trace.stop_iteration ? kExitOk : kExitMaxIters;
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

struct CoverageOpts {
    CommonOpts common;
    SystemOpts sys{.gen = "rohess", .n = 128, .method = "gaussian", .p = 25};
    StoppingOpts stop;  // only eta/alpha are used
    long lambda = 15;
    long iters = 300;
    long replicates = 100;
};

int cmd_coverage(const CoverageOpts& o) {
    try {
        validate_common(o.common);
        if (o.lambda < 1 || o.iters < o.lambda)
            throw std::invalid_argument("--lambda/--iters: need 1 <= lambda <= iters");
        if (o.replicates < 1) throw std::invalid_argument("--replicates: must be >= 1");
        if (!(o.stop.alpha > 0.0 && o.stop.alpha < 1.0))
            throw std::invalid_argument("--alpha: must lie in (0,1)");
        if (!(o.stop.eta >= 1.0)) throw std::invalid_argument("--eta: must be >= 1");
        method_from_string(o.sys.method);
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    }

    CoverageReport report;
    try {
        RngHandle rng(o.common.seed, 0);
        StreamSource src = make_generated_source(o.sys, rng);
        CoverageConfig cfg;
        cfg.n_iters = o.iters;
        cfg.lambda = o.lambda;
        cfg.n_replicates = o.replicates;
        cfg.alpha = o.stop.alpha;
        cfg.etas = {o.stop.eta};
        report = two_stage_coverage(src, Vector::Zero(src.n()), BInv{}, cfg, rng, o.common.jobs);
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }

    const CoverageRates& rates = report.rates.front();
    bool pass = rates.replicate_set_miss_rate <= o.stop.alpha;

    std::map<std::string, std::string> config = system_config(o.sys);
    config["lambda"] = std::to_string(o.lambda);
    config["iters"] = std::to_string(o.iters);
    config["replicates"] = std::to_string(o.replicates);
    config["alpha"] = fmt(o.stop.alpha);
    config["eta"] = fmt(o.stop.eta);
    config["jobs"] = std::to_string(o.common.jobs);

    json results;
    results["eta"] = rates.eta;
    results["replicate_set_miss_rate"] = rates.replicate_set_miss_rate;
    results["n_replicate_sets"] = rates.n_replicate_sets;
    results["n_replicate_misses"] = rates.n_replicate_misses;
    results["mean_miss_rate"] = rates.mean_miss_rate;
    results["n_mean_checks"] = rates.n_mean_checks;
    results["n_mean_misses"] = rates.n_mean_misses;
    results["stage1_rep_miss_rate"] = rates.stage1_rep_miss_rate;
    results["n_stage1_rep_checks"] = rates.n_stage1_rep_checks;
    results["n_stage1_rep_misses"] = rates.n_stage1_rep_misses;
    results["pass"] = pass;

    try {
        std::ostringstream csv;
        csv << "start,rho_hat,has_stage1,stage1_rho,stage1_iota\n";
        for (const CoveragePoint& pt : report.points)
            csv << pt.start << ',' << fmt(pt.rho_hat) << ',' << (pt.has_stage1 ? 1 : 0) << ','
                << fmt(pt.stage1_rho) << ',' << fmt(pt.stage1_iota) << '\n';
        write_outputs(o.common, "coverage", config, results, csv.str());
    } catch (const std::exception& e) {
        return io_error(e.what());
    }
    return pass ? kExitOk : kExitPredicate;
}

// ---------------------------------------------------------------------------
// consistency
// ---------------------------------------------------------------------------

struct ConsistencyOpts {
    CommonOpts common;
    SystemOpts sys{.gen = "rohess", .n = 64, .method = "gaussian", .p = 16};
    long runs = 8;
    long iters = 300;
    long lambda1 = 1;
    long lambda2 = 15;
    double band = 10.0;
};

int cmd_consistency(const ConsistencyOpts& o) {
    try {
        validate_common(o.common);
        if (o.runs < 1) throw std::invalid_argument("--runs: must be >= 1");
        if (o.lambda1 < 1 || o.lambda2 < o.lambda1)
            throw std::invalid_argument("--lambda1/--lambda2: need 1 <= lambda1 <= lambda2");
        if (o.iters < 1) throw std::invalid_argument("--iters: must be >= 1");
        if (!(o.band >= 1.0)) throw std::invalid_argument("--band: must be >= 1");
        method_from_string(o.sys.method);
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    }

    ConsistencyReport report;
    try {
        RngHandle rng(o.common.seed, 0);
        StreamSource src = make_generated_source(o.sys, rng);
        std::vector<RunTrace> traces(static_cast<std::size_t>(o.runs));
        parallel_for(o.runs, o.common.jobs, [&](long r) {
            RunOptions opt;
            opt.max_iters = o.iters;
            opt.lambda1 = o.lambda1;
            opt.lambda2 = o.lambda2;
            opt.stop_enabled = false;
            RngHandle child = rng.split(100 + static_cast<std::uint64_t>(r));
            traces[static_cast<std::size_t>(r)] =
                run_tracked_solve(src, Vector::Zero(src.n()), BInv{}, src.se(), opt, child);
        });
        report = consistency_report(traces);
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }

    bool pass = report.boundedness_ratio <= o.band;

    std::map<std::string, std::string> config = system_config(o.sys);
    config["runs"] = std::to_string(o.runs);
    config["iters"] = std::to_string(o.iters);
    config["lambda1"] = std::to_string(o.lambda1);
    config["lambda2"] = std::to_string(o.lambda2);
    config["band"] = fmt(o.band);
    config["jobs"] = std::to_string(o.common.jobs);

    json results;
    results["boundedness_ratio"] = report.boundedness_ratio;
    results["band"] = o.band;
    results["warmup"] = report.warmup;
    results["pass"] = pass;

    try {
        std::ostringstream csv;
        csv << "k,p5,p50,p95\n";
        for (std::size_t i = 0; i < report.curves.front().size(); ++i)
            csv << (i + 1) << ',' << fmt(report.curves[0][i]) << ',' << fmt(report.curves[1][i])
                << ',' << fmt(report.curves[2][i]) << '\n';
        write_outputs(o.common, "consistency", config, results, csv.str());
    } catch (const std::exception& e) {
        return io_error(e.what());
    }
    return pass ? kExitOk : kExitPredicate;
}

// ---------------------------------------------------------------------------
// stopping
// ---------------------------------------------------------------------------

struct StoppingCmdOpts {
    CommonOpts common;
    SystemOpts sys{.gen = "rohess", .n = 128, .method = "gaussian", .p = 25};
    StoppingOpts stop{.upsilon = 100.0};
    long lambda1 = 1;
    long lambda2 = 100;
    long iters = 300;
    long runs = 3;
};

int cmd_stopping(const StoppingCmdOpts& o) {
    StoppingParams sp = o.stop.params();
    try {
        validate_common(o.common);
        sp.validate();
        if (o.runs < 1) throw std::invalid_argument("--runs: must be >= 1");
        if (o.lambda1 < 1 || o.lambda2 < o.lambda1)
            throw std::invalid_argument("--lambda1/--lambda2: need 1 <= lambda1 <= lambda2");
        if (o.iters < 1) throw std::invalid_argument("--iters: must be >= 1");
        method_from_string(o.sys.method);
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    }

    std::vector<StoppingErrorReport> reports(static_cast<std::size_t>(o.runs));
    try {
        RngHandle rng(o.common.seed, 0);
        StreamSource src = make_generated_source(o.sys, rng);
        parallel_for(o.runs, o.common.jobs, [&](long r) {
            RunOptions opt;
            opt.max_iters = o.iters;
            opt.lambda1 = o.lambda1;
            opt.lambda2 = o.lambda2;
            opt.stopping = sp;
            opt.stop_enabled = false;
            RngHandle child = rng.split(100 + static_cast<std::uint64_t>(r));
            RunTrace trace =
                run_tracked_solve(src, Vector::Zero(src.n()), BInv{}, src.se(), opt, child);
            reports[static_cast<std::size_t>(r)] = stopping_error_rates(trace, sp, src.se());
        });
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }

    StoppingErrorReport pooled;
    for (const StoppingErrorReport& r : reports) pooled.merge(r);
    bool pass = pooled.late_rate <= sp.xi_i && pooled.early_rate <= sp.xi_ii;

    std::map<std::string, std::string> config = system_config(o.sys);
    merge_stopping_config(config, o.stop);
    config["lambda1"] = std::to_string(o.lambda1);
    config["lambda2"] = std::to_string(o.lambda2);
    config["iters"] = std::to_string(o.iters);
    config["runs"] = std::to_string(o.runs);
    config["jobs"] = std::to_string(o.common.jobs);

    json results;
    results["late_rate"] = pooled.late_rate;
    results["early_rate"] = pooled.early_rate;
    results["n_iters"] = pooled.n_iters;
    results["n_eligible"] = pooled.n_eligible;
    results["n_stop_decisions"] = pooled.n_stop_decisions;
    results["n_late"] = pooled.n_late;
    results["n_early"] = pooled.n_early;
    results["pass"] = pass;

    try {
        std::ostringstream csv;
        csv << "run,n_iters,n_eligible,n_stop_decisions,n_late,n_early\n";
        for (std::size_t r = 0; r < reports.size(); ++r)
            csv << r << ',' << reports[r].n_iters << ',' << reports[r].n_eligible << ','
                << reports[r].n_stop_decisions << ',' << reports[r].n_late << ','
                << reports[r].n_early << '\n';
        write_outputs(o.common, "stopping", config, results, csv.str());
    } catch (const std::exception& e) {
        return io_error(e.what());
    }
    return pass ? kExitOk : kExitPredicate;
}

// ---------------------------------------------------------------------------
// collocation
// ---------------------------------------------------------------------------

struct CollocationOpts {
    CommonOpts common;
    StoppingOpts stop{.upsilon = 200.0};
    double eps = 0.25;
    long p = 20;
    long lambda1 = 1;
    long lambda2 = 500;
    long iters = 200;
    long sigma_window = 125;
    long cond_replicates = 100;
    long sigma_samples = 200;
};

int cmd_collocation(const CollocationOpts& o) {
    StoppingParams sp = o.stop.params();
    try {
        validate_common(o.common);
        sp.validate();
        if (o.lambda1 < 1 || o.lambda2 < o.lambda1)
            throw std::invalid_argument("--lambda1/--lambda2: need 1 <= lambda1 <= lambda2");
        if (o.iters < 1) throw std::invalid_argument("--iters: must be >= 1");
        if (o.sigma_window < 2 || o.sigma_window >= o.iters)
            throw std::invalid_argument("--sigma-window: must lie in [2, iters)");
        if (o.cond_replicates < 1)
            throw std::invalid_argument("--cond-replicates: must be >= 1");
        if (o.sigma_samples < 1) throw std::invalid_argument("--sigma-samples: must be >= 1");
        if (o.p < 1) throw std::invalid_argument("--p: must be >= 1");
        if (!(o.eps > 0.0 && o.eps <= 1.0))
            throw std::invalid_argument("--eps: must lie in (0, 1]");
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    }

    CollocationReport report;
    try {
        CollocationConfig cfg;
        cfg.grid_gap = o.eps;
        cfg.p = o.p;
        cfg.lambda1 = o.lambda1;
        cfg.lambda2 = o.lambda2;
        cfg.n_iters = o.iters;
        cfg.stopping = sp;
        cfg.n_cond_replicates = o.cond_replicates;
        cfg.sigma_window = o.sigma_window;
        cfg.n_sigma_samples = o.sigma_samples;
        RngHandle rng(o.common.seed, 0);
        report = collocation_experiment(cfg, rng);
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }

    bool pass = report.coverage >= 1.0 - sp.alpha && report.stopping_errors.n_late == 0 &&
                report.stopping_errors.n_early == 0;

    std::map<std::string, std::string> config;
    config["eps"] = fmt(o.eps);
    config["p"] = std::to_string(o.p);
    config["lambda1"] = std::to_string(o.lambda1);
    config["lambda2"] = std::to_string(o.lambda2);
    config["iters"] = std::to_string(o.iters);
    config["sigma_window"] = std::to_string(o.sigma_window);
    config["cond_replicates"] = std::to_string(o.cond_replicates);
    config["sigma_samples"] = std::to_string(o.sigma_samples);
    merge_stopping_config(config, o.stop);

    json results;
    results["dim"] = report.dim;
    results["d_value"] = report.d_value;
    results["sigma_initial"] = report.sigma_initial;
    results["sigma_empirical"] = report.sigma_empirical;
    results["coverage"] = report.coverage;
    results["n_cover"] = report.n_cover;
    results["n_iters"] = report.stopping_errors.n_iters;
    results["n_eligible"] = report.stopping_errors.n_eligible;
    results["n_late"] = report.stopping_errors.n_late;
    results["n_early"] = report.stopping_errors.n_early;
    results["pass"] = pass;

    try {
        std::ostringstream csv;
        write_trace_csv(csv, report.trace);
        write_outputs(o.common, "collocation", config, results, csv.str());
    } catch (const std::exception& e) {
        return io_error(e.what());
    }
    return pass ? kExitOk : kExitPredicate;
}

// ---------------------------------------------------------------------------
// se-check
// ---------------------------------------------------------------------------

struct SeCheckOpts {
    CommonOpts common;
    std::string method = "gaussian";
    long m = 256;
    long p = 25;
    long samples = 10000;
    std::vector<double> deltas{0.5, 1.0, 2.0};
};

int cmd_se_check(const SeCheckOpts& o) {
    SketchMethodId method{};
    try {
        validate_common(o.common);
        method = method_from_string(o.method);
        if (o.m < 1 || o.p < 1) throw std::invalid_argument("--m/--p: must be >= 1");
        if (method == SketchMethodId::RowSubset && o.p > o.m)
            throw std::invalid_argument("--p: row subsets need p <= m");
        if (o.samples < 1) throw std::invalid_argument("--samples: must be >= 1");
        if (o.deltas.empty()) throw std::invalid_argument("--deltas: need at least one value");
        for (double d : o.deltas)
            if (!(d > 0.0)) throw std::invalid_argument("--deltas: values must be positive");
    } catch (const std::invalid_argument& e) {
        return usage_error(e.what());
    }

    TailCheckReport report;
    double sample_min = 0.0, sample_max = 0.0;
    bool support_checked = false, support_ok = true;
    double support_hi = 0.0;
    try {
        RngHandle rng(o.common.seed, 0);
        Vector r(o.m);
        for (long i = 0; i < o.m; ++i) r[i] = rng.normal();
        double full = r.squaredNorm();
        double mean = method == SketchMethodId::RowSubset
                          ? full * static_cast<double>(o.p) / static_cast<double>(o.m)
                          : full;
        SubExpParams se = method == SketchMethodId::RowSubset ? row_subset_params(o.m, o.p)
                                                              : se_from_jl(method, o.p);
        std::vector<double> rel(static_cast<std::size_t>(o.samples));
        for (long i = 0; i < o.samples; ++i) {
            SketchOperator op = draw(method, o.m, o.p, rng);
            rel[static_cast<std::size_t>(i)] = apply_vector(op, r).squaredNorm() / mean - 1.0;
        }
        sample_min = *std::min_element(rel.begin(), rel.end());
        sample_max = *std::max_element(rel.begin(), rel.end());
        if (method == SketchMethodId::RowSubset) {
            support_checked = true;
            support_hi = static_cast<double>(o.m - o.p) / static_cast<double>(o.p);
            support_ok = sample_min >= -1.0 && sample_max <= support_hi;
        }
        report = empirical_tail_check(rel, se, o.deltas);
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }

    bool pass = !report.any_violated && support_ok;

    std::map<std::string, std::string> config;
    config["method"] = o.method;
    config["m"] = std::to_string(o.m);
    config["p"] = std::to_string(o.p);
    config["samples"] = std::to_string(o.samples);
    std::string deltas_str;
    for (double d : o.deltas) {
        if (!deltas_str.empty()) deltas_str += ' ';
        deltas_str += fmt(d);
    }
    config["deltas"] = deltas_str;

    json results;
    results["n_samples"] = o.samples;
    results["any_violated"] = report.any_violated;
    results["sample_min"] = sample_min;
    results["sample_max"] = sample_max;
    if (support_checked) {
        results["support_lo"] = -1.0;
        results["support_hi"] = support_hi;
        results["support_ok"] = support_ok;
    }
    results["pass"] = pass;

    try {
        std::ostringstream csv;
        csv << "delta,freq_upper,freq_lower,bound,slack\n";
        for (const TailCheckRow& row : report.rows)
            csv << fmt(row.delta) << ',' << fmt(row.freq_upper) << ',' << fmt(row.freq_lower)
                << ',' << fmt(row.bound) << ','
                << fmt(tail_check_slack(row.bound, static_cast<std::size_t>(o.samples))) << '\n';
        write_outputs(o.common, "se-check", config, results, csv.str());
    } catch (const std::exception& e) {
        return io_error(e.what());
    }
    return pass ? kExitOk : kExitPredicate;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming sketch-and-project solver with tracked residual estimation and "
                 "risk-controlled stopping"};
    app.require_subcommand(1);
    int rc = kExitOk;

    // --- solve ---
    auto solve_opts = std::make_shared<SolveOpts>();
    CLI::App* solve = app.add_subcommand("solve", "Run one tracked solve and write its trace");
    CommonHooks solve_common = add_common(solve, solve_opts->common, "solve");
    add_preset(solve, solve_opts->common);
    PresetHooks solve_hooks;
    add_system(solve, solve_opts->sys, solve_hooks, true);
    {
        PresetHooks sh = add_stopping(solve, solve_opts->stop);
        solve_hooks.upsilon = sh.upsilon;
        solve_hooks.delta_i = sh.delta_i;
        solve_hooks.delta_ii = sh.delta_ii;
        solve_hooks.xi_i = sh.xi_i;
        solve_hooks.xi_ii = sh.xi_ii;
        solve_hooks.eta = sh.eta;
    }
    solve_hooks.lambda1 =
        solve->add_option("--lambda1", solve_opts->lambda1, "Narrow window width")
            ->capture_default_str();
    solve_hooks.lambda2 =
        solve->add_option("--lambda2", solve_opts->lambda2, "Wide window width")
            ->capture_default_str();
    solve_hooks.iters = solve->add_option("--iters", solve_opts->iters, "Iteration cap")
                            ->capture_default_str();
    solve->callback([solve, solve_common, solve_opts, &solve_hooks, &rc]() {
        apply_common(solve, solve_common, solve_opts->common);
        apply_preset(solve_opts->common.preset, solve_opts->sys.method, solve_hooks,
                     &solve_opts->sys.p, nullptr, &solve_opts->lambda1, &solve_opts->lambda2,
                     &solve_opts->iters, &solve_opts->stop);
        rc = cmd_solve(*solve_opts);
    });

    // --- coverage ---
    auto cov_opts = std::make_shared<CoverageOpts>();
    CLI::App* coverage =
        app.add_subcommand("coverage", "Two-stage conditional coverage of the tracked intervals");
    CommonHooks cov_common = add_common(coverage, cov_opts->common, "coverage");
    add_preset(coverage, cov_opts->common);
    PresetHooks cov_hooks;
    add_system(coverage, cov_opts->sys, cov_hooks, false);
    cov_hooks.lambda = coverage->add_option("--lambda", cov_opts->lambda, "Fixed window width")
                           ->capture_default_str();
    cov_hooks.iters = coverage->add_option("--iters", cov_opts->iters, "First-stage iterations")
                          ->capture_default_str();
    coverage->add_option("--replicates", cov_opts->replicates, "Second-stage replicates per iterate")
        ->capture_default_str();
    cov_hooks.eta = coverage->add_option("--eta", cov_opts->stop.eta, "Interval contraction")
                        ->capture_default_str();
    coverage->add_option("--alpha", cov_opts->stop.alpha, "Interval level")->capture_default_str();
    coverage->callback([coverage, cov_common, cov_opts, &cov_hooks, &rc]() {
        apply_common(coverage, cov_common, cov_opts->common);
        apply_preset(cov_opts->common.preset, cov_opts->sys.method, cov_hooks, &cov_opts->sys.p,
                     &cov_opts->lambda, nullptr, nullptr, &cov_opts->iters, &cov_opts->stop);
        rc = cmd_coverage(*cov_opts);
    });

    // --- consistency ---
    auto con_opts = std::make_shared<ConsistencyOpts>();
    CLI::App* consistency = app.add_subcommand(
        "consistency", "Relative-error percentiles of the tracked mean against the true mean");
    CommonHooks con_common = add_common(consistency, con_opts->common, "consistency");
    add_preset(consistency, con_opts->common);
    PresetHooks con_hooks;
    add_system(consistency, con_opts->sys, con_hooks, false);
    con_opts->runs = 8;
    consistency->add_option("--runs", con_opts->runs, "Independent traces")->capture_default_str();
    con_hooks.iters = consistency->add_option("--iters", con_opts->iters, "Iterations per trace")
                          ->capture_default_str();
    con_hooks.lambda1 =
        consistency->add_option("--lambda1", con_opts->lambda1, "Narrow window width")
            ->capture_default_str();
    con_hooks.lambda2 = consistency->add_option("--lambda2", con_opts->lambda2, "Wide window width")
                            ->capture_default_str();
    consistency->add_option("--band", con_opts->band, "Allowed max/median plateau ratio")
        ->capture_default_str();
    consistency->callback([consistency, con_common, con_opts, &con_hooks, &rc]() {
        apply_common(consistency, con_common, con_opts->common);
        apply_preset(con_opts->common.preset, con_opts->sys.method, con_hooks, &con_opts->sys.p,
                     nullptr, &con_opts->lambda1, &con_opts->lambda2, &con_opts->iters, nullptr);
        rc = cmd_consistency(*con_opts);
    });

    // --- stopping ---
    auto stop_opts = std::make_shared<StoppingCmdOpts>();
    CLI::App* stopping =
        app.add_subcommand("stopping", "Audit late/early stopping errors on no-exit runs");
    CommonHooks stop_common = add_common(stopping, stop_opts->common, "stopping");
    add_preset(stopping, stop_opts->common);
    PresetHooks stop_hooks;
    add_system(stopping, stop_opts->sys, stop_hooks, false);
    {
        PresetHooks sh = add_stopping(stopping, stop_opts->stop);
        stop_hooks.upsilon = sh.upsilon;
        stop_hooks.delta_i = sh.delta_i;
        stop_hooks.delta_ii = sh.delta_ii;
        stop_hooks.xi_i = sh.xi_i;
        stop_hooks.xi_ii = sh.xi_ii;
        stop_hooks.eta = sh.eta;
    }
    stop_hooks.lambda1 = stopping->add_option("--lambda1", stop_opts->lambda1, "Narrow window width")
                             ->capture_default_str();
    stop_hooks.lambda2 = stopping->add_option("--lambda2", stop_opts->lambda2, "Wide window width")
                             ->capture_default_str();
    stop_hooks.iters = stopping->add_option("--iters", stop_opts->iters, "Iterations per run")
                           ->capture_default_str();
    stopping->add_option("--runs", stop_opts->runs, "Independent runs")->capture_default_str();
    stopping->callback([stopping, stop_common, stop_opts, &stop_hooks, &rc]() {
        apply_common(stopping, stop_common, stop_opts->common);
        apply_preset(stop_opts->common.preset, stop_opts->sys.method, stop_hooks,
                     &stop_opts->sys.p, nullptr, &stop_opts->lambda1, &stop_opts->lambda2,
                     &stop_opts->iters, &stop_opts->stop);
        rc = cmd_stopping(*stop_opts);
    });

    // --- collocation ---
    auto coll_opts = std::make_shared<CollocationOpts>();
    CLI::App* collocation = app.add_subcommand(
        "collocation", "Radial-basis collocation stream with Monte-Carlo conditional means");
    CommonHooks coll_common = add_common(collocation, coll_opts->common, "collocation");
    collocation->add_option("--eps", coll_opts->eps, "Control-grid gap (1/eps integer)")
        ->capture_default_str();
    collocation->add_option("--p", coll_opts->p, "Rows drawn per observation")
        ->capture_default_str();
    collocation->add_option("--lambda1", coll_opts->lambda1, "Narrow window width")
        ->capture_default_str();
    collocation->add_option("--lambda2", coll_opts->lambda2, "Wide window width")
        ->capture_default_str();
    collocation->add_option("--iters", coll_opts->iters, "Iterations")->capture_default_str();
    collocation->add_option("--sigma-window", coll_opts->sigma_window,
                            "Iterations before swapping in the empirical sigma")
        ->capture_default_str();
    collocation->add_option("--cond-replicates", coll_opts->cond_replicates,
                            "Fresh draws per iteration for the conditional mean")
        ->capture_default_str();
    collocation->add_option("--sigma-samples", coll_opts->sigma_samples,
                            "Draws behind the Gram spectrum estimate")
        ->capture_default_str();
    add_stopping(collocation, coll_opts->stop);
    collocation->callback([collocation, coll_common, coll_opts, &rc]() {
        apply_common(collocation, coll_common, coll_opts->common);
        rc = cmd_collocation(*coll_opts);
    });

    // --- se-check ---
    auto se_opts = std::make_shared<SeCheckOpts>();
    CLI::App* se_check = app.add_subcommand(
        "se-check", "Empirical tail check of sketch relative errors against the stated bounds");
    CommonHooks se_common = add_common(se_check, se_opts->common, "se-check");
    se_check->add_option("--method", se_opts->method, "Sketch family")
        ->check(CLI::IsMember({"gaussian", "achlioptas", "fjlt", "rowsubset"}))
        ->capture_default_str();
    se_check->add_option("--m", se_opts->m, "Source dimension")->capture_default_str();
    se_check->add_option("--p", se_opts->p, "Embedding dimension / rows kept")
        ->capture_default_str();
    se_check->add_option("--samples", se_opts->samples, "Number of draws")->capture_default_str();
    se_check->add_option("--deltas", se_opts->deltas, "Deviation levels to check")
        ->expected(-1);
    se_check->callback([se_check, se_common, se_opts, &rc]() {
        apply_common(se_check, se_common, se_opts->common);
        rc = cmd_se_check(*se_opts);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        // Config-file application runs inside the subcommand callbacks.
        return usage_error(e.what());
    }
    return rc;
}
