#include "fastrr/cli.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fastrr/bench.hpp"
#include "fastrr/csv.hpp"
#include "fastrr/error.hpp"
#include "fastrr/generation.hpp"
#include "fastrr/inference.hpp"
#include "fastrr/pool_io.hpp"

namespace fastrr {

using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DesignFlags {
    std::size_t n_treated = 0;
    std::string mode = "monte_carlo";
    double accept_prob = 0.01;
    std::uint64_t max_draws = 100'000;
    std::size_t batch_size = 10'000;
    std::uint64_t seed = 0;
    std::string precision = "exact";
    std::optional<double> ridge_lambda;
    std::string storage = "keys";
};

void add_design_flags(CLI::App& cmd, DesignFlags& f, bool with_accept_prob) {
    cmd.add_option("--n-treated", f.n_treated, "Number of treated units (default n/2)");
    cmd.add_option("--mode", f.mode, "exact or monte_carlo")->capture_default_str();
    if (with_accept_prob) {
        cmd.add_option("--accept-prob", f.accept_prob, "Fraction of best-balanced candidates kept")
            ->capture_default_str();
    }
    cmd.add_option("--max-draws", f.max_draws, "Monte Carlo candidate count")->capture_default_str();
    cmd.add_option("--batch-size", f.batch_size, "Candidates materialised at once")->capture_default_str();
    cmd.add_option("--seed", f.seed, "Root seed")->capture_default_str();
    cmd.add_option("--precision", f.precision, "exact, ridge or diagonal")->capture_default_str();
    cmd.add_option("--ridge-lambda", f.ridge_lambda, "Ridge penalty (default 0.01 * mean variance)");
}

DesignSpec to_design(const DesignFlags& f, std::size_t n_units) {
    DesignSpec d;
    d.n_units = n_units;
    d.n_treated = f.n_treated == 0 ? n_units / 2 : f.n_treated;
    d.accept_prob = f.accept_prob;
    d.mode = parse_generation_mode(f.mode);
    d.max_draws = f.max_draws;
    d.batch_size = f.batch_size;
    if (d.mode == GenerationMode::monte_carlo && d.max_draws > 0) {
        d.batch_size = static_cast<std::size_t>(std::min<std::uint64_t>(d.batch_size, d.max_draws));
    }
    d.precision_mode = parse_precision_mode(f.precision);
    d.root_seed = f.seed;
    d.storage = parse_storage_mode(f.storage);
    return d;
}

json bound_json(double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

json summary_json(const PoolSummary& s) {
    return {
        {"n_candidates", s.n_candidates},
        {"n_accepted", s.n_accepted},
        {"n_units", s.n_units},
        {"n_treated", s.n_treated},
        {"acceptance_rate", s.acceptance_rate},
        {"threshold_value", s.threshold_value},
        {"balance", {{"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"mean", s.mean}, {"q3", s.q3}, {"max", s.max}}},
    };
}

std::vector<double> parse_prob_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw UsageError("--accept-probs: '" + item + "' is not a number");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("--accept-probs needs at least one value");
    return out;
}

std::vector<BenchPath> parse_paths(const std::string& text) {
    std::vector<BenchPath> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_bench_path(item));
    if (out.empty()) throw UsageError("--paths needs at least one path");
    return out;
}

void log(bool verbose, std::ostream& err, const std::string& msg) {
    if (verbose) err << "fastrr: " << msg << '\n';
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Rerandomization pools and randomization inference"};
    app.name("fastrr");
    app.require_subcommand(1);
    bool verbose = false;
    std::size_t threads = 0;
    app.add_flag("-v,--verbose", verbose, "Progress notes on stderr");
    app.add_option("--threads", threads, "Worker threads (default FASTRR_THREADS or all cores)");

    // generate
    auto* gen = app.add_subcommand("generate", "Build an accepted randomization pool");
    std::string gen_covariates, gen_out;
    DesignFlags gen_flags;
    gen->add_option("--covariates", gen_covariates, "Covariate CSV")->required();
    add_design_flags(*gen, gen_flags, true);
    gen->add_option("--storage", gen_flags.storage, "keys, full or both")->capture_default_str();
    gen->add_option("--out,--file", gen_out, "Pool file (rows are streamed)")->required();
    gen->add_option("--threads", threads, "Worker threads");

    // test
    auto* tst = app.add_subcommand("test", "Randomization test against a pool");
    std::string tst_pool, tst_outcomes, tst_observed, tst_dist;
    bool find_fi = false;
    double alpha = 0.05;
    tst->add_option("--pool", tst_pool, "Pool file")->required();
    tst->add_option("--outcomes", tst_outcomes, "Outcome CSV (one column)")->required();
    tst->add_option("--observed", tst_observed, "Observed assignment CSV (one 0/1 column)")->required();
    tst->add_flag("--find-fi", find_fi, "Also invert the test for a fiducial interval");
    tst->add_option("--alpha", alpha, "Fiducial interval level")->capture_default_str();
    tst->add_option("--emit-dist", tst_dist, "Write the permutation distribution as CSV");
    tst->add_option("--threads", threads, "Worker threads");

    // sweep
    auto* swp = app.add_subcommand("sweep", "Test across several acceptance probabilities");
    std::string swp_covariates, swp_outcomes, swp_observed, swp_probs, swp_out;
    DesignFlags swp_flags;
    bool swp_fi = false;
    double swp_alpha = 0.05;
    swp->add_option("--covariates", swp_covariates, "Covariate CSV")->required();
    swp->add_option("--outcomes", swp_outcomes, "Outcome CSV")->required();
    swp->add_option("--observed", swp_observed, "Fixed observed assignment (default: first accepted)");
    swp->add_option("--accept-probs", swp_probs, "Comma-separated acceptance probabilities")->required();
    add_design_flags(*swp, swp_flags, false);
    swp->add_flag("--find-fi", swp_fi, "Add fiducial intervals");
    swp->add_option("--alpha", swp_alpha, "Fiducial interval level")->capture_default_str();
    swp->add_option("--out", swp_out, "CSV output (default stdout)");
    swp->add_option("--threads", threads, "Worker threads");

    // bench
    auto* bch = app.add_subcommand("bench", "Time generation and testing on simulated data");
    SimConfig sim;
    std::string bch_paths = "naive,batched,parallel", bch_out;
    std::uint64_t bch_seed = 1;
    bch->add_option("--paths", bch_paths, "Subset of naive,batched,parallel")->capture_default_str();
    bch->add_option("--n", sim.n, "Units")->capture_default_str();
    bch->add_option("--k", sim.k, "Covariates")->capture_default_str();
    bch->add_option("--max-draws", sim.max_draws, "Monte Carlo candidates")->capture_default_str();
    bch->add_option("--batch-size", sim.batch_size, "Batch size")->capture_default_str();
    bch->add_option("--accept-prob", sim.accept_prob, "Acceptance probability")->capture_default_str();
    bch->add_option("--replicates", sim.replicates, "Replicates per path")->capture_default_str();
    bch->add_option("--seed", bch_seed, "Base seed")->capture_default_str();
    bch->add_option("--out", bch_out, "Timing CSV (default stdout)");
    bch->add_option("--threads", threads, "Workers for the parallel path");

    // simulate
    auto* sml = app.add_subcommand("simulate", "Write a simulated dataset");
    SimConfig sml_cfg;
    std::uint64_t sml_seed = 1;
    std::string sml_x, sml_y, sml_w;
    sml->add_option("--n", sml_cfg.n, "Units (even)")->capture_default_str();
    sml->add_option("--k", sml_cfg.k, "Covariates")->capture_default_str();
    sml->add_option("--seed", sml_seed, "Seed")->capture_default_str();
    sml->add_option("--tau", sml_cfg.tau_true, "True additive effect")->capture_default_str();
    sml->add_option("--noise-sd", sml_cfg.noise_sd, "Outcome noise sd")->capture_default_str();
    sml->add_option("--covariates", sml_x, "Covariate CSV to write")->required();
    sml->add_option("--outcomes", sml_y, "Outcome CSV to write")->required();
    sml->add_option("--observed", sml_w, "Assignment CSV to write")->required();

    auto fail = [&](std::string_view kind, const std::string& message, int code) {
        err << json{{"error", kind}, {"message", message}}.dump() << '\n';
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        const auto started = std::chrono::steady_clock::now();
        auto elapsed = [&] {
            return std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
        };

        if (*gen) {
            const CovariateMatrix x = parse_covariates(gen_covariates);
            const DesignSpec design = to_design(gen_flags, x.n_units());
            GenerationOptions options;
            options.threads = threads;
            options.ridge_lambda = gen_flags.ridge_lambda;
            PoolFileWriter writer(gen_out);
            options.sink = &writer;
            const RandomizationPool pool = generate_randomizations(x, design, options);
            log(verbose, err, "generated pool in " + elapsed() + " s");
            json j = summary_json(pool_summary(pool));
            j["pool"] = gen_out;
            j["storage"] = std::string(to_string(pool.design.storage));
            j["mode"] = std::string(to_string(pool.design.mode));
            j["memory_improvement_factor"] = memory_improvement_factor(design.n_units, kKeyWords);
            out << j.dump() << '\n';
        } else if (*tst) {
            const RandomizationPool pool = read_pool(tst_pool);
            const OutcomeVector y = parse_outcomes(tst_outcomes);
            const Assignment observed = parse_assignment(tst_observed);
            InferenceOptions options;
            options.threads = threads;
            TestResult r = randomization_test(observed, y, pool, find_fi ? std::optional<double>(alpha) : std::nullopt,
                                              TestStatistic::diff_in_means(), options);
            log(verbose, err, "tested " + std::to_string(pool.n_accepted) + " assignments in " + elapsed() + " s");
            json j = {
                {"p_value", r.p_value},
                {"tau_obs", r.tau_obs},
                {"fi", r.fi ? json::array({bound_json(r.fi->lower), bound_json(r.fi->upper)}) : json(nullptr)},
                {"alpha", alpha},
                {"n_accepted", r.n_accepted},
            };
            if (r.warning) {
                j["warning"] = *r.warning;
                log(true, err, "warning: " + *r.warning);
            }
            if (!tst_dist.empty()) {
                if (r.stat_distribution.size() != r.n_accepted) {
                    throw Error(ErrorKind::unsupported, "pool too large to materialise the permutation distribution");
                }
                write_column(tst_dist, "stat", r.stat_distribution);
            }
            out << j.dump() << '\n';
        } else if (*swp) {
            const CovariateMatrix x = parse_covariates(swp_covariates);
            const OutcomeVector y = parse_outcomes(swp_outcomes);
            std::optional<Assignment> observed;
            if (!swp_observed.empty()) observed = parse_assignment(swp_observed);
            const auto probs = parse_prob_list(swp_probs);
            DesignFlags flags = swp_flags;
            flags.accept_prob = 1.0;
            const DesignSpec base = to_design(flags, x.n_units());
            SweepOptions options;
            options.generation.threads = threads;
            options.generation.ridge_lambda = swp_flags.ridge_lambda;
            options.inference.threads = threads;
            if (swp_fi) options.fi_alpha = swp_alpha;
            const auto rows = threshold_sweep(x, base, probs, y, observed, options);
            std::size_t failed = 0;
            for (const auto& r : rows) failed += !r.ok;
            if (swp_out.empty()) {
                write_sweep_csv(rows, out);
            } else {
                write_atomically(swp_out, [&](std::ostream& o) { write_sweep_csv(rows, o); });
                out << json{{"rows", rows.size()}, {"failed", failed}, {"out", swp_out}}.dump() << '\n';
            }
        } else if (*bch) {
            const auto paths = parse_paths(bch_paths);
            BenchOptions options;
            options.threads = threads;
            options.seed = bch_seed;
            const BenchReport report = run_benchmark(sim, paths, options);
            if (bch_out.empty()) {
                write_timing_csv(report.rows, out);
            } else {
                write_atomically(bch_out, [&](std::ostream& o) { write_timing_csv(report.rows, o); });
                json j = timing_summary(sim, report);
                j["out"] = bch_out;
                out << j.dump() << '\n';
            }
        } else if (*sml) {
            const SimData data = simulate_data(sml_cfg, sml_seed);
            write_covariates(sml_x, data.x);
            write_column(sml_y, "y", data.y.values());
            write_assignment(sml_w, data.w);
            out << json{{"n", sml_cfg.n}, {"k", sml_cfg.k}, {"seed", sml_seed}, {"covariates", sml_x},
                        {"outcomes", sml_y}, {"observed", sml_w}}
                       .dump()
                << '\n';
        }
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 2);
    } catch (const Error& e) {
        return fail(to_string(e.kind()), e.what(), e.kind() == ErrorKind::invalid_design ? 2 : 1);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}

} // namespace fastrr
