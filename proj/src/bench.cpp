#include "fastrr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>

#include "fastrr/error.hpp"
#include "fastrr/generation.hpp"
#include "fastrr/parallel.hpp"
#include "fastrr/pool_io.hpp"

namespace fastrr {

SimData simulate_data(const SimConfig& cfg, std::uint64_t seed) {
    if (cfg.n < 2 || cfg.n % 2 != 0) {
        throw Error(ErrorKind::invalid_design, "simulation needs an even n >= 2, got " + std::to_string(cfg.n));
    }
    if (cfg.k == 0) throw Error(ErrorKind::invalid_design, "simulation needs k >= 1");
    if (!cfg.coef.empty() && cfg.coef.size() != cfg.k) {
        throw Error(ErrorKind::shape, "coef has " + std::to_string(cfg.coef.size()) + " entries, k is " +
                                          std::to_string(cfg.k));
    }
    const std::size_t n = cfg.n;
    const std::size_t k = cfg.k;

    std::vector<double> values(n * k);
    KeyedGenerator gx({seed, 0});
    for (auto& v : values) v = gx.normal();

    std::vector<double> coef = cfg.coef;
    if (coef.empty()) {
        KeyedGenerator gc({seed, 1});
        coef.resize(k);
        for (auto& c : coef) c = gc.normal();
    }

    Assignment w = assignment_from_key({seed, 2}, n, n / 2);

    KeyedGenerator ge({seed, 3});
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lin = 0.0;
        for (std::size_t j = 0; j < k; ++j) lin += values[i * k + j] * coef[j];
        y[i] = lin + cfg.tau_true * w[i] + cfg.noise_sd * ge.normal();
    }
    return {CovariateMatrix(n, k, std::move(values)), std::move(w), OutcomeVector(std::move(y)), std::move(coef)};
}

std::string_view to_string(BenchPath path) noexcept {
    switch (path) {
    case BenchPath::naive: return "naive";
    case BenchPath::batched: return "batched";
    case BenchPath::parallel: return "parallel";
    }
    return "naive";
}

BenchPath parse_bench_path(std::string_view name) {
    if (name == "naive") return BenchPath::naive;
    if (name == "batched") return BenchPath::batched;
    if (name == "parallel") return BenchPath::parallel;
    throw Error(ErrorKind::invalid_design,
                "unknown bench path '" + std::string(name) + "' (expected naive, batched or parallel)");
}

namespace {

std::string pool_fingerprint(const RandomizationPool& pool) {
    std::string s = design_header_json(pool);
    for (std::size_t i = 0; i < pool.stats.size(); ++i) {
        s += '\n';
        s += std::to_string(pool.keys[i].draw_index);
        s += ',';
        s += format_double(pool.stats[i]);
    }
    return s;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return sorted_quantile(v, 0.5);
}

} // namespace

BenchReport run_benchmark(const SimConfig& cfg, std::span<const BenchPath> paths, const BenchOptions& options) {
    if (paths.empty()) throw Error(ErrorKind::invalid_design, "no benchmark paths selected");
    if (cfg.replicates == 0) throw Error(ErrorKind::invalid_design, "replicates must be at least 1");

    BenchReport report;
    for (std::size_t rep = 0; rep < cfg.replicates; ++rep) {
        const SimData data = simulate_data(cfg, options.seed + rep);
        DesignSpec design;
        design.n_units = cfg.n;
        design.n_treated = cfg.n / 2;
        design.accept_prob = cfg.accept_prob;
        design.mode = GenerationMode::monte_carlo;
        design.max_draws = cfg.max_draws;
        design.batch_size = std::min<std::uint64_t>(cfg.batch_size, cfg.max_draws);
        design.precision_mode = cfg.k < cfg.n ? PrecisionMode::exact : PrecisionMode::ridge;
        design.root_seed = options.seed + rep;
        design.storage = StorageMode::keys;

        std::string reference;
        double reference_p = 0.0;
        for (std::size_t p = 0; p < paths.size(); ++p) {
            const BenchPath path = paths[p];
            GenerationOptions gen;
            InferenceOptions inf;
            gen.kernel = path == BenchPath::naive ? KernelPath::scalar : KernelPath::batched;
            gen.threads = path == BenchPath::parallel ? resolve_threads(options.threads) : 1;
            inf.threads = gen.threads;

            auto start = std::chrono::steady_clock::now();
            const RandomizationPool pool = monte_carlo_pool(data.x, design, gen);
            report.rows.push_back({path, "generation", cfg.n, cfg.k, cfg.max_draws, rep, seconds_since(start)});

            start = std::chrono::steady_clock::now();
            const TestResult result = randomization_pvalue(data.w, data.y, pool, TestStatistic::diff_in_means(), inf);
            report.rows.push_back({path, "testing", cfg.n, cfg.k, cfg.max_draws, rep, seconds_since(start)});

            const std::string fingerprint = pool_fingerprint(pool);
            if (p == 0) {
                reference = fingerprint;
                reference_p = result.p_value;
                report.p_values.push_back(result.p_value);
            } else if (fingerprint != reference || result.p_value != reference_p) {
                throw Error(ErrorKind::internal, "bench path '" + std::string(to_string(path)) +
                                                     "' produced a different pool than '" +
                                                     std::string(to_string(paths[0])) + "'");
            }
        }
    }
    return report;
}

void write_timing_csv(std::span<const TimingRow> rows, std::ostream& out) {
    out << "path,phase,n,k,max_draws,replicate,seconds\n";
    for (const auto& r : rows) {
        out << to_string(r.path) << ',' << r.phase << ',' << r.n << ',' << r.k << ',' << r.max_draws << ','
            << r.replicate << ',' << format_double(r.seconds) << '\n';
    }
}

nlohmann::json timing_summary(const SimConfig& cfg, const BenchReport& report) {
    nlohmann::json medians = nlohmann::json::object();
    for (auto path : {BenchPath::naive, BenchPath::batched, BenchPath::parallel}) {
        for (const char* phase : {"generation", "testing"}) {
            std::vector<double> secs;
            for (const auto& r : report.rows) {
                if (r.path == path && r.phase == phase) secs.push_back(r.seconds);
            }
            if (!secs.empty()) medians[std::string(to_string(path))][phase] = median(std::move(secs));
        }
    }
    return {
        {"n", cfg.n},
        {"k", cfg.k},
        {"max_draws", cfg.max_draws},
        {"batch_size", cfg.batch_size},
        {"replicates", cfg.replicates},
        {"median_seconds", medians},
        {"p_values", report.p_values},
    };
}

double estimate_speedup(const CostModel& m) {
    for (double v : {m.r_cpu, m.r_gpu, m.alpha, m.d, m.M, m.B}) {
        if (!(v >= 0.0)) throw Error(ErrorKind::invalid_design, "cost model parameters must be nonnegative");
    }
    if (!(m.beta >= 1.0)) throw Error(ErrorKind::invalid_design, "parallelization factor beta must be >= 1");
    const double per_draw = m.alpha * m.d;
    const double cpu = m.r_cpu + per_draw * m.M;
    // beta * T_cpu / (beta * T_gpu): same ratio, and reduces to beta exactly
    // when both overheads are zero.
    const double scaled_gpu = m.beta * m.r_gpu + per_draw * m.M;
    if (!(scaled_gpu > 0.0)) throw Error(ErrorKind::invalid_design, "accelerated runtime is zero");
    return m.beta * (cpu / scaled_gpu);
}

} // namespace fastrr
