#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fastrr/balance.hpp"
#include "fastrr/inference.hpp"

namespace fastrr {

/// Simulation study settings: Gaussian covariates, half of the units treated,
/// linear outcomes with additive Gaussian noise.
struct SimConfig {
    std::size_t n = 100;
    std::size_t k = 10;
    std::uint64_t max_draws = 100'000;
    std::size_t batch_size = 10'000;
    double accept_prob = 0.01;
    double tau_true = 1.0;
    double noise_sd = 0.5;
    std::vector<double> coef; ///< empty: drawn standard normal per dataset
    std::size_t replicates = 10;
};

struct SimData {
    CovariateMatrix x;
    Assignment w;
    OutcomeVector y;
    std::vector<double> coef;
};

/// Deterministic in `seed`. Streams (seed, 0..3) of the keyed generator feed
/// X, the coefficients, the assignment and the noise respectively, and
///     y = X coef + tau_true w + noise_sd e.
SimData simulate_data(const SimConfig& cfg, std::uint64_t seed);

enum class BenchPath { naive, batched, parallel };

std::string_view to_string(BenchPath path) noexcept;
BenchPath parse_bench_path(std::string_view name);

struct TimingRow {
    BenchPath path = BenchPath::naive;
    std::string phase; ///< "generation" or "testing"
    std::size_t n = 0;
    std::size_t k = 0;
    std::uint64_t max_draws = 0;
    std::size_t replicate = 0;
    double seconds = 0.0;
};

struct BenchOptions {
    std::size_t threads = 0; ///< workers for the parallel path
    std::uint64_t seed = 1;
};

struct BenchReport {
    std::vector<TimingRow> rows;
    std::vector<double> p_values; ///< one per replicate, shared by all paths
};

/// Times pool generation and the randomization test for every path and
/// replicate. All paths must produce the same pool and p-value; a mismatch
/// raises ErrorKind::internal because the timings would not be comparable.
BenchReport run_benchmark(const SimConfig& cfg, std::span<const BenchPath> paths,
                          const BenchOptions& options = {});

/// path,phase,n,k,max_draws,replicate,seconds
void write_timing_csv(std::span<const TimingRow> rows, std::ostream& out);

/// Median seconds per (path, phase) plus the run configuration.
nlohmann::json timing_summary(const SimConfig& cfg, const BenchReport& report);

/// Runtime model for batched balance checks: with per-draw cost
/// k = alpha * d,
///     T_cpu = r_cpu + k M,   T_gpu = r_gpu + k M / beta.
struct CostModel {
    double r_cpu = 0.0;
    double r_gpu = 0.0;
    double alpha = 0.0;
    double d = 0.0;
    double beta = 1.0;
    double M = 0.0;
    double B = 0.0; ///< batch size; cancels out of the totals
};

/// T_cpu / T_gpu. Throws ErrorKind::invalid_design for negative parameters,
/// beta < 1, or a zero denominator.
double estimate_speedup(const CostModel& model);

} // namespace fastrr
