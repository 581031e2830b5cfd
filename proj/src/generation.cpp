#include "fastrr/generation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include <omp.h>

#include "fastrr/error.hpp"
#include "fastrr/parallel.hpp"

namespace fastrr {

std::size_t default_thread_count() {
    if (const char* env = std::getenv("FASTRR_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) {
            return static_cast<std::size_t>(v);
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::string_view to_string(GenerationMode mode) noexcept {
    return mode == GenerationMode::exact ? "exact" : "monte_carlo";
}

std::string_view to_string(StorageMode mode) noexcept {
    switch (mode) {
    case StorageMode::keys: return "keys";
    case StorageMode::full: return "full";
    case StorageMode::both: return "both";
    }
    return "keys";
}

GenerationMode parse_generation_mode(std::string_view name) {
    if (name == "exact") return GenerationMode::exact;
    if (name == "monte_carlo") return GenerationMode::monte_carlo;
    throw Error(ErrorKind::invalid_design,
                "unknown mode '" + std::string(name) + "' (expected exact or monte_carlo)");
}

StorageMode parse_storage_mode(std::string_view name) {
    if (name == "keys") return StorageMode::keys;
    if (name == "full") return StorageMode::full;
    if (name == "both") return StorageMode::both;
    throw Error(ErrorKind::invalid_design,
                "unknown storage '" + std::string(name) + "' (expected keys, full or both)");
}

std::optional<std::uint64_t> binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 c = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        c = c * (n - k + i) / i;
        if (c > std::numeric_limits<std::uint64_t>::max()) return std::nullopt;
    }
    return static_cast<std::uint64_t>(c);
}

void unrank_combination(std::size_t n, std::uint64_t rank, std::span<std::uint32_t> out) {
    const std::size_t k = out.size();
    std::size_t next = 0;
    for (std::size_t pos = 0; pos < k; ++pos) {
        for (std::size_t c = next;; ++c) {
            // subsets whose element at `pos` is c, given the prefix
            const std::uint64_t block = *binomial(n - 1 - c, k - 1 - pos);
            if (rank < block) {
                out[pos] = static_cast<std::uint32_t>(c);
                next = c + 1;
                break;
            }
            rank -= block;
        }
    }
}

bool next_combination(std::size_t n, std::span<std::uint32_t> combo) noexcept {
    const std::size_t k = combo.size();
    std::size_t i = k;
    while (i > 0) {
        --i;
        if (combo[i] < n - k + i) {
            ++combo[i];
            for (std::size_t j = i + 1; j < k; ++j) combo[j] = combo[j - 1] + 1;
            return true;
        }
    }
    return false;
}

void validate(const DesignSpec& design, std::uint64_t enumeration_cap) {
    validate_design_counts(design.n_units, design.n_treated);
    if (!(design.accept_prob > 0.0 && design.accept_prob <= 1.0)) {
        throw Error(ErrorKind::invalid_design, "accept_prob must lie in (0, 1], got " +
                                                   std::to_string(design.accept_prob));
    }
    if (design.batch_size == 0) {
        throw Error(ErrorKind::invalid_design, "batch_size must be at least 1");
    }
    if (design.mode == GenerationMode::monte_carlo) {
        if (design.max_draws == 0) {
            throw Error(ErrorKind::invalid_design, "max_draws must be at least 1");
        }
        if (design.batch_size > design.max_draws) {
            throw Error(ErrorKind::invalid_design, "batch_size " + std::to_string(design.batch_size) +
                                                       " exceeds max_draws " +
                                                       std::to_string(design.max_draws));
        }
    } else {
        const auto total = binomial(design.n_units, design.n_treated);
        if (!total || *total > enumeration_cap) {
            throw Error(ErrorKind::enumeration_too_large,
                        "C(" + std::to_string(design.n_units) + ", " + std::to_string(design.n_treated) +
                            ") exceeds the enumeration cap of " + std::to_string(enumeration_cap) +
                            "; use mode monte_carlo");
        }
    }
}

std::uint64_t accepted_count(double accept_prob, std::uint64_t n_candidates) {
    const double raw = std::floor(accept_prob * static_cast<double>(n_candidates) + 1e-9);
    const auto k = raw < 1.0 ? std::uint64_t{1} : static_cast<std::uint64_t>(raw);
    return std::min(k, n_candidates);
}

namespace {

struct WorkerScratch {
    std::vector<std::uint32_t> index;
    std::vector<std::uint32_t> combo;
    std::vector<double> acc;
};

void write_combination(std::span<const std::uint32_t> combo, std::span<std::uint8_t> row) {
    std::fill(row.begin(), row.end(), std::uint8_t{0});
    for (auto c : combo) row[c] = 1;
}

std::uint64_t candidate_count(const DesignSpec& design) {
    return design.mode == GenerationMode::exact ? *binomial(design.n_units, design.n_treated)
                                                : design.max_draws;
}

// Builds candidate `global` into `row`. For enumeration, `fresh` unranks
// instead of stepping the previous subset.
void build_candidate(const DesignSpec& design, std::uint64_t global, bool fresh,
                     std::span<std::uint8_t> row, WorkerScratch& ws) {
    if (design.mode == GenerationMode::monte_carlo) {
        fill_assignment({design.root_seed, global}, design.n_treated, row, ws.index);
    } else {
        if (fresh) {
            unrank_combination(design.n_units, global, ws.combo);
        } else {
            next_combination(design.n_units, ws.combo);
        }
        write_combination(ws.combo, row);
    }
}

} // namespace

CandidateScores score_candidates(const CovariateMatrix& x, const DesignSpec& design,
                                 const GenerationOptions& options) {
    validate(design, options.enumeration_cap);
    if (x.n_units() != design.n_units) {
        throw Error(ErrorKind::shape, "covariates have " + std::to_string(x.n_units()) +
                                          " rows but the design has " +
                                          std::to_string(design.n_units) + " units");
    }
    const std::size_t n = design.n_units;
    const std::uint64_t total = candidate_count(design);

    std::unique_ptr<BalanceKernel> kernel;
    if (!options.custom_balance) {
        kernel = std::make_unique<BalanceKernel>(
            x, precompute_precision(x, design.precision_mode, options.ridge_lambda));
    }
    const std::size_t d = x.n_covariates();

    CandidateScores out{design, std::vector<double>(total)};
    auto& stats = out.stats;

    if (options.kernel == KernelPath::scalar) {
        WorkerScratch ws{std::vector<std::uint32_t>(n), std::vector<std::uint32_t>(design.n_treated),
                         std::vector<double>(d)};
        std::vector<std::uint8_t> row(n);
        for (std::uint64_t i = 0; i < total; ++i) {
            build_candidate(design, i, i == 0, row, ws);
            stats[i] = options.custom_balance ? options.custom_balance(row)
                                              : kernel->score_scalar(row, ws.acc.data());
        }
        return out;
    }

    const std::size_t threads = resolve_threads(options.threads);
    const std::size_t tile = kernel ? kernel->tile_size() : 64;
    const std::size_t batch = std::min<std::uint64_t>(design.batch_size, total);
    std::vector<std::uint8_t> rows(batch * n);
    std::vector<WorkerScratch> scratch(threads);
    for (auto& ws : scratch) {
        ws.index.resize(n);
        ws.combo.resize(design.n_treated);
        ws.acc.resize(kernel ? kernel->scratch_size() : 0);
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::uint64_t start = 0; start < total; start += batch) {
        const std::size_t count = static_cast<std::size_t>(std::min<std::uint64_t>(batch, total - start));
        const auto tiles = static_cast<std::int64_t>((count + tile - 1) / tile);
#pragma omp parallel for num_threads(static_cast<int>(threads)) schedule(static)
        for (std::int64_t t = 0; t < tiles; ++t) {
            try {
                auto& ws = scratch[static_cast<std::size_t>(omp_get_thread_num())];
                const std::size_t c0 = static_cast<std::size_t>(t) * tile;
                const std::size_t cc = std::min(tile, count - c0);
                std::uint8_t* tile_rows = rows.data() + c0 * n;
                for (std::size_t c = 0; c < cc; ++c) {
                    build_candidate(design, start + c0 + c, c == 0, {tile_rows + c * n, n}, ws);
                }
                double* tile_out = stats.data() + start + c0;
                if (kernel) {
                    kernel->score_tile(tile_rows, cc, tile_out, ws.acc.data());
                } else {
                    for (std::size_t c = 0; c < cc; ++c) {
                        tile_out[c] = options.custom_balance(AssignmentView(tile_rows + c * n, n));
                    }
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    }
    return out;
}

RandomizationPool select_pool(const CandidateScores& scores, double accept_prob,
                              const GenerationOptions& options) {
    DesignSpec design = scores.design;
    design.accept_prob = accept_prob;
    validate(design, options.enumeration_cap);
    if (design.mode == GenerationMode::exact) {
        design.storage = StorageMode::full;
    }
    const auto& stats = scores.stats;
    const std::uint64_t total = stats.size();
    if (total == 0) {
        throw Error(ErrorKind::internal, "no candidates were scored");
    }
    const std::uint64_t k = accepted_count(accept_prob, total);

    std::vector<std::uint64_t> chosen(total);
    std::iota(chosen.begin(), chosen.end(), std::uint64_t{0});
    if (k < total) {
        const auto before = [&stats](std::uint64_t a, std::uint64_t b) {
            return stats[a] < stats[b] || (stats[a] == stats[b] && a < b);
        };
        std::nth_element(chosen.begin(), chosen.begin() + static_cast<std::ptrdiff_t>(k), chosen.end(),
                         before);
        chosen.resize(k);
        chosen.shrink_to_fit();
        std::sort(chosen.begin(), chosen.end());
    }

    RandomizationPool pool;
    pool.design = design;
    pool.n_candidates = total;
    pool.n_accepted = k;
    pool.stats.reserve(k);
    double threshold = -std::numeric_limits<double>::infinity();
    for (auto i : chosen) {
        pool.stats.push_back(stats[i]);
        threshold = std::max(threshold, stats[i]);
    }
    pool.threshold_value = threshold;
    const bool monte_carlo = design.mode == GenerationMode::monte_carlo;
    if (monte_carlo) {
        pool.keys.reserve(k);
        for (auto i : chosen) pool.keys.push_back({design.root_seed, i});
    }

    const std::size_t n = design.n_units;
    const bool want_rows = design.storage != StorageMode::keys;
    if (want_rows && !options.sink) {
        if (k * n > options.max_assignment_bytes) {
            throw Error(ErrorKind::memory_cap,
                        "holding " + std::to_string(k) + " accepted assignments of " +
                            std::to_string(n) + " units exceeds the memory cap; use storage=keys "
                            "or stream the pool to a file with --out");
        }
        pool.assignments.emplace(k, n);
    }

    WorkerScratch ws{std::vector<std::uint32_t>(n), std::vector<std::uint32_t>(design.n_treated), {}};
    std::vector<std::uint8_t> row(want_rows ? n : 0);
    if (options.sink) options.sink->begin(pool);
    for (std::size_t r = 0; r < chosen.size(); ++r) {
        std::span<std::uint8_t> target = row;
        if (want_rows) {
            if (pool.assignments) target = pool.assignments->row(r);
            build_candidate(design, chosen[r], true, target, ws);
        }
        if (options.sink) {
            options.sink->row(monte_carlo ? &pool.keys[r] : nullptr, pool.stats[r], target);
        }
    }
    if (options.sink) options.sink->finish();
    return pool;
}

RandomizationPool enumerate_exact(const CovariateMatrix& x, const DesignSpec& design,
                                  const GenerationOptions& options) {
    if (design.mode != GenerationMode::exact) {
        throw Error(ErrorKind::invalid_design, "enumerate_exact needs mode exact");
    }
    return select_pool(score_candidates(x, design, options), design.accept_prob, options);
}

RandomizationPool monte_carlo_pool(const CovariateMatrix& x, const DesignSpec& design,
                                   const GenerationOptions& options) {
    if (design.mode != GenerationMode::monte_carlo) {
        throw Error(ErrorKind::invalid_design, "monte_carlo_pool needs mode monte_carlo");
    }
    return select_pool(score_candidates(x, design, options), design.accept_prob, options);
}

RandomizationPool generate_randomizations(const CovariateMatrix& x, const DesignSpec& design,
                                          const GenerationOptions& options) {
    return design.mode == GenerationMode::exact ? enumerate_exact(x, design, options)
                                                : monte_carlo_pool(x, design, options);
}

AssignmentMatrix regenerate_assignments(const RandomizationPool& pool) {
    if (pool.keys.empty()) {
        throw Error(ErrorKind::unsupported,
                    "pool has no keys to regenerate from (exact enumeration stores assignments)");
    }
    const std::size_t n = pool.design.n_units;
    validate_design_counts(n, pool.design.n_treated);
    AssignmentMatrix out(pool.keys.size(), n);
    std::vector<std::uint32_t> scratch(n);
    for (std::size_t r = 0; r < pool.keys.size(); ++r) {
        fill_assignment(pool.keys[r], pool.design.n_treated, out.row(r), scratch);
    }
    return out;
}

double sorted_quantile(std::span<const double> sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

PoolSummary pool_summary(const RandomizationPool& pool) {
    PoolSummary s;
    s.n_candidates = pool.n_candidates;
    s.n_accepted = pool.n_accepted;
    s.n_units = pool.design.n_units;
    s.n_treated = pool.design.n_treated;
    s.threshold_value = pool.threshold_value;
    s.acceptance_rate = pool.n_candidates == 0
                            ? 0.0
                            : static_cast<double>(pool.n_accepted) / static_cast<double>(pool.n_candidates);
    std::vector<double> sorted(pool.stats);
    std::sort(sorted.begin(), sorted.end());
    if (!sorted.empty()) {
        s.min = sorted.front();
        s.max = sorted.back();
        s.q1 = sorted_quantile(sorted, 0.25);
        s.median = sorted_quantile(sorted, 0.5);
        s.q3 = sorted_quantile(sorted, 0.75);
        s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
    }
    return s;
}

} // namespace fastrr
