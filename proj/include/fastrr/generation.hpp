#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "fastrr/balance.hpp"
#include "fastrr/keys.hpp"

namespace fastrr {

enum class GenerationMode { exact, monte_carlo };
enum class StorageMode { keys, full, both };

std::string_view to_string(GenerationMode mode) noexcept;
std::string_view to_string(StorageMode mode) noexcept;
GenerationMode parse_generation_mode(std::string_view name);
StorageMode parse_storage_mode(std::string_view name);

inline constexpr std::uint64_t kDefaultEnumerationCap = 100'000'000;

struct DesignSpec {
    std::size_t n_units = 0;
    std::size_t n_treated = 0;
    double accept_prob = 0.01;
    GenerationMode mode = GenerationMode::monte_carlo;
    std::uint64_t max_draws = 100'000;
    std::size_t batch_size = 10'000;
    PrecisionMode precision_mode = PrecisionMode::exact;
    std::uint64_t root_seed = 0;
    StorageMode storage = StorageMode::keys;

    friend bool operator==(const DesignSpec&, const DesignSpec&) = default;
};

/// Throws ErrorKind::invalid_design on a bad count, probability or batch, and
/// ErrorKind::enumeration_too_large when exact enumeration would exceed `cap`.
void validate(const DesignSpec& design, std::uint64_t enumeration_cap = kDefaultEnumerationCap);

/// max(1, floor(accept_prob * n_candidates)), capped at n_candidates. A 1e-9
/// nudge absorbs representation error such as 0.29 * 100 = 28.999...
std::uint64_t accepted_count(double accept_prob, std::uint64_t n_candidates);

/// C(n, k), or nullopt if it does not fit in 64 bits.
std::optional<std::uint64_t> binomial(std::uint64_t n, std::uint64_t k);

/// Treated-index set of the given lexicographic rank among all k-subsets of
/// 0..n-1. `out` has length k and comes back strictly increasing.
void unrank_combination(std::size_t n, std::uint64_t rank, std::span<std::uint32_t> out);

/// Lexicographic successor in place; false once the last subset is passed.
bool next_combination(std::size_t n, std::span<std::uint32_t> combo) noexcept;

struct RandomizationPool {
    DesignSpec design;
    std::vector<AssignmentKey> keys;                 // empty for exact enumeration
    std::optional<AssignmentMatrix> assignments;     // absent in keys-only storage or when streamed
    std::vector<double> stats;                       // aligned with accepted entries
    double threshold_value = 0.0;
    std::uint64_t n_candidates = 0;
    std::uint64_t n_accepted = 0;

    friend bool operator==(const RandomizationPool&, const RandomizationPool&) = default;
};

/// Receives accepted rows as they are produced so they never have to be held
/// in memory at once. begin() sees the pool metadata with empty payload.
class PoolSink {
public:
    virtual ~PoolSink() = default;
    virtual void begin(const RandomizationPool& header) = 0;
    /// key is null for exact enumeration; bits is empty in keys-only storage.
    virtual void row(const AssignmentKey* key, double stat, AssignmentView bits) = 0;
    virtual void finish() = 0;
};

enum class KernelPath {
    batched, ///< tiled vectorised kernel, spread over `threads` workers
    scalar,  ///< one candidate at a time, plain loop, single thread
};

/// Per-assignment balance hook replacing the Mahalanobis statistic. Must be
/// safe to call concurrently.
using BalanceFunction = std::function<double(AssignmentView)>;

struct GenerationOptions {
    std::size_t threads = 0; ///< 0 resolves via default_thread_count()
    KernelPath kernel = KernelPath::batched;
    PoolSink* sink = nullptr;
    std::uint64_t enumeration_cap = kDefaultEnumerationCap;
    std::size_t max_assignment_bytes = std::size_t{4} << 30;
    std::optional<double> ridge_lambda;
    BalanceFunction custom_balance;
};

/// Pass-1 output: one statistic per candidate, indexed by draw index (Monte
/// Carlo) or enumeration rank (exact). The key of candidate i is
/// (design.root_seed, i), so nothing else needs storing.
struct CandidateScores {
    DesignSpec design;
    std::vector<double> stats;
};

CandidateScores score_candidates(const CovariateMatrix& x, const DesignSpec& design,
                                 const GenerationOptions& options = {});

/// Pass 2: keeps the accepted_count(accept_prob, M) smallest statistics, ties
/// going to the lower index, and materialises whatever `storage` asks for.
RandomizationPool select_pool(const CandidateScores& scores, double accept_prob,
                              const GenerationOptions& options = {});

RandomizationPool enumerate_exact(const CovariateMatrix& x, const DesignSpec& design,
                                  const GenerationOptions& options = {});
RandomizationPool monte_carlo_pool(const CovariateMatrix& x, const DesignSpec& design,
                                   const GenerationOptions& options = {});
/// Dispatches on design.mode.
RandomizationPool generate_randomizations(const CovariateMatrix& x, const DesignSpec& design,
                                          const GenerationOptions& options = {});

/// Rebuilds every accepted assignment from its key. Throws
/// ErrorKind::unsupported for pools without keys.
AssignmentMatrix regenerate_assignments(const RandomizationPool& pool);

struct PoolSummary {
    std::uint64_t n_candidates = 0;
    std::uint64_t n_accepted = 0;
    std::size_t n_units = 0;
    std::size_t n_treated = 0;
    double min = 0, q1 = 0, median = 0, mean = 0, q3 = 0, max = 0;
    double acceptance_rate = 0;
    double threshold_value = 0;
};

/// Quartiles by linear interpolation between order statistics.
PoolSummary pool_summary(const RandomizationPool& pool);

/// Linear-interpolation quantile of sorted data, q in [0, 1].
double sorted_quantile(std::span<const double> sorted, double q);

} // namespace fastrr
