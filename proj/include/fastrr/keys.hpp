#pragma once

// Key-only storage: an assignment vector is never kept around longer than it
// takes to score it. What persists is a two-word key (root seed, draw index)
// from which the exact same vector can be rebuilt at any time.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fastrr {

/// Number of 64-bit words in a serialized key.
inline constexpr std::size_t kKeyWords = 2;

struct AssignmentKey {
    std::uint64_t root_seed = 0;
    std::uint64_t draw_index = 0;

    friend constexpr bool operator==(const AssignmentKey&, const AssignmentKey&) = default;
    friend constexpr auto operator<=>(const AssignmentKey&, const AssignmentKey&) = default;
};

namespace mix {
// splitmix64 increment (golden ratio) and finalizer multipliers.
inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kMul1 = 0xBF58476D1CE4E5B9ULL;
inline constexpr std::uint64_t kMul2 = 0x94D049BB133111EBULL;
// Spreads consecutive draw indices across the state space before mixing.
inline constexpr std::uint64_t kDrawStride = 0xD1B54A32D192ED03ULL;

constexpr std::uint64_t finalize(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * kMul1;
    z = (z ^ (z >> 27)) * kMul2;
    return z ^ (z >> 31);
}
} // namespace mix

/// Generator state for one draw:
///   finalize(root_seed XOR (draw_index * kDrawStride))   (mod 2^64)
/// where finalize is the splitmix64 output mix. Draw m never depends on draws
/// 0..m-1, which is what lets workers score disjoint index ranges in any order.
constexpr std::uint64_t derive_state(AssignmentKey key) noexcept {
    return mix::finalize(key.root_seed ^ (key.draw_index * mix::kDrawStride));
}

/// splitmix64 stream seeded from a key's derived state.
class KeyedGenerator {
public:
    constexpr explicit KeyedGenerator(AssignmentKey key) noexcept : state_(derive_state(key)) {}

    constexpr std::uint64_t next() noexcept {
        state_ += mix::kGamma;
        return mix::finalize(state_);
    }

    /// Uniform integer in [0, bound). Rejects raw values at or above the
    /// largest multiple of bound that fits in 2^64, so there is no modulo bias.
    constexpr std::uint64_t bounded(std::uint64_t bound) noexcept {
        // (2^64 - bound) mod bound == 2^64 mod bound
        const std::uint64_t excess = (0 - bound) % bound;
        const std::uint64_t limit = 0 - excess; // floor(2^64/bound)*bound, 0 meaning 2^64
        for (;;) {
            const std::uint64_t x = next();
            if (excess == 0 || x < limit) {
                return x % bound;
            }
        }
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via the Marsaglia polar method. The second variate of
    /// each accepted pair is discarded so every call consumes a predictable
    /// amount of state per acceptance.
    double normal() noexcept;

    constexpr std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

using AssignmentView = std::span<const std::uint8_t>;

/// A 0/1 treatment vector with its treated count fixed at construction.
class Assignment {
public:
    Assignment() = default;
    /// Throws ErrorKind::invalid_design if any entry is not 0/1.
    explicit Assignment(std::vector<std::uint8_t> bits);

    std::size_t n_units() const noexcept { return bits_.size(); }
    std::size_t n_treated() const noexcept { return n_treated_; }
    AssignmentView bits() const noexcept { return bits_; }
    std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }

    Assignment complement() const;

    friend bool operator==(const Assignment&, const Assignment&) = default;

private:
    std::vector<std::uint8_t> bits_;
    std::size_t n_treated_ = 0;
};

/// Row-major rows x n_units matrix of 0/1 assignments.
class AssignmentMatrix {
public:
    AssignmentMatrix() = default;
    AssignmentMatrix(std::size_t rows, std::size_t n_units)
        : rows_(rows), cols_(n_units), data_(rows * n_units, 0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t n_units() const noexcept { return cols_; }

    std::span<std::uint8_t> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    AssignmentView row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    std::span<const std::uint8_t> data() const noexcept { return data_; }

    friend bool operator==(const AssignmentMatrix&, const AssignmentMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Throws ErrorKind::invalid_design unless 0 < n_treated < n_units.
void validate_design_counts(std::size_t n_units, std::size_t n_treated);

/// Writes the assignment for `key` into `out` (length n_units) by a partial
/// Fisher-Yates shuffle of the index array 0..n_units-1 held in `scratch`.
/// Does not validate; callers go through assignment_from_key or validate once
/// up front.
void fill_assignment(AssignmentKey key, std::size_t n_treated, std::span<std::uint8_t> out,
                     std::span<std::uint32_t> scratch) noexcept;

Assignment assignment_from_key(AssignmentKey key, std::size_t n_units, std::size_t n_treated);

/// Full-vector storage over key storage: n_units / key_words.
double memory_improvement_factor(std::size_t n_units, std::size_t key_words);

} // namespace fastrr
