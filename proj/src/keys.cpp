#include "fastrr/keys.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "fastrr/error.hpp"

namespace fastrr {

double KeyedGenerator::normal() noexcept {
    for (;;) {
        const double u = 2.0 * uniform() - 1.0;
        const double v = 2.0 * uniform() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

Assignment::Assignment(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] > 1) {
            throw Error(ErrorKind::invalid_design,
                        "assignment entry " + std::to_string(i) + " is not 0 or 1");
        }
        n_treated_ += bits_[i];
    }
}

Assignment Assignment::complement() const {
    std::vector<std::uint8_t> flipped(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        flipped[i] = static_cast<std::uint8_t>(1 - bits_[i]);
    }
    return Assignment(std::move(flipped));
}

void validate_design_counts(std::size_t n_units, std::size_t n_treated) {
    if (n_treated == 0 || n_treated >= n_units) {
        throw Error(ErrorKind::invalid_design,
                    "need 0 < n_treated < n_units, got n_treated=" + std::to_string(n_treated) +
                        " n_units=" + std::to_string(n_units));
    }
    if (n_units > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorKind::invalid_design, "n_units exceeds 2^32-1");
    }
}

void fill_assignment(AssignmentKey key, std::size_t n_treated, std::span<std::uint8_t> out,
                     std::span<std::uint32_t> scratch) noexcept {
    const std::size_t n = out.size();
    std::iota(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(n), 0u);
    std::fill(out.begin(), out.end(), std::uint8_t{0});
    KeyedGenerator gen(key);
    for (std::size_t i = 0; i < n_treated; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(gen.bounded(n - i));
        std::swap(scratch[i], scratch[j]);
        out[scratch[i]] = 1;
    }
}

Assignment assignment_from_key(AssignmentKey key, std::size_t n_units, std::size_t n_treated) {
    validate_design_counts(n_units, n_treated);
    std::vector<std::uint8_t> bits(n_units);
    std::vector<std::uint32_t> scratch(n_units);
    fill_assignment(key, n_treated, bits, scratch);
    return Assignment(std::move(bits));
}

double memory_improvement_factor(std::size_t n_units, std::size_t key_words) {
    if (key_words == 0) {
        throw Error(ErrorKind::invalid_design, "key_words must be at least 1");
    }
    return static_cast<double>(n_units) / static_cast<double>(key_words);
}

} // namespace fastrr
