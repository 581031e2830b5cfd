#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fastrr/keys.hpp"

namespace fastrr {

/// n x d pre-treatment covariates, row-major, all entries finite.
class CovariateMatrix {
public:
    CovariateMatrix() = default;
    /// Throws ErrorKind::shape on size mismatch or n < 2 / d < 1, and
    /// ErrorKind::parse on a non-finite entry.
    CovariateMatrix(std::size_t n_units, std::size_t n_covariates, std::vector<double> values,
                    std::vector<std::string> names = {});

    std::size_t n_units() const noexcept { return n_; }
    std::size_t n_covariates() const noexcept { return d_; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * d_ + j]; }
    std::span<const double> row(std::size_t i) const noexcept { return {values_.data() + i * d_, d_}; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<std::string>& names() const noexcept { return names_; }

private:
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::vector<double> values_;
    std::vector<std::string> names_;
};

enum class PrecisionMode { exact, ridge, diagonal };

std::string_view to_string(PrecisionMode mode) noexcept;
/// Throws ErrorKind::invalid_design on an unknown name.
PrecisionMode parse_precision_mode(std::string_view name);

/// The matrix used in the balance quadratic form.
///   exact    S^-1
///   ridge    (S + lambda I)^-1, lambda = 0.01 * mean(diag S) unless overridden
///   diagonal diag(1 / max(S_jj, eps)), eps = 1e-12 * max(max diag S, 1)
/// S is the sample covariance with an n-1 divisor.
struct BalancePrecision {
    Eigen::MatrixXd inverse;
    PrecisionMode mode = PrecisionMode::exact;
    double ridge_lambda = 0.0;
};

/// Throws ErrorKind::singular_covariance when mode is exact and S cannot be
/// inverted (d >= n, a constant column, or collinear columns).
BalancePrecision precompute_precision(const CovariateMatrix& x, PrecisionMode mode,
                                      std::optional<double> ridge_lambda = std::nullopt);

/// Sample covariance with n-1 divisor.
Eigen::MatrixXd sample_covariance(const CovariateMatrix& x);

/// (n_t n_c / n) * delta' P delta with delta the treated-minus-control mean
/// difference. Straight from the definition; the batch kernels are checked
/// against it.
double mahalanobis_stat(const CovariateMatrix& x, const BalancePrecision& precision,
                        AssignmentView w);

/// Element i equals mahalanobis_stat for batch[i].
std::vector<double> batch_balance(const CovariateMatrix& x, const BalancePrecision& precision,
                                  std::span<const Assignment> batch);

/// Precomputed whitened design used by the generation engine.
///
/// With Xc the column-centred covariates and P = L L', every row is mapped to
/// z_i = L' xc_i. For an assignment with signs s_i = +1 (treated) / -1
/// (control), v = sum_i s_i z_i gives
///     stat = n / (4 n_t n_c) * |v|^2,
/// which is the Mahalanobis form above because the centred rows sum to zero.
/// v is accumulated in ascending unit order in every code path, so a
/// candidate's statistic is bit-identical whether it is scored alone or in a
/// tile of any size, and W and its complement score identically.
class BalanceKernel {
public:
    BalanceKernel(const CovariateMatrix& x, const BalancePrecision& precision);

    std::size_t n_units() const noexcept { return n_; }
    std::size_t n_covariates() const noexcept { return d_; }

    /// Candidates scored together per tile.
    std::size_t tile_size() const noexcept { return tile_; }

    /// Doubles of workspace score_tile needs for a full tile.
    std::size_t scratch_size() const noexcept;

    /// Scores `count` <= tile_size() row-major assignments. `acc` must hold
    /// scratch_size() doubles.
    void score_tile(const std::uint8_t* rows, std::size_t count, double* out, double* acc) const noexcept;

    /// Same arithmetic, one candidate at a time with a plain scalar loop.
    /// `acc` must hold n_covariates() doubles.
    double score_scalar(AssignmentView w, double* acc) const noexcept;

    /// Convenience wrapper over score_tile for whole batches (single thread).
    std::vector<double> score_batch(std::span<const Assignment> batch) const;

private:
    // Register blocking of score_tile: kCandBlock candidates by kColBlock
    // whitened columns per pass over the units.
    using Lanes = double __attribute__((vector_size(64)));
    static constexpr std::size_t kLanes = 8;
    static constexpr std::size_t kVecPerBlock = 2;
    static constexpr std::size_t kColBlock = kLanes * kVecPerBlock;
    static constexpr std::size_t kCandBlock = 8;

    double finish(const double* acc, std::size_t n_treated) const noexcept;

    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::size_t tile_ = 1;
    std::vector<double> z_;         // n x d, row-major
    std::vector<double> z_blocked_; // kColBlock-wide column panels, each n x kColBlock
};

} // namespace fastrr
