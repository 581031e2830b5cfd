#include "fastrr/balance.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "fastrr/error.hpp"

namespace fastrr {

CovariateMatrix::CovariateMatrix(std::size_t n_units, std::size_t n_covariates,
                                 std::vector<double> values, std::vector<std::string> names)
    : n_(n_units), d_(n_covariates), values_(std::move(values)), names_(std::move(names)) {
    if (n_ < 2 || d_ < 1) {
        throw Error(ErrorKind::shape, "covariate matrix needs at least 2 rows and 1 column, got " +
                                          std::to_string(n_) + "x" + std::to_string(d_));
    }
    if (values_.size() != n_ * d_) {
        throw Error(ErrorKind::shape, "covariate matrix holds " + std::to_string(values_.size()) +
                                          " values, expected " + std::to_string(n_ * d_));
    }
    for (std::size_t k = 0; k < values_.size(); ++k) {
        if (!std::isfinite(values_[k])) {
            throw Error(ErrorKind::parse, "non-finite covariate at row " + std::to_string(k / d_) +
                                              ", column " + std::to_string(k % d_));
        }
    }
    if (names_.empty()) {
        for (std::size_t j = 0; j < d_; ++j) {
            names_.push_back("x" + std::to_string(j + 1));
        }
    } else if (names_.size() != d_) {
        throw Error(ErrorKind::shape, "column name count does not match covariate count");
    }
}

std::string_view to_string(PrecisionMode mode) noexcept {
    switch (mode) {
    case PrecisionMode::exact: return "exact";
    case PrecisionMode::ridge: return "ridge";
    case PrecisionMode::diagonal: return "diagonal";
    }
    return "exact";
}

PrecisionMode parse_precision_mode(std::string_view name) {
    if (name == "exact") return PrecisionMode::exact;
    if (name == "ridge") return PrecisionMode::ridge;
    if (name == "diagonal") return PrecisionMode::diagonal;
    throw Error(ErrorKind::invalid_design, "unknown precision mode '" + std::string(name) +
                                               "' (expected exact, ridge or diagonal)");
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_eigen(const CovariateMatrix& x) {
    return {x.values().data(), static_cast<Eigen::Index>(x.n_units()),
            static_cast<Eigen::Index>(x.n_covariates())};
}

// Column-centred copy. Constant columns become exact zeros rather than
// whatever rounding residue x - mean(x) leaves behind.
RowMatrix centered(const CovariateMatrix& x) {
    RowMatrix xc = as_eigen(x);
    for (Eigen::Index j = 0; j < xc.cols(); ++j) {
        auto col = xc.col(j);
        if (col.maxCoeff() == col.minCoeff()) {
            col.setZero();
        } else {
            col.array() -= col.mean();
        }
    }
    return xc;
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorKind::singular_covariance,
                    "covariance matrix is not positive definite; use --precision ridge");
    }
    return symmetrized(llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols())));
}

void check_invertible(const CovariateMatrix& x, const Eigen::MatrixXd& s) {
    const std::size_t n = x.n_units();
    const std::size_t d = x.n_covariates();
    if (d >= n) {
        throw Error(ErrorKind::singular_covariance,
                    "sample covariance is singular: " + std::to_string(d) + " covariates >= " +
                        std::to_string(n) + " units; use --precision ridge or diagonal");
    }
    const double max_var = s.diagonal().maxCoeff();
    for (std::size_t j = 0; j < d; ++j) {
        const double v = s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
        if (v <= 1e-14 * std::max(max_var, 1.0)) {
            throw Error(ErrorKind::singular_covariance,
                        "sample covariance is singular: column '" + x.names()[j] +
                            "' is constant; use --precision ridge or diagonal");
        }
    }
    // Scale-free conditioning check on the correlation matrix.
    const Eigen::VectorXd inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd corr = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    if (ev.minCoeff() <= 1e-10 * ev.maxCoeff()) {
        throw Error(ErrorKind::singular_covariance,
                    "sample covariance is singular: covariates are collinear; use --precision ridge");
    }
}

} // namespace

Eigen::MatrixXd sample_covariance(const CovariateMatrix& x) {
    const RowMatrix xc = centered(x);
    return (xc.transpose() * xc) / static_cast<double>(x.n_units() - 1);
}

BalancePrecision precompute_precision(const CovariateMatrix& x, PrecisionMode mode,
                                      std::optional<double> ridge_lambda) {
    const Eigen::MatrixXd s = sample_covariance(x);
    const auto d = static_cast<Eigen::Index>(x.n_covariates());
    BalancePrecision out;
    out.mode = mode;
    switch (mode) {
    case PrecisionMode::exact:
        check_invertible(x, s);
        out.inverse = spd_inverse(s);
        break;
    case PrecisionMode::ridge: {
        const double lambda = ridge_lambda.value_or(0.01 * s.diagonal().mean());
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
            throw Error(ErrorKind::singular_covariance,
                        "ridge penalty must be positive; every covariate is constant");
        }
        out.ridge_lambda = lambda;
        out.inverse = spd_inverse(s + lambda * Eigen::MatrixXd::Identity(d, d));
        break;
    }
    case PrecisionMode::diagonal: {
        const double eps = 1e-12 * std::max(s.diagonal().maxCoeff(), 1.0);
        out.inverse = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index j = 0; j < d; ++j) {
            out.inverse(j, j) = 1.0 / std::max(s(j, j), eps);
        }
        break;
    }
    }
    return out;
}

namespace {

void check_conforms(const CovariateMatrix& x, const BalancePrecision& p, AssignmentView w) {
    if (w.size() != x.n_units()) {
        throw Error(ErrorKind::shape, "assignment length " + std::to_string(w.size()) +
                                          " does not match " + std::to_string(x.n_units()) + " units");
    }
    if (static_cast<std::size_t>(p.inverse.rows()) != x.n_covariates() ||
        static_cast<std::size_t>(p.inverse.cols()) != x.n_covariates()) {
        throw Error(ErrorKind::shape, "precision matrix does not match covariate count");
    }
}

} // namespace

double mahalanobis_stat(const CovariateMatrix& x, const BalancePrecision& precision,
                        AssignmentView w) {
    check_conforms(x, precision, w);
    const std::size_t n = x.n_units();
    const std::size_t d = x.n_covariates();
    std::size_t n_t = 0;
    for (auto b : w) {
        n_t += b;
    }
    validate_design_counts(n, n_t);
    const std::size_t n_c = n - n_t;

    std::vector<double> mean_t(d, 0.0), mean_c(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto& target = w[i] ? mean_t : mean_c;
        for (std::size_t j = 0; j < d; ++j) {
            target[j] += x(i, j);
        }
    }
    std::vector<double> delta(d);
    for (std::size_t j = 0; j < d; ++j) {
        delta[j] = mean_t[j] / static_cast<double>(n_t) - mean_c[j] / static_cast<double>(n_c);
    }
    double q = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < d; ++b) {
            row += precision.inverse(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * delta[b];
        }
        q += delta[a] * row;
    }
    const double scale = static_cast<double>(n_t) * static_cast<double>(n_c) / static_cast<double>(n);
    return std::max(0.0, scale * q);
}

std::vector<double> batch_balance(const CovariateMatrix& x, const BalancePrecision& precision,
                                  std::span<const Assignment> batch) {
    if (batch.empty()) {
        return {};
    }
    for (const auto& w : batch) {
        check_conforms(x, precision, w.bits());
        validate_design_counts(w.n_units(), w.n_treated());
    }
    return BalanceKernel(x, precision).score_batch(batch);
}

BalanceKernel::BalanceKernel(const CovariateMatrix& x, const BalancePrecision& precision)
    : n_(x.n_units()), d_(x.n_covariates()) {
    const auto d = static_cast<Eigen::Index>(d_);
    if (precision.inverse.rows() != d || precision.inverse.cols() != d) {
        throw Error(ErrorKind::shape, "precision matrix does not match covariate count");
    }
    // P = L L'
    Eigen::MatrixXd factor;
    Eigen::LLT<Eigen::MatrixXd> llt(precision.inverse);
    if (llt.info() == Eigen::Success) {
        factor = llt.matrixL();
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(precision.inverse);
        const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        factor = eig.eigenvectors() * root.asDiagonal();
    }
    RowMatrix z = centered(x) * factor;
    z_.assign(z.data(), z.data() + z.size());
    const std::size_t d_vec = d_ - d_ % kColBlock;
    z_blocked_.resize(n_ * d_vec);
    for (std::size_t j0 = 0; j0 < d_vec; j0 += kColBlock) {
        double* dst = z_blocked_.data() + j0 * n_;
        for (std::size_t i = 0; i < n_; ++i) {
            std::copy_n(z_.data() + i * d_ + j0, kColBlock, dst + i * kColBlock);
        }
    }

    tile_ = std::clamp<std::size_t>((std::size_t{1} << 18) / (n_ + d_), kCandBlock, 64) / kCandBlock * kCandBlock;
}

std::size_t BalanceKernel::scratch_size() const noexcept {
    return tile_ * d_ + (tile_ + kCandBlock - 1) / kCandBlock * kCandBlock * n_;
}

double BalanceKernel::finish(const double* acc, std::size_t n_treated) const noexcept {
    double sq = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
        sq += acc[j] * acc[j];
    }
    const std::size_t n_c = n_ - n_treated;
    const double scale = static_cast<double>(n_) /
                         (4.0 * static_cast<double>(n_treated) * static_cast<double>(n_c));
    return scale * sq;
}

void BalanceKernel::score_tile(const std::uint8_t* rows, std::size_t count, double* out,
                               double* acc) const noexcept {
    const std::size_t n = n_;
    const std::size_t d = d_;
    const std::size_t blocks = (count + kCandBlock - 1) / kCandBlock;
    const std::size_t d_vec = d - d % kColBlock;

    // sign[b][i][c] = +1 / -1 for candidate b * kCandBlock + c, 0 for padding
    double* sign = acc + count * d;
    for (std::size_t b = 0; b < blocks; ++b) {
        double* sb = sign + b * n * kCandBlock;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < kCandBlock; ++c) {
                const std::size_t cand = b * kCandBlock + c;
                sb[i * kCandBlock + c] = cand < count ? (rows[cand * n + i] ? 1.0 : -1.0) : 0.0;
            }
        }
    }

    for (std::size_t j0 = 0; j0 < d_vec; j0 += kColBlock) {
        for (std::size_t b = 0; b < blocks; ++b) {
            const double* sb = sign + b * n * kCandBlock;
            Lanes a[kCandBlock][kVecPerBlock] = {};
            for (std::size_t i = 0; i < n; ++i) {
                const double* zi = z_blocked_.data() + j0 * n + i * kColBlock;
                Lanes z[kVecPerBlock];
                for (std::size_t v = 0; v < kVecPerBlock; ++v) std::memcpy(&z[v], zi + v * kLanes, sizeof(Lanes));
                const double* s = sb + i * kCandBlock;
                for (std::size_t c = 0; c < kCandBlock; ++c) {
                    for (std::size_t v = 0; v < kVecPerBlock; ++v) a[c][v] += s[c] * z[v];
                }
            }
            const std::size_t live = std::min(kCandBlock, count - b * kCandBlock);
            for (std::size_t c = 0; c < live; ++c) {
                double* dst = acc + (b * kCandBlock + c) * d + j0;
                for (std::size_t v = 0; v < kVecPerBlock; ++v) std::memcpy(dst + v * kLanes, &a[c][v], sizeof(Lanes));
            }
        }
    }

    if (d_vec < d) {
        for (std::size_t c = 0; c < count; ++c) std::fill(acc + c * d + d_vec, acc + (c + 1) * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* __restrict z = z_.data() + i * d;
            for (std::size_t c = 0; c < count; ++c) {
                double* __restrict a = acc + c * d;
                if (rows[c * n + i]) {
                    for (std::size_t j = d_vec; j < d; ++j) a[j] += z[j];
                } else {
                    for (std::size_t j = d_vec; j < d; ++j) a[j] -= z[j];
                }
            }
        }
    }

    for (std::size_t c = 0; c < count; ++c) {
        const std::uint8_t* row = rows + c * n;
        std::size_t n_t = 0;
        for (std::size_t i = 0; i < n; ++i) n_t += row[i];
        out[c] = finish(acc + c * d, n_t);
    }
}

#if defined(__GNUC__) && !defined(__clang__)
__attribute__((optimize("no-tree-vectorize")))
#endif
double BalanceKernel::score_scalar(AssignmentView w, double* acc) const noexcept {
    std::size_t n_t = 0;
    for (std::size_t j = 0; j < d_; ++j) acc[j] = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
        const double* z = z_.data() + i * d_;
        if (w[i]) {
            ++n_t;
            for (std::size_t j = 0; j < d_; ++j) acc[j] += z[j];
        } else {
            for (std::size_t j = 0; j < d_; ++j) acc[j] -= z[j];
        }
    }
    return finish(acc, n_t);
}

std::vector<double> BalanceKernel::score_batch(std::span<const Assignment> batch) const {
    std::vector<double> out(batch.size());
    std::vector<std::uint8_t> rows(tile_ * n_);
    std::vector<double> acc(scratch_size());
    for (std::size_t start = 0; start < batch.size(); start += tile_) {
        const std::size_t count = std::min(tile_, batch.size() - start);
        for (std::size_t c = 0; c < count; ++c) {
            const auto bits = batch[start + c].bits();
            std::copy(bits.begin(), bits.end(), rows.begin() + static_cast<std::ptrdiff_t>(c * n_));
        }
        score_tile(rows.data(), count, out.data() + start, acc.data());
    }
    return out;
}

} // namespace fastrr
