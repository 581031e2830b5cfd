#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fastrr/generation.hpp"

namespace fastrr {

/// Observed outcomes, one finite value per unit.
class OutcomeVector {
public:
    OutcomeVector() = default;
    /// Throws ErrorKind::parse on a non-finite entry.
    explicit OutcomeVector(std::vector<double> y);

    std::size_t size() const noexcept { return y_.size(); }
    std::span<const double> values() const noexcept { return y_; }
    double operator[](std::size_t i) const noexcept { return y_[i]; }

private:
    std::vector<double> y_;
};

/// mean(y | w = 1) - mean(y | w = 0).
double diff_in_means(AssignmentView w, std::span<const double> y);

struct TestStatistic {
    using Fn = std::function<double(AssignmentView, std::span<const double>)>;

    std::string name;
    Fn fn;
    /// Fiducial intervals invert the test under a constant additive effect,
    /// which is only worked out for the difference in means.
    bool difference_in_means = false;

    static TestStatistic diff_in_means();
};

struct InferenceOptions {
    std::size_t threads = 0;
    /// Above this many accepted assignments the permutation distribution is
    /// counted on the fly instead of being kept in TestResult.
    std::uint64_t max_materialized = 10'000'000;
};

struct FiducialInterval {
    double lower = 0.0;
    double upper = 0.0;
};

struct TestResult {
    double p_value = 1.0;
    double tau_obs = 0.0;
    std::optional<FiducialInterval> fi;
    std::vector<double> stat_distribution;
    double alpha = 0.05;
    std::uint64_t n_accepted = 0;
    /// Set when the observed assignment is not one of the accepted ones.
    std::optional<std::string> warning;
};

/// p = (1/M_acc) * #{m : |T(W_m, Y)| >= |T(W_obs, Y)|}, ties inclusive.
TestResult randomization_pvalue(const Assignment& observed, const OutcomeVector& y,
                                const RandomizationPool& pool,
                                const TestStatistic& statistic = TestStatistic::diff_in_means(),
                                const InferenceOptions& options = {});

/// Closure of {tau : p(tau) >= alpha}, where p(tau) is the test of the
/// outcomes shifted to Y - tau * W_obs. Bounds are bracketed on a 201-point
/// grid spanning tau_obs +- 10 sd(permutation distribution) and then bisected
/// to 1e-6 * max(1, |tau_obs|); the returned bounds sit on the accepted side.
/// An unbounded side is reported as +-infinity.
FiducialInterval fiducial_interval(const Assignment& observed, const OutcomeVector& y,
                                   const RandomizationPool& pool, double alpha,
                                   const TestStatistic& statistic = TestStatistic::diff_in_means(),
                                   const InferenceOptions& options = {});

/// p-value plus, when `fi_alpha` is set, the fiducial interval at that level.
TestResult randomization_test(const Assignment& observed, const OutcomeVector& y,
                              const RandomizationPool& pool, std::optional<double> fi_alpha,
                              const TestStatistic& statistic = TestStatistic::diff_in_means(),
                              const InferenceOptions& options = {});

/// Evaluates the shifted-outcome p-value at a single tau (exposed for
/// diagnostics and tests of the interval search).
double shifted_pvalue(const Assignment& observed, const OutcomeVector& y,
                      const RandomizationPool& pool, double tau, const InferenceOptions& options = {});

struct SweepRow {
    double accept_prob = 0.0;
    bool ok = false;
    std::uint64_t n_accepted = 0;
    double p_value = 0.0;
    double tau_obs = 0.0;
    std::optional<FiducialInterval> fi;
    std::string error;
};

struct SweepOptions {
    GenerationOptions generation;
    InferenceOptions inference;
    std::optional<double> fi_alpha;
};

/// One pool per acceptance probability, all cut from the same scored
/// candidates (shared seed and draw count). With no fixed observed
/// assignment each row tests the first accepted assignment of its own pool.
/// A failing row is marked and the sweep carries on.
std::vector<SweepRow> threshold_sweep(const CovariateMatrix& x, const DesignSpec& base,
                                      std::span<const double> probs, const OutcomeVector& y,
                                      const std::optional<Assignment>& fixed_observed,
                                      const SweepOptions& options = {});

/// accept_prob,status,n_accepted,p_value,tau_obs,fi_lower,fi_upper,fi_width,error
void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out);

} // namespace fastrr
