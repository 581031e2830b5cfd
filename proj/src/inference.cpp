#include "fastrr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <omp.h>

#include "fastrr/error.hpp"
#include "fastrr/parallel.hpp"
#include "fastrr/pool_io.hpp"

namespace fastrr {

OutcomeVector::OutcomeVector(std::vector<double> y) : y_(std::move(y)) {
    for (std::size_t i = 0; i < y_.size(); ++i) {
        if (!std::isfinite(y_[i])) {
            throw Error(ErrorKind::parse, "non-finite outcome at unit " + std::to_string(i));
        }
    }
}

double diff_in_means(AssignmentView w, std::span<const double> y) {
    if (w.size() != y.size()) {
        throw Error(ErrorKind::shape, "assignment length " + std::to_string(w.size()) +
                                          " does not match outcome length " + std::to_string(y.size()));
    }
    double sum_t = 0.0, sum_c = 0.0;
    std::size_t n_t = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i]) {
            sum_t += y[i];
            ++n_t;
        } else {
            sum_c += y[i];
        }
    }
    const std::size_t n_c = w.size() - n_t;
    if (n_t == 0 || n_c == 0) {
        throw Error(ErrorKind::invalid_design, "difference in means needs both groups non-empty");
    }
    return sum_t / static_cast<double>(n_t) - sum_c / static_cast<double>(n_c);
}

TestStatistic TestStatistic::diff_in_means() {
    return {"diff_in_means", [](AssignmentView w, std::span<const double> y) { return fastrr::diff_in_means(w, y); },
            true};
}

namespace {

void check_inputs(const Assignment& observed, const OutcomeVector& y, const RandomizationPool& pool) {
    const std::size_t n = pool.design.n_units;
    if (pool.n_accepted == 0 || pool.stats.empty()) {
        throw Error(ErrorKind::invalid_design, "randomization pool is empty");
    }
    if (!pool.assignments && pool.keys.size() != pool.n_accepted) {
        throw Error(ErrorKind::unsupported, "pool holds neither assignments nor keys");
    }
    if (pool.assignments && pool.assignments->rows() != pool.n_accepted) {
        throw Error(ErrorKind::internal, "pool assignment matrix does not match n_accepted");
    }
    if (observed.n_units() != n) {
        throw Error(ErrorKind::shape, "observed assignment has " + std::to_string(observed.n_units()) +
                                          " units, pool has " + std::to_string(n));
    }
    if (y.size() != n) {
        throw Error(ErrorKind::shape, "outcomes have " + std::to_string(y.size()) + " entries, pool has " +
                                          std::to_string(n) + " units");
    }
}

struct RowScratch {
    std::vector<std::uint8_t> bits;
    std::vector<std::uint32_t> index;
};

AssignmentView pool_row(const RandomizationPool& pool, std::size_t r, RowScratch& s) {
    if (pool.assignments) return pool.assignments->row(r);
    fill_assignment(pool.keys[r], pool.design.n_treated, s.bits, s.index);
    return s.bits;
}

// Calls f(row, view) for rows [begin, end) across `threads` workers.
template <class F>
void for_rows(const RandomizationPool& pool, std::size_t begin, std::size_t end, std::size_t threads, F&& f) {
    const std::size_t n = pool.design.n_units;
    std::vector<RowScratch> scratch(threads);
    for (auto& s : scratch) {
        if (!pool.assignments) {
            s.bits.resize(n);
            s.index.resize(n);
        }
    }
    const auto b = static_cast<std::int64_t>(begin);
    const auto e = static_cast<std::int64_t>(end);
#pragma omp parallel for num_threads(static_cast<int>(threads)) schedule(static)
    for (std::int64_t r = b; r < e; ++r) {
        auto& s = scratch[static_cast<std::size_t>(omp_get_thread_num())];
        f(static_cast<std::size_t>(r), pool_row(pool, static_cast<std::size_t>(r), s));
    }
}

// Per-row (T(W_m, Y), T(W_m, W_obs)) for the shifted-outcome test.
struct LinearParts {
    std::vector<double> base;
    std::vector<double> slope;
};

LinearParts linear_parts(const Assignment& observed, const OutcomeVector& y, const RandomizationPool& pool,
                         std::size_t threads) {
    const std::size_t m = pool.n_accepted;
    std::vector<double> w_obs(observed.n_units());
    for (std::size_t i = 0; i < w_obs.size(); ++i) w_obs[i] = observed[i];
    LinearParts parts{std::vector<double>(m), std::vector<double>(m)};
    for_rows(pool, 0, m, threads, [&](std::size_t r, AssignmentView w) {
        parts.base[r] = diff_in_means(w, y.values());
        parts.slope[r] = diff_in_means(w, w_obs);
    });
    return parts;
}

// Under a constant additive effect tau the shifted outcomes Y - tau W_obs give
// T(W_m, Y - tau W_obs) = base_m - tau * slope_m by linearity of the
// difference in means; the observed row has slope exactly 1.
double shifted_p(const LinearParts& parts, double tau_obs, double tau) {
    const double obs = std::abs(tau_obs - tau);
    std::uint64_t hits = 0;
    const std::size_t m = parts.base.size();
    for (std::size_t r = 0; r < m; ++r) {
        hits += std::abs(parts.base[r] - tau * parts.slope[r]) >= obs;
    }
    return static_cast<double>(hits) / static_cast<double>(m);
}

double sample_sd(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

FiducialInterval invert(const LinearParts& parts, double tau_obs, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorKind::invalid_design, "alpha must lie in (0, 1)");
    }
    auto accepted = [&](double tau) { return shifted_p(parts, tau_obs, tau) >= alpha; };

    double sd = sample_sd(parts.base);
    if (!(sd > 0.0) || !std::isfinite(sd)) sd = std::max(1.0, std::abs(tau_obs));
    const double half = 10.0 * sd;
    constexpr int kGrid = 201;
    constexpr int kMid = kGrid / 2;
    std::vector<double> grid(kGrid);
    int first = -1, last = -1;
    double best_p = 0.0;
    for (int i = 0; i < kGrid; ++i) {
        grid[static_cast<std::size_t>(i)] = tau_obs + half * static_cast<double>(i - kMid) / kMid;
        const double p = shifted_p(parts, tau_obs, grid[static_cast<std::size_t>(i)]);
        best_p = std::max(best_p, p);
        if (p >= alpha) {
            if (first < 0) first = i;
            last = i;
        }
    }
    if (first < 0) {
        throw Error(ErrorKind::empty_interval,
                    "no effect reaches p >= alpha; largest p found was " + format_double(best_p));
    }

    const double tol = 1e-6 * std::max(1.0, std::abs(tau_obs));
    // From an accepted point, walk outward until rejected, then bisect.
    auto boundary = [&](double inside, int direction) {
        double step = half / kMid;
        double outside = inside + direction * step;
        for (int k = 0; accepted(outside); ++k) {
            if (k == 64) return direction * std::numeric_limits<double>::infinity();
            inside = outside;
            step *= 2.0;
            outside = inside + direction * step;
        }
        while (std::abs(outside - inside) > tol) {
            const double mid = 0.5 * (inside + outside);
            if (accepted(mid)) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        return inside;
    };
    FiducialInterval fi;
    fi.lower = boundary(grid[static_cast<std::size_t>(first)], -1);
    fi.upper = boundary(grid[static_cast<std::size_t>(last)], +1);
    return fi;
}

} // namespace

TestResult randomization_pvalue(const Assignment& observed, const OutcomeVector& y,
                                const RandomizationPool& pool, const TestStatistic& statistic,
                                const InferenceOptions& options) {
    check_inputs(observed, y, pool);
    if (!statistic.fn) throw Error(ErrorKind::unsupported, "test statistic has no function");
    const std::size_t threads = resolve_threads(options.threads);
    const std::size_t m = pool.n_accepted;

    TestResult result;
    result.n_accepted = m;
    result.tau_obs = statistic.fn(observed.bits(), y.values());
    const double obs = std::abs(result.tau_obs);

    const bool keep = m <= options.max_materialized;
    const std::size_t chunk = keep ? m : std::size_t{1} << 20;
    std::vector<double> values(chunk);
    std::vector<std::uint8_t> matches(chunk);
    std::uint64_t hits = 0;
    bool observed_in_pool = false;
    if (keep) result.stat_distribution.reserve(m);
    for (std::size_t begin = 0; begin < m; begin += chunk) {
        const std::size_t end = std::min(m, begin + chunk);
        for_rows(pool, begin, end, threads, [&](std::size_t r, AssignmentView w) {
            values[r - begin] = statistic.fn(w, y.values());
            matches[r - begin] = std::equal(w.begin(), w.end(), observed.bits().begin());
        });
        for (std::size_t r = 0; r < end - begin; ++r) {
            hits += std::abs(values[r]) >= obs;
            observed_in_pool = observed_in_pool || matches[r];
        }
        if (keep) result.stat_distribution.insert(result.stat_distribution.end(), values.begin(),
                                                  values.begin() + static_cast<std::ptrdiff_t>(end - begin));
    }
    result.p_value = static_cast<double>(hits) / static_cast<double>(m);
    if (!observed_in_pool) {
        result.warning = "observed assignment is not in the accepted pool; the p-value is not "
                         "floored at 1/n_accepted";
    }
    return result;
}

FiducialInterval fiducial_interval(const Assignment& observed, const OutcomeVector& y,
                                   const RandomizationPool& pool, double alpha, const TestStatistic& statistic,
                                   const InferenceOptions& options) {
    if (!statistic.difference_in_means) {
        throw Error(ErrorKind::unsupported, "fiducial intervals need the difference-in-means statistic, got '" +
                                                statistic.name + "'");
    }
    check_inputs(observed, y, pool);
    const auto parts = linear_parts(observed, y, pool, resolve_threads(options.threads));
    return invert(parts, diff_in_means(observed.bits(), y.values()), alpha);
}

double shifted_pvalue(const Assignment& observed, const OutcomeVector& y, const RandomizationPool& pool,
                      double tau, const InferenceOptions& options) {
    check_inputs(observed, y, pool);
    const auto parts = linear_parts(observed, y, pool, resolve_threads(options.threads));
    return shifted_p(parts, diff_in_means(observed.bits(), y.values()), tau);
}

TestResult randomization_test(const Assignment& observed, const OutcomeVector& y,
                              const RandomizationPool& pool, std::optional<double> fi_alpha,
                              const TestStatistic& statistic, const InferenceOptions& options) {
    TestResult result = randomization_pvalue(observed, y, pool, statistic, options);
    if (fi_alpha) {
        result.alpha = *fi_alpha;
        result.fi = fiducial_interval(observed, y, pool, *fi_alpha, statistic, options);
    }
    return result;
}

std::vector<SweepRow> threshold_sweep(const CovariateMatrix& x, const DesignSpec& base,
                                      std::span<const double> probs, const OutcomeVector& y,
                                      const std::optional<Assignment>& fixed_observed,
                                      const SweepOptions& options) {
    std::vector<SweepRow> rows(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) rows[i].accept_prob = probs[i];

    std::optional<CandidateScores> scores;
    std::string shared_error;
    try {
        DesignSpec design = base;
        design.accept_prob = 1.0;
        scores = score_candidates(x, design, options.generation);
    } catch (const Error& e) {
        shared_error = e.what();
    }

    GenerationOptions select_options = options.generation;
    select_options.sink = nullptr;
    for (auto& row : rows) {
        if (!scores) {
            row.error = shared_error;
            continue;
        }
        try {
            const RandomizationPool pool = select_pool(*scores, row.accept_prob, select_options);
            Assignment observed;
            if (fixed_observed) {
                observed = *fixed_observed;
            } else if (pool.assignments) {
                const auto first = pool.assignments->row(0);
                observed = Assignment(std::vector<std::uint8_t>(first.begin(), first.end()));
            } else {
                observed = assignment_from_key(pool.keys.front(), pool.design.n_units, pool.design.n_treated);
            }
            const TestResult r = randomization_test(observed, y, pool, options.fi_alpha,
                                                    TestStatistic::diff_in_means(), options.inference);
            row.ok = true;
            row.n_accepted = pool.n_accepted;
            row.p_value = r.p_value;
            row.tau_obs = r.tau_obs;
            row.fi = r.fi;
        } catch (const Error& e) {
            row.error = e.what();
        }
    }
    return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
    out << "accept_prob,status,n_accepted,p_value,tau_obs,fi_lower,fi_upper,fi_width,error\n";
    for (const auto& r : rows) {
        out << format_double(r.accept_prob) << ',' << (r.ok ? "ok" : "failed") << ',';
        if (r.ok) {
            out << r.n_accepted << ',' << format_double(r.p_value) << ',' << format_double(r.tau_obs) << ',';
            if (r.fi) {
                out << format_double(r.fi->lower) << ',' << format_double(r.fi->upper) << ','
                    << format_double(r.fi->upper - r.fi->lower);
            } else {
                out << ",,";
            }
        } else {
            out << ",,,,,";
        }
        out << ',';
        // Quote the message; CSV escapes quotes by doubling them.
        if (!r.error.empty()) {
            out << '"';
            for (char c : r.error) {
                if (c == '"') out << '"';
                out << c;
            }
            out << '"';
        }
        out << '\n';
    }
}

} // namespace fastrr
