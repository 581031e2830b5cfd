#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "fastrr/error.hpp"
#include "fastrr/generation.hpp"
#include "test_support.hpp"

using namespace fastrr;

namespace {

DesignSpec mc_design(std::size_t n, std::size_t t, std::uint64_t draws, double p, std::size_t batch,
                     std::uint64_t seed = 11) {
    DesignSpec d;
    d.n_units = n;
    d.n_treated = t;
    d.accept_prob = p;
    d.mode = GenerationMode::monte_carlo;
    d.max_draws = draws;
    d.batch_size = batch;
    d.root_seed = seed;
    d.storage = StorageMode::keys;
    return d;
}

DesignSpec exact_design(std::size_t n, std::size_t t, double p) {
    DesignSpec d;
    d.n_units = n;
    d.n_treated = t;
    d.accept_prob = p;
    d.mode = GenerationMode::exact;
    d.batch_size = 64;
    return d;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::internal;
}

// W and 1-W balance identically; score the lexicographically larger of the
// pair so the oracle sees exact ties the way the engine does.
double symmetric_oracle_stat(const CovariateMatrix& x, const BalancePrecision& p, const Assignment& w) {
    const Assignment c = w.complement();
    const auto& pick = std::lexicographical_compare(w.bits().begin(), w.bits().end(), c.bits().begin(),
                                                    c.bits().end())
                           ? c
                           : w;
    return mahalanobis_stat(x, p, pick.bits());
}

// Indices of the k smallest values, ties to the lower index, ascending.
std::vector<std::uint64_t> bottom_k(const std::vector<double>& v, std::uint64_t k) {
    std::vector<std::uint64_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<std::uint64_t> draws_of(const RandomizationPool& pool) {
    std::vector<std::uint64_t> out;
    for (const auto& k : pool.keys) out.push_back(k.draw_index);
    return out;
}

} // namespace

TEST_CASE("binomial coefficients") {
    CHECK(binomial(4, 2) == 6u);
    CHECK(binomial(10, 5) == 252u);
    CHECK(binomial(20, 10) == 184756u);
    CHECK(binomial(8, 4) == 70u);
    CHECK(binomial(5, 0) == 1u);
    CHECK(binomial(3, 5) == 0u);
    CHECK(binomial(62, 31) == 465428353255261088ULL);
    CHECK_FALSE(binomial(100, 50).has_value());
}

TEST_CASE("unrank and successor follow lexicographic order") {
    const auto oracle = test::all_assignments(7, 3);
    REQUIRE(oracle.size() == 35);
    std::vector<std::uint32_t> combo(3), stepped(3);
    unrank_combination(7, 0, stepped);
    for (std::uint64_t r = 0; r < oracle.size(); ++r) {
        unrank_combination(7, r, combo);
        CHECK(combo == stepped);
        std::vector<std::uint8_t> row(7, 0);
        for (auto c : combo) row[c] = 1;
        CHECK(row == oracle[r]);
        const bool more = next_combination(7, stepped);
        CHECK(more == (r + 1 < oracle.size()));
    }
}

TEST_CASE("accepted count law") {
    CHECK(accepted_count(0.2, 252) == 50);
    CHECK(accepted_count(0.01, 100) == 1);
    CHECK(accepted_count(0.02, 100) == 2);
    CHECK(accepted_count(1e-9, 5) == 1);
    CHECK(accepted_count(0.29, 100) == 29);
    CHECK(accepted_count(1.0, 6) == 6);
    CHECK(accepted_count(0.05, 50'000) == 2500);
    CHECK(accepted_count(0.2, 184756) == 36951);
}

TEST_CASE("design validation") {
    const auto x = test::gaussian_covariates(10, 2, 1);
    auto d = mc_design(10, 5, 100, 0.1, 10);
    d.accept_prob = 0.0;
    CHECK(kind_of([&] { monte_carlo_pool(x, d); }) == ErrorKind::invalid_design);
    d.accept_prob = 1.5;
    CHECK(kind_of([&] { monte_carlo_pool(x, d); }) == ErrorKind::invalid_design);
    d = mc_design(10, 5, 0, 0.1, 1);
    CHECK(kind_of([&] { monte_carlo_pool(x, d); }) == ErrorKind::invalid_design);
    d = mc_design(10, 5, 100, 0.1, 101);
    CHECK(kind_of([&] { monte_carlo_pool(x, d); }) == ErrorKind::invalid_design);
    d = mc_design(10, 10, 100, 0.1, 10);
    CHECK(kind_of([&] { monte_carlo_pool(x, d); }) == ErrorKind::invalid_design);
    d = mc_design(12, 5, 100, 0.1, 10);
    CHECK(kind_of([&] { monte_carlo_pool(x, d); }) == ErrorKind::shape);
    CHECK(kind_of([&] { enumerate_exact(x, mc_design(10, 5, 100, 0.1, 10)); }) == ErrorKind::invalid_design);

    const auto big = test::gaussian_covariates(40, 2, 1);
    CHECK(kind_of([&] { enumerate_exact(big, exact_design(40, 20, 0.1)); }) == ErrorKind::enumeration_too_large);
    GenerationOptions capped;
    capped.enumeration_cap = 100;
    CHECK(kind_of([&] { enumerate_exact(x, exact_design(10, 5, 0.1), capped); }) ==
          ErrorKind::enumeration_too_large);
}

TEST_CASE("exact enumeration n=4, t=2 with full acceptance") {
    const auto x = test::gaussian_covariates(4, 1, 2);
    const auto pool = enumerate_exact(x, exact_design(4, 2, 1.0));
    CHECK(pool.n_candidates == 6);
    CHECK(pool.n_accepted == 6);
    CHECK(pool.keys.empty());
    REQUIRE(pool.assignments);
    const auto oracle = test::all_assignments(4, 2);
    for (std::size_t r = 0; r < 6; ++r) {
        const auto row = pool.assignments->row(r);
        CHECK(std::vector<std::uint8_t>(row.begin(), row.end()) == oracle[r]);
    }
    CHECK(pool_summary(pool).acceptance_rate == 1.0);
}

TEST_CASE("exact enumeration n=10, t=5 keeps the 50 smallest") {
    const auto x = test::gaussian_covariates(10, 3, 3);
    const auto pool = enumerate_exact(x, exact_design(10, 5, 0.2));
    CHECK(pool.n_candidates == 252);
    CHECK(pool.n_accepted == 50);

    const auto all = test::all_assignments(10, 5);
    std::vector<double> oracle_stats;
    for (const auto& w : all) oracle_stats.push_back(test::oracle_mahalanobis(x, w));
    const auto expected = bottom_k(oracle_stats, 50);
    std::vector<std::vector<std::uint8_t>> want, got;
    for (auto i : expected) want.push_back(all[i]);
    for (std::size_t r = 0; r < pool.n_accepted; ++r) {
        const auto row = pool.assignments->row(r);
        got.emplace_back(row.begin(), row.end());
    }
    CHECK(got == want);
    for (std::size_t r = 0; r < 50; ++r) {
        CHECK(pool.stats[r] <= pool.threshold_value);
        CHECK(test::close_rel(pool.stats[r], oracle_stats[expected[r]], 1e-9));
    }
}

TEST_CASE("exact enumeration n=20, t=10 visits every subset") {
    const auto x = test::gaussian_covariates(20, 4, 4);
    const auto scores = score_candidates(x, exact_design(20, 10, 0.01));
    CHECK(scores.stats.size() == 184756);
}

TEST_CASE("Monte Carlo keeps the best draw at 1%") {
    const auto x = test::gaussian_covariates(16, 3, 5);
    const auto design = mc_design(16, 8, 100, 0.01, 30);
    const auto pool = monte_carlo_pool(x, design);
    REQUIRE(pool.n_accepted == 1);
    const auto p = precompute_precision(x, PrecisionMode::exact);
    std::vector<double> oracle;
    for (std::uint64_t i = 0; i < 100; ++i) {
        oracle.push_back(mahalanobis_stat(x, p, assignment_from_key({design.root_seed, i}, 16, 8).bits()));
    }
    const auto best = std::min_element(oracle.begin(), oracle.end()) - oracle.begin();
    CHECK(pool.keys[0] == AssignmentKey{design.root_seed, static_cast<std::uint64_t>(best)});
    CHECK(pool.threshold_value == pool.stats[0]);
}

TEST_CASE("identical statistics are broken by draw order") {
    const CovariateMatrix x(10, 1, std::vector<double>(10, 3.0));
    auto design = mc_design(10, 5, 100, 0.02, 16);
    design.precision_mode = PrecisionMode::diagonal;
    const auto pool = monte_carlo_pool(x, design);
    CHECK(draws_of(pool) == std::vector<std::uint64_t>{0, 1});
    CHECK(pool.threshold_value == 0.0);
}

TEST_CASE("Monte Carlo selection matches a sort oracle for any batch size") {
    const auto x = test::gaussian_covariates(12, 4, 6);
    const auto p = precompute_precision(x, PrecisionMode::exact);
    constexpr std::uint64_t M = 50'000;
    std::vector<double> oracle(M);
    for (std::uint64_t i = 0; i < M; ++i) {
        oracle[i] = symmetric_oracle_stat(x, p, assignment_from_key({11, i}, 12, 6));
    }
    const auto expected = bottom_k(oracle, 2500);

    std::optional<RandomizationPool> first;
    for (std::size_t batch : {std::size_t{1}, std::size_t{7}, std::size_t{1000}, std::size_t{50'000}}) {
        for (std::size_t threads : {std::size_t{1}, std::size_t{3}}) {
            GenerationOptions opts;
            opts.threads = threads;
            auto pool = monte_carlo_pool(x, mc_design(12, 6, M, 0.05, batch), opts);
            INFO("batch " << batch << " threads " << threads);
            CHECK(pool.n_accepted == 2500);
            CHECK(draws_of(pool) == expected);
            pool.design.batch_size = 0;
            if (!first) {
                first = pool;
            } else {
                CHECK(pool == *first);
            }
        }
    }
}

TEST_CASE("scalar kernel path gives the same pool") {
    const auto x = test::gaussian_covariates(30, 6, 7);
    const auto design = mc_design(30, 12, 3000, 0.03, 500);
    GenerationOptions scalar;
    scalar.kernel = KernelPath::scalar;
    CHECK(monte_carlo_pool(x, design, scalar) == monte_carlo_pool(x, design));
    CHECK(enumerate_exact(test::gaussian_covariates(9, 2, 1), exact_design(9, 4, 0.3), scalar) ==
          enumerate_exact(test::gaussian_covariates(9, 2, 1), exact_design(9, 4, 0.3)));
}

TEST_CASE("storage modes and regeneration") {
    const auto x = test::gaussian_covariates(25, 3, 8);
    auto design = mc_design(25, 10, 4000, 0.05, 300);
    const auto keys_pool = monte_carlo_pool(x, design);
    CHECK_FALSE(keys_pool.assignments);
    design.storage = StorageMode::full;
    const auto full_pool = monte_carlo_pool(x, design);
    design.storage = StorageMode::both;
    const auto both_pool = monte_carlo_pool(x, design);
    REQUIRE(full_pool.assignments);
    const auto regenerated = regenerate_assignments(keys_pool);
    CHECK(regenerated == *full_pool.assignments);
    CHECK(*both_pool.assignments == *full_pool.assignments);
    CHECK(keys_pool.keys == full_pool.keys);

    const auto p = precompute_precision(x, PrecisionMode::exact);
    for (std::size_t r = 0; r < regenerated.rows(); ++r) {
        std::size_t treated = 0;
        for (auto b : regenerated.row(r)) treated += b;
        CHECK(treated == 10);
        CHECK(test::close_rel(mahalanobis_stat(x, p, regenerated.row(r)), keys_pool.stats[r], 1e-10));
    }

    RandomizationPool single = keys_pool;
    single.keys.resize(1);
    const auto one = regenerate_assignments(single);
    CHECK(one.rows() == 1);

    const auto exact_pool = enumerate_exact(test::gaussian_covariates(8, 2, 1), exact_design(8, 4, 0.5));
    CHECK(kind_of([&] { regenerate_assignments(exact_pool); }) == ErrorKind::unsupported);
}

TEST_CASE("memory cap on materialised pools") {
    const auto x = test::gaussian_covariates(50, 2, 9);
    auto design = mc_design(50, 25, 2000, 0.5, 100);
    design.storage = StorageMode::full;
    GenerationOptions tight;
    tight.max_assignment_bytes = 1000;
    CHECK(kind_of([&] { monte_carlo_pool(x, design, tight); }) == ErrorKind::memory_cap);
    design.storage = StorageMode::keys;
    CHECK_NOTHROW(monte_carlo_pool(x, design, tight));
}

TEST_CASE("property: acceptance law and balance dominance") {
    const auto x = test::gaussian_covariates(14, 3, 10);
    KeyedGenerator g({10, 10});
    for (int trial = 0; trial < 25; ++trial) {
        const std::uint64_t M = 1 + g.bounded(3000);
        const double p = std::max(1e-4, g.uniform());
        const std::size_t batch = 1 + g.bounded(M);
        auto design = mc_design(14, 7, M, p, batch, 100 + trial);
        const auto scores = score_candidates(x, design);
        const auto pool = select_pool(scores, p);
        INFO("M " << M << " p " << p);
        CHECK(pool.n_accepted == std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(p * M + 1e-9))));
        const auto drawn = draws_of(pool);
        std::set<std::uint64_t> accepted(drawn.begin(), drawn.end());
        double max_acc = -1, min_rej = INFINITY;
        for (std::uint64_t i = 0; i < M; ++i) {
            if (accepted.count(i)) {
                max_acc = std::max(max_acc, scores.stats[i]);
            } else {
                min_rej = std::min(min_rej, scores.stats[i]);
            }
        }
        CHECK(max_acc == pool.threshold_value);
        CHECK(max_acc <= min_rej);
    }
}

TEST_CASE("pool summary") {
    RandomizationPool pool;
    pool.stats = {0.3, 0.1, 0.2};
    pool.n_accepted = 3;
    pool.n_candidates = 30;
    const auto s = pool_summary(pool);
    CHECK(s.min == 0.1);
    CHECK(s.max == 0.3);
    CHECK(s.mean == doctest::Approx(0.2));
    CHECK(s.median == 0.2);
    CHECK(s.q1 == doctest::Approx(0.15));
    CHECK(s.q3 == doctest::Approx(0.25));
    CHECK(s.acceptance_rate == doctest::Approx(0.1));
}

TEST_CASE("pool summary on a 20-unit Monte Carlo run") {
    const auto x = test::gaussian_covariates(20, 5, 12345);
    auto design = mc_design(20, 10, 100'000, 0.01, 10'000);
    const auto s = pool_summary(monte_carlo_pool(x, design));
    CHECK(s.n_accepted == 1000);
    CHECK(s.n_units == 20);
    CHECK(s.n_candidates == 100'000);
    CHECK(s.min <= s.q1);
    CHECK(s.q3 <= s.max);
    CHECK(s.max == s.threshold_value);
}

TEST_CASE("custom balance hook replaces the Mahalanobis statistic") {
    const auto x = test::gaussian_covariates(10, 2, 13);
    GenerationOptions opts;
    opts.custom_balance = [](AssignmentView w) { return static_cast<double>(w[0] + w[1] + w[2]); };
    const auto pool = monte_carlo_pool(x, mc_design(10, 5, 500, 0.05, 50), opts);
    CHECK(pool.n_accepted == 25);
    for (double s : pool.stats) CHECK(s == 0.0);
    const auto rows = regenerate_assignments(pool);
    for (std::size_t r = 0; r < rows.rows(); ++r) CHECK(rows.row(r)[0] + rows.row(r)[1] + rows.row(r)[2] == 0);
}

namespace {

struct RecordingSink : PoolSink {
    std::uint64_t header_accepted = 0;
    std::vector<double> stats;
    std::vector<std::vector<std::uint8_t>> rows;
    bool finished = false;
    void begin(const RandomizationPool& h) override { header_accepted = h.n_accepted; }
    void row(const AssignmentKey*, double stat, AssignmentView bits) override {
        stats.push_back(stat);
        rows.emplace_back(bits.begin(), bits.end());
    }
    void finish() override { finished = true; }
};

} // namespace

TEST_CASE("sink receives rows instead of the pool holding them") {
    const auto x = test::gaussian_covariates(20, 2, 14);
    auto design = mc_design(20, 10, 1000, 0.1, 100);
    design.storage = StorageMode::full;
    RecordingSink sink;
    GenerationOptions opts;
    opts.sink = &sink;
    const auto streamed = monte_carlo_pool(x, design, opts);
    const auto held = monte_carlo_pool(x, design);
    CHECK_FALSE(streamed.assignments);
    CHECK(sink.finished);
    CHECK(sink.header_accepted == 100);
    CHECK(sink.stats == held.stats);
    REQUIRE(sink.rows.size() == 100);
    for (std::size_t r = 0; r < 100; ++r) {
        CHECK(sink.rows[r] == std::vector<std::uint8_t>(held.assignments->row(r).begin(), held.assignments->row(r).end()));
    }
}
