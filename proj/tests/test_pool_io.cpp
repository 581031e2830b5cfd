#include <doctest.h>

#include <charconv>
#include <cmath>
#include <limits>

#include "fastrr/error.hpp"
#include "fastrr/pool_io.hpp"
#include "test_support.hpp"

using namespace fastrr;

namespace {

RandomizationPool make_pool(StorageMode storage, GenerationMode mode = GenerationMode::monte_carlo) {
    DesignSpec d;
    d.n_units = 12;
    d.n_treated = 5;
    d.accept_prob = 0.1;
    d.mode = mode;
    d.max_draws = 400;
    d.batch_size = 64;
    d.root_seed = 77;
    d.storage = storage;
    return generate_randomizations(test::gaussian_covariates(12, 3, 21), d);
}

ErrorKind read_kind(const std::filesystem::path& p) {
    try {
        read_pool(p);
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::internal;
}

std::string replace_line(const std::string& text, std::size_t index, const std::string& repl) {
    std::istringstream in(text);
    std::string line, out;
    for (std::size_t i = 0; std::getline(in, line); ++i) out += (i == index ? repl : line) + "\n";
    return out;
}

} // namespace

TEST_CASE("format_double round-trips") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(2.0) == "2");
    CHECK(format_double(-0.5) == "-0.5");
    KeyedGenerator g({5, 5});
    for (int i = 0; i < 1000; ++i) {
        const double v = std::ldexp(g.uniform() - 0.5, static_cast<int>(g.bounded(200)) - 100);
        const auto s = format_double(v);
        double back = 0;
        std::from_chars(s.data(), s.data() + s.size(), back);
        CHECK(back == v);
    }
}

TEST_CASE("pools round-trip through files in every storage mode") {
    const auto dir = test::temp_dir();
    for (auto storage : {StorageMode::keys, StorageMode::full, StorageMode::both}) {
        auto pool = make_pool(storage);
        const auto path = dir / ("rt_" + std::string(to_string(storage)) + ".csv");
        write_pool(pool, path);
        pool.design.batch_size = 1;
        if (storage == StorageMode::full) pool.keys.clear();
        INFO(to_string(storage));
        CHECK(read_pool(path) == pool);
    }
    auto exact = make_pool(StorageMode::full, GenerationMode::exact);
    CHECK(exact.keys.empty());
    write_pool(exact, dir / "rt_exact.csv");
    exact.design.batch_size = 1;
    CHECK(read_pool(dir / "rt_exact.csv") == exact);
}

TEST_CASE("pool file layout") {
    const auto path = test::temp_dir() / "layout.csv";
    write_pool(make_pool(StorageMode::keys), path);
    const auto text = test::slurp(path);
    std::istringstream in(text);
    std::string l1, l2, l3, l4;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    std::getline(in, l4);
    CHECK(l1 == "# fastrr-pool v1");
    CHECK(l2.starts_with("# design {"));
    CHECK(l2.find("batch_size") == std::string::npos);
    CHECK(l2.find("\"n_accepted\":40") != std::string::npos);
    CHECK(l3 == "key_seed,key_draw,stat");
    CHECK(l4.starts_with("77,"));

    write_pool(make_pool(StorageMode::both), path);
    std::istringstream in2(test::slurp(path));
    std::getline(in2, l1);
    std::getline(in2, l1);
    std::getline(in2, l1);
    CHECK(l1 == "key_seed,key_draw,stat,w_1,w_2,w_3,w_4,w_5,w_6,w_7,w_8,w_9,w_10,w_11,w_12");
}

TEST_CASE("streamed and materialised writes are byte-identical") {
    const auto dir = test::temp_dir();
    auto x = test::gaussian_covariates(12, 3, 21);
    auto design = make_pool(StorageMode::both).design;
    PoolFileWriter sink(dir / "streamed.csv");
    GenerationOptions opts;
    opts.sink = &sink;
    monte_carlo_pool(x, design, opts);
    write_pool(monte_carlo_pool(x, design), dir / "held.csv");
    CHECK(test::slurp(dir / "streamed.csv") == test::slurp(dir / "held.csv"));
}

TEST_CASE("an unfinished writer leaves nothing behind") {
    const auto dir = test::temp_dir() / "abandon";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        PoolFileWriter w(dir / "pool.csv");
        w.begin(make_pool(StorageMode::keys));
    }
    CHECK(std::filesystem::is_empty(dir));
}

TEST_CASE("keys-only pools cannot be written as full") {
    auto pool = make_pool(StorageMode::keys);
    pool.design.storage = StorageMode::full;
    CHECK_THROWS_AS(write_pool(pool, test::temp_dir() / "never.csv"), Error);
}

TEST_CASE("malformed pool files are rejected") {
    const auto dir = test::temp_dir();
    CHECK(read_kind(dir / "does_not_exist.csv") == ErrorKind::io);

    write_pool(make_pool(StorageMode::both), dir / "good.csv");
    const auto good = test::slurp(dir / "good.csv");
    const auto bad = dir / "bad.csv";

    test::spit(bad, replace_line(good, 0, "# something else"));
    CHECK(read_kind(bad) == ErrorKind::parse);
    test::spit(bad, replace_line(good, 1, "# design {not json"));
    CHECK(read_kind(bad) == ErrorKind::parse);
    test::spit(bad, replace_line(good, 2, "stat,w_1"));
    CHECK(read_kind(bad) == ErrorKind::parse);

    std::istringstream in(good);
    std::string l, row;
    for (int i = 0; i < 4; ++i) std::getline(in, row);
    const auto last_comma = row.rfind(',');
    std::string flipped = row;
    flipped[last_comma + 1] = flipped[last_comma + 1] == '0' ? '1' : '0';
    test::spit(bad, replace_line(good, 3, flipped));
    CHECK(read_kind(bad) == ErrorKind::parse);
    std::string two = row;
    two[last_comma + 1] = '2';
    test::spit(bad, replace_line(good, 3, two));
    CHECK(read_kind(bad) == ErrorKind::parse);
    test::spit(bad, replace_line(good, 3, row + ",1"));
    CHECK(read_kind(bad) == ErrorKind::parse);
    test::spit(bad, replace_line(good, 3, "x" + row));
    CHECK(read_kind(bad) == ErrorKind::parse);

    test::spit(bad, good.substr(0, good.rfind('\n', good.size() - 2) + 1));
    CHECK(read_kind(bad) == ErrorKind::parse);
    test::spit(bad, good + row + "\n");
    CHECK(read_kind(bad) == ErrorKind::parse);
}

TEST_CASE("CRLF pool files read the same") {
    const auto dir = test::temp_dir();
    write_pool(make_pool(StorageMode::keys), dir / "lf.csv");
    std::string text = test::slurp(dir / "lf.csv"), crlf;
    for (char c : text) {
        if (c == '\n') crlf += '\r';
        crlf += c;
    }
    test::spit(dir / "crlf.csv", crlf);
    CHECK(read_pool(dir / "crlf.csv") == read_pool(dir / "lf.csv"));
}
