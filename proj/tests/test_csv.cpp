#include <doctest.h>

#include <algorithm>

#include "fastrr/csv.hpp"
#include "fastrr/error.hpp"
#include "test_support.hpp"

using namespace fastrr;

namespace {

std::string parse_message(const std::filesystem::path& p) {
    try {
        parse_covariates(p);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
        return e.what();
    }
    FAIL("expected a parse error");
    return {};
}

} // namespace

TEST_CASE("covariate file parses into a matrix") {
    const auto p = test::temp_dir() / "x3.csv";
    test::spit(p, "x1,x2\n1.5,2\n-3,4e-1\n0,7\n");
    const auto x = parse_covariates(p);
    CHECK(x.n_units() == 3);
    CHECK(x.n_covariates() == 2);
    CHECK(x(1, 0) == -3.0);
    CHECK(x(1, 1) == 0.4);
    CHECK(x.names() == std::vector<std::string>{"x1", "x2"});
}

TEST_CASE("non-finite cells name their location") {
    const auto p = test::temp_dir() / "nan.csv";
    test::spit(p, "x1,x2\nNaN,1\n2,3\n");
    const auto msg = parse_message(p);
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("column \"x1\"") != std::string::npos);
    test::spit(p, "x1,x2\n1,1\n2,abc\n");
    CHECK(parse_message(p).find("row 3, column \"x2\"") != std::string::npos);
    test::spit(p, "x1,x2\n1,inf\n");
    CHECK(parse_message(p).find("row 2") != std::string::npos);
}

TEST_CASE("CRLF and LF files give identical matrices") {
    const auto dir = test::temp_dir();
    test::spit(dir / "lf.csv", "a,b\n1,2\n3,4\n");
    test::spit(dir / "crlf.csv", "a,b\r\n1,2\r\n3,4\r\n");
    const auto lf = parse_covariates(dir / "lf.csv");
    const auto crlf = parse_covariates(dir / "crlf.csv");
    CHECK(std::ranges::equal(lf.values(), crlf.values()));
    CHECK(lf.names() == crlf.names());
}

TEST_CASE("malformed tables are rejected") {
    const auto p = test::temp_dir() / "bad.csv";
    test::spit(p, "x1,x2\n1,2\n3\n");
    CHECK(parse_message(p).find("row 3") != std::string::npos);
    test::spit(p, "");
    parse_message(p);
    test::spit(p, "x1,x2\n");
    parse_message(p);
    try {
        parse_covariates(test::temp_dir() / "missing.csv");
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
}

TEST_CASE("outcome and assignment columns") {
    const auto dir = test::temp_dir();
    test::spit(dir / "y.csv", "y\n1.5\n-2\n");
    CHECK(parse_outcomes(dir / "y.csv").size() == 2);
    test::spit(dir / "w.csv", "w\n1\n0\n1\n");
    CHECK(parse_assignment(dir / "w.csv").n_treated() == 2);
    test::spit(dir / "w2.csv", "w\n1\n0.5\n");
    CHECK_THROWS_AS(parse_assignment(dir / "w2.csv"), Error);
    test::spit(dir / "y2.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(parse_outcomes(dir / "y2.csv"), Error);
}

TEST_CASE("written tables read back exactly") {
    const auto dir = test::temp_dir();
    const auto x = test::gaussian_covariates(25, 4, 17);
    write_covariates(dir / "x_rt.csv", x);
    const auto back = parse_covariates(dir / "x_rt.csv");
    CHECK(std::ranges::equal(back.values(), x.values()));
    CHECK(back.names() == x.names());
    const Assignment w(std::vector<std::uint8_t>{0, 1, 1, 0});
    write_assignment(dir / "w_rt.csv", w);
    CHECK(parse_assignment(dir / "w_rt.csv") == w);
}
