#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fastrr/balance.hpp"
#include "fastrr/inference.hpp"

namespace fastrr {

/// Header row plus rectangular numeric body. Rows are reported by file line
/// number (the header is row 1).
struct NumericTable {
    std::vector<std::string> columns;
    std::size_t rows = 0;
    std::vector<double> values; // row-major
};

/// Accepts LF or CRLF line endings. Throws ErrorKind::io for a missing file
/// and ErrorKind::parse for an empty file, a ragged row, or a cell that is
/// not a finite decimal.
NumericTable read_numeric_table(const std::filesystem::path& path);

CovariateMatrix parse_covariates(const std::filesystem::path& path);
/// Single-column file, e.g. header `y`.
OutcomeVector parse_outcomes(const std::filesystem::path& path);
/// Single-column file of 0/1 entries, e.g. header `w`.
Assignment parse_assignment(const std::filesystem::path& path);

void write_table(std::ostream& out, std::span<const std::string> columns, std::span<const double> values);
void write_covariates(const std::filesystem::path& path, const CovariateMatrix& x);
void write_column(const std::filesystem::path& path, const std::string& name, std::span<const double> values);
void write_assignment(const std::filesystem::path& path, const Assignment& w);

/// Writes via a temp file and rename; `body` fills the stream.
template <class Body>
void write_atomically(const std::filesystem::path& path, Body&& body);

} // namespace fastrr

#include <fstream>
#include <system_error>
#include <unistd.h>

#include "fastrr/error.hpp"

namespace fastrr {

template <class Body>
void write_atomically(const std::filesystem::path& path, Body&& body) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
        try {
            body(out);
        } catch (...) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw;
        }
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw Error(ErrorKind::io, "write to " + tmp.string() + " failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::io, "cannot move " + tmp.string() + " to " + path.string());
}

} // namespace fastrr
