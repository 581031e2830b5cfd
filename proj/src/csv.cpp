#include "fastrr/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "fastrr/pool_io.hpp"

namespace fastrr {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    for (;;) {
        const auto comma = line.find(',');
        out.push_back(trim(line.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        line.remove_prefix(comma + 1);
    }
    return out;
}

std::string unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
}

} // namespace

NumericTable read_numeric_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());

    NumericTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split(line);
        if (!have_header) {
            for (auto f : fields) table.columns.push_back(unquote(f));
            have_header = true;
            continue;
        }
        if (fields.size() != table.columns.size()) {
            throw Error(ErrorKind::parse, path.string() + ": row " + std::to_string(line_no) + " has " +
                                              std::to_string(fields.size()) + " cells, header has " +
                                              std::to_string(table.columns.size()));
        }
        for (std::size_t j = 0; j < fields.size(); ++j) {
            const auto f = fields[j];
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || res.ec != std::errc{} || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw Error(ErrorKind::parse, path.string() + ": row " + std::to_string(line_no) + ", column \"" +
                                                  table.columns[j] + "\": '" + std::string(f) +
                                                  "' is not a finite number");
            }
            table.values.push_back(v);
        }
        ++table.rows;
    }
    if (!have_header) throw Error(ErrorKind::parse, path.string() + ": file is empty");
    if (table.rows == 0) throw Error(ErrorKind::parse, path.string() + ": no data rows");
    return table;
}

CovariateMatrix parse_covariates(const std::filesystem::path& path) {
    auto t = read_numeric_table(path);
    const std::size_t d = t.columns.size();
    return CovariateMatrix(t.rows, d, std::move(t.values), std::move(t.columns));
}

namespace {

NumericTable single_column(const std::filesystem::path& path) {
    auto t = read_numeric_table(path);
    if (t.columns.size() != 1) {
        throw Error(ErrorKind::parse, path.string() + ": expected one column, found " +
                                          std::to_string(t.columns.size()));
    }
    return t;
}

} // namespace

OutcomeVector parse_outcomes(const std::filesystem::path& path) {
    return OutcomeVector(single_column(path).values);
}

Assignment parse_assignment(const std::filesystem::path& path) {
    const auto t = single_column(path);
    std::vector<std::uint8_t> bits;
    bits.reserve(t.rows);
    for (std::size_t i = 0; i < t.rows; ++i) {
        const double v = t.values[i];
        if (v != 0.0 && v != 1.0) {
            throw Error(ErrorKind::parse, path.string() + ": row " + std::to_string(i + 2) +
                                              " is not 0 or 1");
        }
        bits.push_back(static_cast<std::uint8_t>(v));
    }
    return Assignment(std::move(bits));
}

void write_table(std::ostream& out, std::span<const std::string> columns, std::span<const double> values) {
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << columns[j];
    out << '\n';
    const std::size_t d = columns.size();
    for (std::size_t k = 0; k < values.size(); ++k) {
        out << format_double(values[k]) << ((k + 1) % d == 0 ? '\n' : ',');
    }
}

void write_covariates(const std::filesystem::path& path, const CovariateMatrix& x) {
    write_atomically(path, [&](std::ostream& out) { write_table(out, x.names(), x.values()); });
}

void write_column(const std::filesystem::path& path, const std::string& name, std::span<const double> values) {
    const std::string columns[] = {name};
    write_atomically(path, [&](std::ostream& out) { write_table(out, columns, values); });
}

void write_assignment(const std::filesystem::path& path, const Assignment& w) {
    write_atomically(path, [&](std::ostream& out) {
        out << "w\n";
        for (auto b : w.bits()) out << static_cast<int>(b) << '\n';
    });
}

} // namespace fastrr
