#include "fastrr/pool_io.hpp"

#include <charconv>
#include <system_error>
#include <unistd.h>

#include <json.hpp>

#include "fastrr/error.hpp"

namespace fastrr {

using nlohmann::json;

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

void append_uint(std::string& s, std::uint64_t v) {
    char buf[24];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    s.append(buf, res.ptr);
}

void append_double(std::string& s, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    s.append(buf, res.ptr);
}

std::string header_columns(StorageMode storage, std::size_t n) {
    std::string h;
    if (storage != StorageMode::full) h += "key_seed,key_draw,";
    h += "stat";
    if (storage != StorageMode::keys) {
        for (std::size_t i = 1; i <= n; ++i) {
            h += ",w_";
            h += std::to_string(i);
        }
    }
    return h;
}

} // namespace

std::string design_header_json(const RandomizationPool& pool) {
    const auto& d = pool.design;
    // batch_size is an execution detail and does not change pool contents, so
    // it is left out: the same design must produce the same file.
    json j = {
        {"n_units", d.n_units},
        {"n_treated", d.n_treated},
        {"accept_prob", d.accept_prob},
        {"mode", std::string(to_string(d.mode))},
        {"max_draws", d.max_draws},
        {"precision_mode", std::string(to_string(d.precision_mode))},
        {"root_seed", d.root_seed},
        {"storage", std::string(to_string(d.storage))},
        {"threshold_value", pool.threshold_value},
        {"n_candidates", pool.n_candidates},
        {"n_accepted", pool.n_accepted},
    };
    return j.dump();
}

PoolFileWriter::PoolFileWriter(std::filesystem::path path) : path_(std::move(path)) {
    tmp_ = path_;
    tmp_ += ".tmp." + std::to_string(::getpid());
}

PoolFileWriter::~PoolFileWriter() {
    if (!committed_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(tmp_, ec);
    }
}

void PoolFileWriter::begin(const RandomizationPool& header) {
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) {
        throw Error(ErrorKind::io, "cannot open " + tmp_.string() + " for writing");
    }
    storage_ = header.design.storage;
    out_ << kPoolMagic << '\n'
         << "# design " << design_header_json(header) << '\n'
         << header_columns(storage_, header.design.n_units) << '\n';
}

void PoolFileWriter::row(const AssignmentKey* key, double stat, AssignmentView bits) {
    line_.clear();
    if (storage_ != StorageMode::full) {
        if (!key) throw Error(ErrorKind::internal, "keys storage without a key");
        append_uint(line_, key->root_seed);
        line_ += ',';
        append_uint(line_, key->draw_index);
        line_ += ',';
    }
    append_double(line_, stat);
    if (storage_ != StorageMode::keys) {
        for (auto b : bits) {
            line_ += ',';
            line_ += static_cast<char>('0' + b);
        }
    }
    line_ += '\n';
    out_.write(line_.data(), static_cast<std::streamsize>(line_.size()));
}

void PoolFileWriter::finish() {
    out_.flush();
    if (!out_) {
        throw Error(ErrorKind::io, "write to " + tmp_.string() + " failed");
    }
    out_.close();
    std::error_code ec;
    std::filesystem::rename(tmp_, path_, ec);
    if (ec) {
        throw Error(ErrorKind::io, "cannot move " + tmp_.string() + " to " + path_.string() + ": " +
                                       ec.message());
    }
    committed_ = true;
}

void write_pool(const RandomizationPool& pool, const std::filesystem::path& path) {
    const bool need_rows = pool.design.storage != StorageMode::keys;
    if (need_rows && !pool.assignments) {
        throw Error(ErrorKind::unsupported, "pool has no materialised assignments to write");
    }
    if (pool.design.storage != StorageMode::full && pool.keys.size() != pool.stats.size()) {
        throw Error(ErrorKind::unsupported, "pool has no keys to write");
    }
    PoolFileWriter writer(path);
    writer.begin(pool);
    for (std::size_t r = 0; r < pool.stats.size(); ++r) {
        const AssignmentKey* key = pool.keys.empty() ? nullptr : &pool.keys[r];
        writer.row(key, pool.stats[r], need_rows ? pool.assignments->row(r) : AssignmentView{});
    }
    writer.finish();
}

namespace {

[[noreturn]] void bad_pool(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(line) + ": " + what);
}

template <class T>
T parse_number(std::string_view field, const std::filesystem::path& path, std::size_t line) {
    T v{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        bad_pool(path, line, "malformed number '" + std::string(field) + "'");
    }
    return v;
}

} // namespace

RandomizationPool read_pool(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open pool file " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };

    if (!next_line() || line != kPoolMagic) bad_pool(path, 1, "missing '# fastrr-pool v1' marker");
    constexpr std::string_view design_prefix = "# design ";
    if (!next_line() || !line.starts_with(design_prefix)) bad_pool(path, line_no, "missing design line");

    RandomizationPool pool;
    try {
        const json j = json::parse(line.substr(design_prefix.size()));
        auto& d = pool.design;
        d.n_units = j.at("n_units").get<std::size_t>();
        d.n_treated = j.at("n_treated").get<std::size_t>();
        d.accept_prob = j.at("accept_prob").get<double>();
        d.mode = parse_generation_mode(j.at("mode").get<std::string>());
        d.max_draws = j.at("max_draws").get<std::uint64_t>();
        d.precision_mode = parse_precision_mode(j.at("precision_mode").get<std::string>());
        d.root_seed = j.at("root_seed").get<std::uint64_t>();
        d.storage = parse_storage_mode(j.at("storage").get<std::string>());
        d.batch_size = 1;
        pool.threshold_value = j.at("threshold_value").get<double>();
        pool.n_candidates = j.at("n_candidates").get<std::uint64_t>();
        pool.n_accepted = j.at("n_accepted").get<std::uint64_t>();
    } catch (const json::exception& e) {
        bad_pool(path, line_no, std::string("bad design header: ") + e.what());
    } catch (const Error& e) {
        bad_pool(path, line_no, e.what());
    }
    const auto& d = pool.design;
    try {
        validate_design_counts(d.n_units, d.n_treated);
    } catch (const Error& e) {
        bad_pool(path, line_no, e.what());
    }

    if (!next_line() || line != header_columns(d.storage, d.n_units)) {
        bad_pool(path, line_no, "column header does not match storage '" + std::string(to_string(d.storage)) +
                                    "' with " + std::to_string(d.n_units) + " units");
    }
    const bool has_keys = d.storage != StorageMode::full;
    const bool has_rows = d.storage != StorageMode::keys;
    if (has_rows) pool.assignments.emplace(pool.n_accepted, d.n_units);

    std::size_t r = 0;
    while (next_line()) {
        if (line.empty()) continue;
        if (r >= pool.n_accepted) bad_pool(path, line_no, "more rows than n_accepted");
        std::string_view rest = line;
        auto take = [&]() -> std::string_view {
            if (rest.data() == nullptr) bad_pool(path, line_no, "too few columns");
            const auto comma = rest.find(',');
            std::string_view field = rest.substr(0, comma);
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
            return field;
        };
        if (has_keys) {
            AssignmentKey key;
            key.root_seed = parse_number<std::uint64_t>(take(), path, line_no);
            key.draw_index = parse_number<std::uint64_t>(take(), path, line_no);
            pool.keys.push_back(key);
        }
        pool.stats.push_back(parse_number<double>(take(), path, line_no));
        if (has_rows) {
            auto bits = pool.assignments->row(r);
            std::size_t treated = 0;
            for (std::size_t i = 0; i < d.n_units; ++i) {
                const auto f = take();
                if (f != "0" && f != "1") bad_pool(path, line_no, "assignment entries must be 0 or 1");
                bits[i] = static_cast<std::uint8_t>(f[0] - '0');
                treated += bits[i];
            }
            if (treated != d.n_treated) bad_pool(path, line_no, "row does not treat n_treated units");
        }
        if (rest.data() != nullptr) bad_pool(path, line_no, "too many columns");
        ++r;
    }
    if (r != pool.n_accepted) {
        bad_pool(path, line_no, "expected " + std::to_string(pool.n_accepted) + " rows, found " +
                                    std::to_string(r));
    }
    return pool;
}

} // namespace fastrr
