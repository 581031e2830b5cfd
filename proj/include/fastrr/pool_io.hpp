#pragma once

// Pool file layout:
//
//   # fastrr-pool v1
//   # design {"n_units":...,"threshold_value":...,"n_candidates":...}
//   key_seed,key_draw,stat                 (storage=keys)
//   stat,w_1,...,w_n                       (storage=full, and every exact pool)
//   key_seed,key_draw,stat,w_1,...,w_n     (storage=both)
//   <one row per accepted assignment, in draw/enumeration order>
//
// Floating point values use the shortest representation that round-trips.

#include <filesystem>
#include <fstream>
#include <string>

#include "fastrr/generation.hpp"

namespace fastrr {

inline constexpr std::string_view kPoolMagic = "# fastrr-pool v1";

/// Streams a pool to `<path>.tmp` and renames it over `path` in finish(), so a
/// reader never sees a partial file. An unfinished writer removes its temp.
class PoolFileWriter final : public PoolSink {
public:
    explicit PoolFileWriter(std::filesystem::path path);
    ~PoolFileWriter() override;

    PoolFileWriter(const PoolFileWriter&) = delete;
    PoolFileWriter& operator=(const PoolFileWriter&) = delete;

    void begin(const RandomizationPool& header) override;
    void row(const AssignmentKey* key, double stat, AssignmentView bits) override;
    void finish() override;

private:
    std::filesystem::path path_;
    std::filesystem::path tmp_;
    std::ofstream out_;
    StorageMode storage_ = StorageMode::keys;
    bool committed_ = false;
    std::string line_;
};

/// Writes a fully materialised pool. Needs assignments unless storage=keys.
void write_pool(const RandomizationPool& pool, const std::filesystem::path& path);

/// Parses a pool file; rows are checked against the design header.
RandomizationPool read_pool(const std::filesystem::path& path);

/// The design header JSON (without the leading "# design ").
std::string design_header_json(const RandomizationPool& pool);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

} // namespace fastrr
