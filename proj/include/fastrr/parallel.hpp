#pragma once

#include <cstddef>

namespace fastrr {

/// FASTRR_THREADS if set to a positive integer, else the hardware thread
/// count (at least 1).
std::size_t default_thread_count();

/// `requested` unless it is 0, in which case default_thread_count().
inline std::size_t resolve_threads(std::size_t requested) {
    return requested == 0 ? default_thread_count() : requested;
}

} // namespace fastrr
