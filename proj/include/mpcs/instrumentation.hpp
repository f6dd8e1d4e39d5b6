#pragma once

#include <atomic>
#include <cstdint>

// Counters backing the no-label-read and no-leakage assertions. Label reads
// are counted at the accessor so a pretraining run can be audited end to end.
namespace mpcs::instrumentation {

inline std::atomic<int64_t>& label_read_counter() {
    static std::atomic<int64_t> counter{0};
    return counter;
}

inline int64_t label_reads() { return label_read_counter().load(std::memory_order_relaxed); }
inline void reset_label_reads() { label_read_counter().store(0, std::memory_order_relaxed); }
inline void count_label_read() { label_read_counter().fetch_add(1, std::memory_order_relaxed); }

}  // namespace mpcs::instrumentation
