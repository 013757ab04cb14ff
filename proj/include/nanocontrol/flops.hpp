#pragma once

#include <cstdint>

namespace nanocontrol {

// Counts forward matmuls as 2*m*k*n floating point operations. Only the
// matmul op reports here; elementwise work, softmax and layer norm are not
// matmuls and are excluded on both the instrumented and the analytic side.
struct FlopCounter {
    static thread_local uint64_t flops;
    static thread_local uint64_t calls;
    static thread_local int active;

    static void count_matmul(int64_t m, int64_t k, int64_t n) {
        if (active > 0) {
            flops += uint64_t(2) * uint64_t(m) * uint64_t(k) * uint64_t(n);
            calls += 1;
        }
    }
};

inline thread_local uint64_t FlopCounter::flops = 0;
inline thread_local uint64_t FlopCounter::calls = 0;
inline thread_local int FlopCounter::active = 0;

// Scoped measurement: zeroes the counter on entry, exposes the totals, and
// restores the previous tally on exit so scopes nest.
class FlopScope {
public:
    FlopScope() : saved_flops_(FlopCounter::flops), saved_calls_(FlopCounter::calls) {
        FlopCounter::flops = 0;
        FlopCounter::calls = 0;
        FlopCounter::active++;
    }
    ~FlopScope() {
        FlopCounter::active--;
        FlopCounter::flops += saved_flops_;
        FlopCounter::calls += saved_calls_;
    }
    uint64_t flops() const { return FlopCounter::flops; }
    uint64_t calls() const { return FlopCounter::calls; }

    FlopScope(const FlopScope&) = delete;
    FlopScope& operator=(const FlopScope&) = delete;

private:
    uint64_t saved_flops_;
    uint64_t saved_calls_;
};

}  // namespace nanocontrol
