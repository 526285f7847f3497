#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace hs::bench {

/// Resident set size from /proc/self/statm.
std::size_t current_rss_bytes();

/// High-water resident set size (getrusage).
std::size_t peak_rss_bytes();

struct spawn_report
{
    std::size_t n{0};
    double elapsed_sec{0};
    double spawns_per_sec{0};
    std::size_t rss_base{0};
    std::size_t rss_half{0};
    std::size_t rss_full{0};
    /// RSS growth per parked task over the first n/2 tasks.
    double bytes_per_task_half{0};
    /// RSS growth per parked task over all n.
    double bytes_per_task{0};
    std::size_t peak_rss{0};

    [[nodiscard]] std::string to_text() const;
};

/// Spawns n tasks that park on one condition variable, samples RSS at n/2
/// and n parked tasks (each after a short idle pause), then releases them
/// all and waits for completion.
spawn_report bench_spawn(std::size_t n);

struct switch_report
{
    std::size_t pairs{0};
    std::size_t iters{0};
    std::uint64_t switches{0};
    double elapsed_sec{0};
    double switches_per_sec{0};

    [[nodiscard]] std::string to_text() const;
};

/// `pairs` pairs of tasks that each yield `iters` times, so partners
/// alternate on the loop.
switch_report bench_switch(std::size_t pairs, std::size_t iters);

} // namespace hs::bench
