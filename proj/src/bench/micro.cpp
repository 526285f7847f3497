#include "hs/bench/micro.hpp"

#include "hs/runtime.hpp"
#include "hs/sync.hpp"

#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

namespace hs::bench {

namespace {

using steady = std::chrono::steady_clock;

double seconds_since(steady::time_point t0)
{
    return std::chrono::duration<double>(steady::now() - t0).count();
}

double per_task(std::size_t from, std::size_t to, std::size_t tasks)
{
    if (tasks == 0 || to <= from)
    {
        return 0.0;
    }
    return static_cast<double>(to - from) / static_cast<double>(tasks);
}

// settles allocator and page accounting before an RSS sample
constexpr std::chrono::milliseconds idle_pause{50};

} // namespace

std::size_t current_rss_bytes()
{
    std::ifstream in("/proc/self/statm");
    std::size_t total = 0;
    std::size_t resident = 0;
    in >> total >> resident;
    return resident * static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
}

std::size_t peak_rss_bytes()
{
    rusage ru{};
    ::getrusage(RUSAGE_SELF, &ru);
    return static_cast<std::size_t>(ru.ru_maxrss) * 1024;
}

std::string spawn_report::to_text() const
{
    std::ostringstream o;
    o << "bench=spawn\n"
      << "n=" << n << '\n'
      << "elapsed_sec=" << elapsed_sec << '\n'
      << "spawns_per_sec=" << spawns_per_sec << '\n'
      << "rss_base=" << rss_base << '\n'
      << "rss_half=" << rss_half << '\n'
      << "rss_full=" << rss_full << '\n'
      << "bytes_per_task_half=" << bytes_per_task_half << '\n'
      << "bytes_per_task=" << bytes_per_task << '\n'
      << "peak_rss=" << peak_rss << '\n';
    return o.str();
}

spawn_report bench_spawn(std::size_t n)
{
    spawn_report r;
    r.n = n;
    runtime rt{runtime_options{.pool_size = 1}};
    cond_var gate;
    std::size_t finished = 0;
    double active = 0;

    rt.spawn([&]() -> task<> {
        auto spawn_parked = [&](std::size_t count) {
            for (std::size_t i = 0; i < count; ++i)
            {
                rt.spawn([&]() -> task<> {
                    co_await gate.wait();
                    ++finished;
                });
            }
        };
        co_await sleep(idle_pause);
        r.rss_base = current_rss_bytes();

        auto t0 = steady::now();
        spawn_parked(n / 2);
        // FIFO: by the time this yield returns every new task has parked
        co_await yield_now();
        active += seconds_since(t0);
        co_await sleep(idle_pause);
        r.rss_half = current_rss_bytes();

        t0 = steady::now();
        spawn_parked(n - n / 2);
        co_await yield_now();
        active += seconds_since(t0);
        co_await sleep(idle_pause);
        r.rss_full = current_rss_bytes();

        t0 = steady::now();
        gate.broadcast();
        while (finished < n)
        {
            co_await yield_now();
        }
        active += seconds_since(t0);
    });
    rt.run();

    r.elapsed_sec = active;
    r.spawns_per_sec = (n == 0 || active <= 0) ? 0.0 : static_cast<double>(n) / active;
    r.bytes_per_task_half = per_task(r.rss_base, r.rss_half, n / 2);
    r.bytes_per_task = per_task(r.rss_base, r.rss_full, n);
    r.peak_rss = std::max(peak_rss_bytes(), r.rss_full);
    return r;
}

std::string switch_report::to_text() const
{
    std::ostringstream o;
    o << "bench=switch\n"
      << "pairs=" << pairs << '\n'
      << "iters=" << iters << '\n'
      << "switches=" << switches << '\n'
      << "elapsed_sec=" << elapsed_sec << '\n'
      << "switches_per_sec=" << switches_per_sec << '\n';
    return o.str();
}

switch_report bench_switch(std::size_t pairs, std::size_t iters)
{
    switch_report r;
    r.pairs = pairs;
    r.iters = iters;
    runtime rt{runtime_options{.pool_size = 1}};
    for (std::size_t p = 0; p < pairs * 2; ++p)
    {
        rt.spawn([iters]() -> task<> {
            for (std::size_t i = 0; i < iters; ++i)
            {
                co_await yield_now();
            }
        });
    }
    const auto before = rt.stats().context_switches;
    const auto t0 = steady::now();
    rt.run();
    r.elapsed_sec = seconds_since(t0);
    // every resumption counts, including the first run and the final one
    r.switches = rt.stats().context_switches - before;
    r.switches_per_sec = r.elapsed_sec > 0 ? static_cast<double>(r.switches) / r.elapsed_sec : 0.0;
    return r;
}

} // namespace hs::bench
