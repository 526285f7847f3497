#pragma once

#include "hs/detail/task_control.hpp"
#include "hs/scheduler_ref.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <coroutine>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hs {

class runtime;
struct runtime_stats;

enum class io_direction : std::uint8_t
{
    in,
    out,
};

enum class io_outcome : std::uint8_t
{
    ready,
    aborted,
    closed,
};

namespace detail {

using clock = std::chrono::steady_clock;

/// Something an abort token can cancel while it is pending.
class abortable
{
public:
    virtual void on_abort() noexcept = 0;

protected:
    ~abortable() = default;
};

/// A pending io_wait registration. Lives in the waiting coroutine's frame.
struct io_node final : abortable
{
    task_control* ctl{nullptr};
    int fd{-1};
    io_direction dir{io_direction::in};
    io_outcome outcome{io_outcome::ready};
    struct abort_state* token{nullptr};

    void on_abort() noexcept override;
};

using timer_key = std::pair<clock::time_point, std::uint64_t>;

class loop;

class thread_pool
{
public:
    thread_pool(loop& owner, std::uint32_t id, std::size_t threads);
    ~thread_pool();
    thread_pool(const thread_pool&) = delete;
    thread_pool& operator=(const thread_pool&) = delete;

    void submit(task_control* ctl);
    [[nodiscard]] scheduler_ref ref() const noexcept;
    [[nodiscard]] std::size_t size() const noexcept { return threads_; }
    void shutdown();

private:
    void worker_main();

    loop& owner_;
    std::uint32_t id_;
    std::size_t threads_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<task_control*> queue_;
    std::vector<std::jthread> workers_;
    bool stopping_{false};
};

/// Event loop core: ready queue, timers, epoll readiness and the cross-thread
/// inbox. Every member not marked otherwise is loop-thread-only.
class loop
{
public:
    loop(runtime& rt, std::size_t pool_size);
    ~loop();
    loop(const loop&) = delete;
    loop& operator=(const loop&) = delete;

    [[nodiscard]] runtime& rt() noexcept { return rt_; }
    [[nodiscard]] scheduler_ref ref() const noexcept { return {scheduler_kind::event_loop, 0, this}; }
    [[nodiscard]] bool on_loop_thread() const noexcept { return std::this_thread::get_id() == loop_thread_; }
    [[nodiscard]] std::thread::id loop_thread() const noexcept { return loop_thread_; }

    // task lifecycle (any thread)
    task_control* adopt(std::coroutine_handle<> root, task_control** promise_slot);
    void on_root_final(task_control* ctl) noexcept;

    void push_ready(task_control* ctl) noexcept;
    void migrate(task_control* ctl, scheduler_ref target);

    // timers
    timer_key add_timer(clock::time_point deadline, task_control* ctl);
    bool cancel_timer(const timer_key& key) noexcept;

    // readiness
    void register_io(io_node& node);
    void unregister_io(io_node& node) noexcept;

    thread_pool& default_pool() noexcept { return *pools_.front(); }
    thread_pool* find_pool(scheduler_ref ref) noexcept;
    scheduler_ref create_pool(std::size_t threads);

    void run();
    [[nodiscard]] bool terminated() const;

    // stats
    std::atomic<std::uint64_t> tasks_spawned{0};
    std::atomic<std::uint64_t> context_switches{0};
    std::atomic<std::uint64_t> pool_dispatches{0};
    std::uint64_t io_registrations{0};
    std::atomic<std::int64_t> live_tasks{0};

    [[nodiscard]] std::size_t ready_count() const noexcept { return ready_size_; }
    [[nodiscard]] std::size_t pending_timers() const noexcept { return timers_.size(); }
    [[nodiscard]] std::size_t pending_io() const noexcept { return io_waiters_; }

    std::function<void(std::size_t)> buffer_alloc_hook;

private:
    friend class thread_pool;

    struct fd_entry
    {
        io_node* in{nullptr};
        io_node* out{nullptr};
        std::uint32_t mask{0};
    };

    void post_remote(task_control* ctl, bool leaving_pool);
    void drain_remote();
    void run_batch();
    void resume(task_control* ctl) noexcept;
    void finalize(task_control* ctl) noexcept;
    void link_live(task_control* ctl) noexcept;
    void unlink_live(task_control* ctl) noexcept;
    void fire_timers();
    void poll_io(int timeout_ms);
    void update_interest(int fd, fd_entry& e);
    void complete_io(io_node* node, io_outcome outcome) noexcept;
    int next_timeout_ms() const;

    runtime& rt_;
    std::thread::id loop_thread_;
    int epoll_fd_{-1};
    int wake_fd_{-1};

    task_control* ready_head_{nullptr};
    task_control* ready_tail_{nullptr};
    std::size_t ready_size_{0};

    task_control* live_head_{nullptr};

    std::map<timer_key, task_control*> timers_;
    std::uint64_t timer_seq_{0};

    std::unordered_map<int, fd_entry> fds_;
    std::size_t io_waiters_{0};

    mutable std::mutex remote_mutex_;
    std::vector<task_control*> remote_;
    std::size_t detached_{0}; // guarded by remote_mutex_
    bool running_{false};     // guarded by remote_mutex_
    bool terminated_{false};  // guarded by remote_mutex_

    std::atomic<std::uint64_t> next_id_{1};
    std::vector<std::unique_ptr<thread_pool>> pools_;
};

/// State shared by an abort token, the operation it guards, and the helper
/// task that fires it.
struct abort_state
{
    enum class status : std::uint8_t
    {
        armed,
        fired,
        disarmed,
    };

    status st{status::armed};
    abortable* target{nullptr};
    abortable* helper{nullptr};
};

} // namespace detail
} // namespace hs
