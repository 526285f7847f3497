#pragma once

/**
 * runtime.hpp - cooperative tasks on one event loop, plus thread pools they
 * can migrate to.
 *
 * Model:
 *   - A task is a coroutine spawned onto the runtime. While *attached* it runs
 *     on the event-loop thread, and runs until it reaches a suspension point
 *     (yield_now, sleep, io_wait, cond_var::wait, join, attach, detached,
 *     read_lazy, attached write_all). No other attached task runs in between,
 *     so state shared among attached tasks needs no locks.
 *   - attach(pool) moves the calling task to a thread pool (it becomes
 *     *detached* and runs preemptively); attach(loop) moves it back. attach
 *     returns the previous scheduler so a caller can restore it.
 *   - detached(block) runs a block on the default pool and always re-attaches
 *     before the caller sees the result or the exception.
 *   - The ready queue is strictly FIFO and spawn never runs the child inline.
 */

#include "hs/detail/loop.hpp"
#include "hs/detail/task_control.hpp"
#include "hs/error.hpp"
#include "hs/scheduler_ref.hpp"
#include "hs/task.hpp"

#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>

namespace hs {

class runtime;

struct runtime_options
{
    /// Threads in the default pool. Unset: HS_POOL_SIZE, else hardware concurrency.
    std::optional<std::size_t> pool_size;
};

struct runtime_stats
{
    std::uint64_t tasks_spawned{0};
    std::uint64_t context_switches{0};
    std::uint64_t pool_dispatches{0};
    std::uint64_t io_registrations{0};
    std::int64_t live_tasks{0};

    /// `key=value` lines, one counter per line.
    [[nodiscard]] std::string to_text() const;
};

/// Pool size from HS_POOL_SIZE if it holds a positive integer, else `fallback`.
std::size_t pool_size_from_env(std::size_t fallback);

/// Shared reference to a spawned task. Outlives the task's completion.
class task_handle
{
public:
    task_handle() noexcept = default;
    explicit task_handle(detail::task_control* ctl) noexcept : ctl_(ctl) {}
    task_handle(const task_handle& other) noexcept : ctl_(other.ctl_)
    {
        if (ctl_ != nullptr)
        {
            ctl_->add_ref();
        }
    }
    task_handle(task_handle&& other) noexcept : ctl_(std::exchange(other.ctl_, nullptr)) {}
    task_handle& operator=(task_handle other) noexcept
    {
        std::swap(ctl_, other.ctl_);
        return *this;
    }
    ~task_handle()
    {
        if (ctl_ != nullptr)
        {
            ctl_->release();
        }
    }

    [[nodiscard]] bool valid() const noexcept { return ctl_ != nullptr; }
    [[nodiscard]] std::uint64_t id() const noexcept { return ctl_->id; }
    [[nodiscard]] task_state state() const noexcept { return ctl_->state.load(std::memory_order_acquire); }
    [[nodiscard]] bool done() const noexcept { return state() == task_state::done; }
    /// Reason for the most recent suspension.
    [[nodiscard]] suspend_reason reason() const noexcept { return ctl_->reason; }
    /// Error that terminated the task, if any. Meaningful once done().
    [[nodiscard]] std::exception_ptr error() const noexcept { return ctl_->error; }

    /// Suspends the calling attached task until this task is done.
    [[nodiscard]] task<void> join() const;

private:
    detail::task_control* ctl_{nullptr};
};

namespace detail {

struct root_promise;

struct root_coroutine
{
    using promise_type = root_promise;
    std::coroutine_handle<root_promise> handle;
};

struct root_promise
{
    task_control* ctl{nullptr};

    root_coroutine get_return_object() noexcept
    {
        return {std::coroutine_handle<root_promise>::from_promise(*this)};
    }
    std::suspend_always initial_suspend() const noexcept { return {}; }

    struct final_awaiter
    {
        bool await_ready() const noexcept { return false; }
        void await_suspend(std::coroutine_handle<root_promise> h) const noexcept
        {
            task_control* c = h.promise().ctl;
            c->owner->on_root_final(c);
        }
        void await_resume() const noexcept {}
    };

    final_awaiter final_suspend() const noexcept { return {}; }
    void return_void() const noexcept {}
    void unhandled_exception() noexcept { ctl->error = std::current_exception(); }
};

template <typename F>
root_coroutine root_body(F body)
{
    if constexpr (is_task_v<std::invoke_result_t<F&>>)
    {
        co_await std::invoke(body);
    }
    else
    {
        std::invoke(body);
    }
}

inline root_coroutine root_task(task<void> body)
{
    co_await std::move(body);
}

task_handle adopt(loop& l, root_coroutine coro);

struct yield_awaiter
{
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h) const noexcept;
    void await_resume() const noexcept {}
};

struct attach_awaiter
{
    task_control* ctl;
    scheduler_ref target;
    scheduler_ref previous;

    bool await_ready() const noexcept { return previous == target; }
    void await_suspend(std::coroutine_handle<> h);
    scheduler_ref await_resume() const noexcept { return previous; }
};

template <typename R>
struct unwrap_task
{
    using type = R;
};

template <typename R>
struct unwrap_task<task<R>>
{
    using type = R;
};

template <typename F>
using block_result_t = typename unwrap_task<std::invoke_result_t<F&>>::type;

} // namespace detail

class runtime
{
public:
    explicit runtime(runtime_options options = {});
    ~runtime();
    runtime(const runtime&) = delete;
    runtime& operator=(const runtime&) = delete;

    /// Enqueues `body` (a callable returning task<void>, or a plain callable)
    /// at the tail of the ready queue. Callable from any thread.
    template <typename F>
        requires std::is_invocable_v<std::decay_t<F>&>
    task_handle spawn(F&& body)
    {
        return detail::adopt(*loop_, detail::root_body<std::decay_t<F>>(std::forward<F>(body)));
    }

    task_handle spawn(task<void> body) { return detail::adopt(*loop_, detail::root_task(std::move(body))); }

    /// Drives the loop until no live task, timer or I/O wait remains. Runs
    /// once; the runtime is shut down afterwards.
    void run();

    [[nodiscard]] scheduler_ref loop_ref() const noexcept { return loop_->ref(); }
    [[nodiscard]] scheduler_ref default_pool() const noexcept { return loop_->default_pool().ref(); }
    [[nodiscard]] std::size_t default_pool_size() const noexcept { return loop_->default_pool().size(); }
    scheduler_ref create_pool(std::size_t threads) { return loop_->create_pool(threads); }
    [[nodiscard]] std::thread::id loop_thread() const noexcept { return loop_->loop_thread(); }
    [[nodiscard]] bool terminated() const { return loop_->terminated(); }

    [[nodiscard]] runtime_stats stats() const;

    /// Called with the byte count each time an I/O routine allocates a
    /// receive buffer. Loop thread only.
    void set_buffer_alloc_hook(std::function<void(std::size_t)> hook) { loop_->buffer_alloc_hook = std::move(hook); }

    detail::loop& core() noexcept { return *loop_; }

private:
    std::unique_ptr<detail::loop> loop_;
};

/// Runtime of the calling task. Throws not_in_task outside of tasks.
runtime& current_runtime();

/// Scheduler the calling task currently runs under.
scheduler_ref current_scheduler();

/// True when called from a task attached to its event loop.
bool is_attached() noexcept;

/// Spawns onto the calling task's runtime.
template <typename F>
task_handle spawn(F&& body)
{
    return current_runtime().spawn(std::forward<F>(body));
}

/// Moves the caller to the tail of the ready queue.
inline detail::yield_awaiter yield_now()
{
    detail::require_attached("yield_now");
    return {};
}

/// Continues the caller under `target`; returns the scheduler it left.
inline detail::attach_awaiter attach(scheduler_ref target)
{
    detail::task_control& c = detail::require_task("attach");
    return {&c, target, c.sched};
}

/// Runs `block` on the default pool, then re-attaches to the caller's
/// scheduler on every exit path before delivering the result or rethrowing.
template <typename F>
task<detail::block_result_t<F>> detached(F block)
{
    using result_t = detail::block_result_t<F>;
    detail::task_control& c = detail::require_task("detached");
    const scheduler_ref pool = c.owner->default_pool().ref();

    const scheduler_ref previous = co_await attach(pool);
    std::exception_ptr error;
    if constexpr (std::is_void_v<result_t>)
    {
        try
        {
            if constexpr (is_task_v<std::invoke_result_t<F&>>)
            {
                co_await std::invoke(block);
            }
            else
            {
                std::invoke(block);
            }
        }
        catch (...)
        {
            error = std::current_exception();
        }
        co_await attach(previous);
        if (error)
        {
            std::rethrow_exception(error);
        }
    }
    else
    {
        std::optional<result_t> result;
        try
        {
            if constexpr (is_task_v<std::invoke_result_t<F&>>)
            {
                result.emplace(co_await std::invoke(block));
            }
            else
            {
                result.emplace(std::invoke(block));
            }
        }
        catch (...)
        {
            error = std::current_exception();
        }
        co_await attach(previous);
        if (error)
        {
            std::rethrow_exception(error);
        }
        co_return std::move(*result);
    }
}

} // namespace hs
