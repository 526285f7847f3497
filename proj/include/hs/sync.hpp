#pragma once

#include "hs/detail/loop.hpp"
#include "hs/runtime.hpp"
#include "hs/task.hpp"

#include <chrono>
#include <coroutine>
#include <memory>
#include <optional>
#include <type_traits>
#include <utility>
#include <variant>

namespace hs {

using milliseconds = std::chrono::milliseconds;

/// FIFO condition variable for attached tasks. Signals are not sticky: a
/// signal with no waiter does nothing.
class cond_var
{
public:
    cond_var() = default;
    cond_var(const cond_var&) = delete;
    cond_var& operator=(const cond_var&) = delete;

    class wait_awaiter
    {
    public:
        explicit wait_awaiter(cond_var& cv) noexcept : cv_(cv) {}
        bool await_ready() const noexcept { return false; }
        void await_suspend(std::coroutine_handle<> h) noexcept;
        void await_resume() const noexcept {}

    private:
        cond_var& cv_;
        detail::wait_node node_{};
    };

    /// Parks the caller until a signal or broadcast reaches it.
    [[nodiscard]] wait_awaiter wait();

    /// Readies the longest-waiting task, if any.
    void signal();

    /// Readies every waiter in wait order.
    void broadcast();

    [[nodiscard]] std::size_t waiters() const noexcept { return queue_.size(); }

private:
    detail::wait_queue queue_;
};

namespace detail {

struct sleep_awaiter
{
    clock::time_point deadline;

    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}
};

} // namespace detail

/// Resumes the caller no earlier than `duration` from now. sleep(0) yields.
[[nodiscard]] task<void> sleep(milliseconds duration);

enum class token_state : std::uint8_t
{
    armed,
    fired,
    disarmed,
};

/// Single-shot cancellation link between a timeout helper and a pending
/// wait. Copies share state. Fire and disarm only from the loop thread.
class abort_token
{
public:
    abort_token() : state_(std::make_shared<detail::abort_state>()) {}

    [[nodiscard]] token_state state() const noexcept;
    [[nodiscard]] bool armed() const noexcept { return state() == token_state::armed; }

    /// Armed -> Fired; aborts the registered wait. False if not armed.
    bool fire() noexcept;

    /// Armed -> Disarmed; releases the helper. False if not armed.
    bool disarm() noexcept;

    detail::abort_state& raw() noexcept { return *state_; }

private:
    std::shared_ptr<detail::abort_state> state_;
};

template <typename T>
class timeout_result
{
public:
    static timeout_result timed_out() { return timeout_result{}; }
    static timeout_result completed(T value) { return timeout_result{std::move(value)}; }

    [[nodiscard]] bool is_timed_out() const noexcept { return !value_.has_value(); }
    [[nodiscard]] bool is_completed() const noexcept { return value_.has_value(); }
    [[nodiscard]] T& value() { return *value_; }
    [[nodiscard]] const T& value() const { return *value_; }

private:
    timeout_result() = default;
    explicit timeout_result(T v) : value_(std::move(v)) {}

    std::optional<T> value_;
};

namespace detail {

/// The timeout helper: sleeps `duration` unless the token is settled first,
/// then fires it if it is still armed.
task<void> timeout_helper(abort_token token, milliseconds duration);

template <typename Op>
using abortable_result_t = typename unwrap_task<std::invoke_result_t<Op&, abort_token>>::type;

} // namespace detail

/// Runs `op(token)` with a helper task that fires `token` after `duration`.
/// If the op finishes first the token is disarmed and the helper exits
/// without effect. Exactly one of Completed / TimedOut is returned.
template <typename Op>
auto with_timeout(milliseconds duration, Op op)
    -> task<timeout_result<std::conditional_t<std::is_void_v<detail::abortable_result_t<Op>>,
                                              std::monostate,
                                              detail::abortable_result_t<Op>>>>
{
    using raw_t = detail::abortable_result_t<Op>;
    using value_t = std::conditional_t<std::is_void_v<raw_t>, std::monostate, raw_t>;

    detail::require_attached("with_timeout");
    abort_token token;
    spawn(detail::timeout_helper(token, duration));

    std::optional<value_t> result;
    try
    {
        if constexpr (std::is_void_v<raw_t>)
        {
            co_await op(token);
            result.emplace();
        }
        else
        {
            result.emplace(co_await op(token));
        }
    }
    catch (...)
    {
        token.disarm();
        throw;
    }
    if (token.state() == token_state::fired)
    {
        co_return timeout_result<value_t>::timed_out();
    }
    token.disarm();
    co_return timeout_result<value_t>::completed(std::move(*result));
}

} // namespace hs
