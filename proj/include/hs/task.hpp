#pragma once

// task<T>: a lazily started, awaitable coroutine. Awaiting a task runs it
// inline on the awaiting task's thread via symmetric transfer, so nested
// tasks never touch the scheduler unless they hit a suspension point.

#include <coroutine>
#include <exception>
#include <optional>
#include <type_traits>
#include <utility>

namespace hs {

template <typename T = void>
class task;

namespace detail {

struct task_promise_base
{
    std::coroutine_handle<> continuation{std::noop_coroutine()};
    std::exception_ptr error;

    struct final_awaiter
    {
        bool await_ready() const noexcept { return false; }

        template <typename Promise>
        std::coroutine_handle<> await_suspend(std::coroutine_handle<Promise> h) noexcept
        {
            return h.promise().continuation;
        }

        void await_resume() const noexcept {}
    };

    std::suspend_always initial_suspend() const noexcept { return {}; }
    final_awaiter final_suspend() const noexcept { return {}; }
    void unhandled_exception() noexcept { error = std::current_exception(); }

    void rethrow_if_error() const
    {
        if (error)
        {
            std::rethrow_exception(error);
        }
    }
};

template <typename T>
struct task_promise final : task_promise_base
{
    std::optional<T> value;

    task<T> get_return_object() noexcept;

    template <typename U>
        requires std::is_convertible_v<U&&, T>
    void return_value(U&& v) noexcept(std::is_nothrow_constructible_v<T, U&&>)
    {
        value.emplace(std::forward<U>(v));
    }

    T take()
    {
        rethrow_if_error();
        return std::move(*value);
    }
};

template <>
struct task_promise<void> final : task_promise_base
{
    task<void> get_return_object() noexcept;
    void return_void() const noexcept {}
    void take() const { rethrow_if_error(); }
};

} // namespace detail

template <typename T>
class [[nodiscard]] task
{
public:
    using promise_type = detail::task_promise<T>;
    using value_type = T;

    task() noexcept = default;
    explicit task(std::coroutine_handle<promise_type> h) noexcept : handle_(h) {}
    task(task&& other) noexcept : handle_(std::exchange(other.handle_, {})) {}
    task& operator=(task&& other) noexcept
    {
        if (this != &other)
        {
            reset();
            handle_ = std::exchange(other.handle_, {});
        }
        return *this;
    }
    task(const task&) = delete;
    task& operator=(const task&) = delete;
    ~task() { reset(); }

    [[nodiscard]] bool valid() const noexcept { return static_cast<bool>(handle_); }

    auto operator co_await() && noexcept
    {
        struct awaiter
        {
            std::coroutine_handle<promise_type> handle;

            bool await_ready() const noexcept { return !handle || handle.done(); }

            std::coroutine_handle<> await_suspend(std::coroutine_handle<> awaiting) noexcept
            {
                handle.promise().continuation = awaiting;
                return handle;
            }

            T await_resume() { return handle.promise().take(); }
        };
        return awaiter{handle_};
    }

private:
    void reset() noexcept
    {
        if (handle_)
        {
            handle_.destroy();
            handle_ = {};
        }
    }

    std::coroutine_handle<promise_type> handle_;
};

namespace detail {

template <typename T>
task<T> task_promise<T>::get_return_object() noexcept
{
    return task<T>{std::coroutine_handle<task_promise<T>>::from_promise(*this)};
}

inline task<void> task_promise<void>::get_return_object() noexcept
{
    return task<void>{std::coroutine_handle<task_promise<void>>::from_promise(*this)};
}

template <typename>
struct is_task : std::false_type
{
};

template <typename T>
struct is_task<task<T>> : std::true_type
{
};

} // namespace detail

template <typename T>
inline constexpr bool is_task_v = detail::is_task<std::remove_cvref_t<T>>::value;

} // namespace hs
