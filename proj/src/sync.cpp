#include "hs/sync.hpp"

namespace hs {

void cond_var::wait_awaiter::await_suspend(std::coroutine_handle<> h) noexcept
{
    detail::task_control* c = detail::current_task();
    c->resume_point = h;
    c->reason = suspend_reason::condvar;
    c->state.store(task_state::suspended, std::memory_order_release);
    node_.ctl = c;
    cv_.queue_.push(&node_);
}

cond_var::wait_awaiter cond_var::wait()
{
    detail::require_attached("cond_var::wait");
    return wait_awaiter{*this};
}

void cond_var::signal()
{
    detail::task_control& self = detail::require_attached("cond_var::signal");
    if (detail::wait_node* n = queue_.pop())
    {
        self.owner->push_ready(n->ctl);
    }
}

void cond_var::broadcast()
{
    detail::task_control& self = detail::require_attached("cond_var::broadcast");
    while (detail::wait_node* n = queue_.pop())
    {
        self.owner->push_ready(n->ctl);
    }
}

namespace detail {

void sleep_awaiter::await_suspend(std::coroutine_handle<> h)
{
    task_control* c = current_task();
    c->resume_point = h;
    c->reason = suspend_reason::sleep;
    c->state.store(task_state::suspended, std::memory_order_release);
    c->owner->add_timer(deadline, c);
}

namespace {

/// Sleeps until the deadline or until the token it guards is settled.
struct helper_sleep final : abortable
{
    abort_state& token;
    clock::time_point deadline;
    task_control* ctl{nullptr};
    timer_key key{};

    helper_sleep(abort_state& t, clock::time_point d) : token(t), deadline(d) {}

    bool await_ready() const noexcept { return token.st != abort_state::status::armed; }

    void await_suspend(std::coroutine_handle<> h)
    {
        ctl = current_task();
        ctl->resume_point = h;
        ctl->reason = suspend_reason::sleep;
        ctl->state.store(task_state::suspended, std::memory_order_release);
        key = ctl->owner->add_timer(deadline, ctl);
        token.helper = this;
    }

    void await_resume() noexcept
    {
        if (token.helper == this)
        {
            token.helper = nullptr;
        }
    }

    void on_abort() noexcept override
    {
        token.helper = nullptr;
        if (ctl->owner->cancel_timer(key))
        {
            ctl->owner->push_ready(ctl);
        }
    }
};

} // namespace

task<void> timeout_helper(abort_token token, milliseconds duration)
{
    const auto deadline = clock::now() + duration;
    if (duration <= milliseconds::zero())
    {
        co_await yield_now();
    }
    else
    {
        co_await helper_sleep{token.raw(), deadline};
    }
    token.fire();
}

} // namespace detail

task<void> sleep(milliseconds duration)
{
    detail::require_attached("sleep");
    if (duration <= milliseconds::zero())
    {
        co_await yield_now();
        co_return;
    }
    co_await detail::sleep_awaiter{detail::clock::now() + duration};
}

token_state abort_token::state() const noexcept
{
    switch (state_->st)
    {
        case detail::abort_state::status::armed:
            return token_state::armed;
        case detail::abort_state::status::fired:
            return token_state::fired;
        case detail::abort_state::status::disarmed:
            return token_state::disarmed;
    }
    return token_state::armed;
}

bool abort_token::fire() noexcept
{
    detail::abort_state& s = *state_;
    if (s.st != detail::abort_state::status::armed)
    {
        return false;
    }
    s.st = detail::abort_state::status::fired;
    if (detail::abortable* t = std::exchange(s.target, nullptr))
    {
        t->on_abort();
    }
    if (detail::abortable* h = std::exchange(s.helper, nullptr))
    {
        h->on_abort();
    }
    return true;
}

bool abort_token::disarm() noexcept
{
    detail::abort_state& s = *state_;
    if (s.st != detail::abort_state::status::armed)
    {
        return false;
    }
    s.st = detail::abort_state::status::disarmed;
    s.target = nullptr;
    if (detail::abortable* h = std::exchange(s.helper, nullptr))
    {
        h->on_abort();
    }
    return true;
}

} // namespace hs
