#include "hs/runtime.hpp"

#include <sys/epoll.h>
#include <sys/eventfd.h>
#include <sys/ioctl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <sstream>

namespace hs {
namespace detail {
namespace {

thread_local task_control* tl_current = nullptr;

std::system_error sys_error(const char* what)
{
    return {errno, std::generic_category(), what};
}

/// Resumes `ctl` on this thread with it installed as the current task.
void resume_on_this_thread(task_control* ctl) noexcept
{
    task_control* saved = std::exchange(tl_current, ctl);
    ctl->resume_point.resume();
    tl_current = saved;
}

} // namespace

task_control* current_task() noexcept
{
    return tl_current;
}

task_control& require_task(const char* op)
{
    if (tl_current == nullptr)
    {
        throw runtime_error(errc::not_in_task, std::string{op} + " called outside of a task");
    }
    return *tl_current;
}

task_control& require_attached(const char* op)
{
    task_control& c = require_task(op);
    if (!c.sched.is_loop())
    {
        throw runtime_error(errc::detached_mode_violation, std::string{op} + " called from a detached task");
    }
    return c;
}

void io_node::on_abort() noexcept
{
    ctl->owner->unregister_io(*this);
    outcome = io_outcome::aborted;
    token = nullptr;
    ctl->owner->push_ready(ctl);
}

// ---------------------------------------------------------------------------
// thread_pool

thread_pool::thread_pool(loop& owner, std::uint32_t id, std::size_t threads)
    : owner_(owner), id_(id), threads_(std::max<std::size_t>(threads, 1))
{
}

thread_pool::~thread_pool()
{
    shutdown();
}

scheduler_ref thread_pool::ref() const noexcept
{
    return {scheduler_kind::thread_pool, id_, &owner_};
}

void thread_pool::submit(task_control* ctl)
{
    {
        std::lock_guard lock(mutex_);
        if (stopping_)
        {
            throw runtime_error(errc::runtime_shut_down, "thread pool is shut down");
        }
        if (workers_.empty())
        {
            workers_.reserve(threads_);
            for (std::size_t i = 0; i < threads_; ++i)
            {
                workers_.emplace_back([this] { worker_main(); });
            }
        }
        queue_.push_back(ctl);
    }
    cv_.notify_one();
}

void thread_pool::shutdown()
{
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    cv_.notify_all();
    workers_.clear(); // joins
}

void thread_pool::worker_main()
{
    for (;;)
    {
        task_control* ctl = nullptr;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_)
            {
                return;
            }
            ctl = queue_.front();
            queue_.pop_front();
        }
        owner_.context_switches.fetch_add(1, std::memory_order_relaxed);
        resume_on_this_thread(ctl);
    }
}

// ---------------------------------------------------------------------------
// loop

loop::loop(runtime& rt, std::size_t pool_size) : rt_(rt), loop_thread_(std::this_thread::get_id())
{
    epoll_fd_ = ::epoll_create1(EPOLL_CLOEXEC);
    if (epoll_fd_ < 0)
    {
        throw sys_error("epoll_create1");
    }
    wake_fd_ = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
    if (wake_fd_ < 0)
    {
        ::close(epoll_fd_);
        throw sys_error("eventfd");
    }
    epoll_event ev{};
    ev.events = EPOLLIN;
    ev.data.fd = wake_fd_;
    ::epoll_ctl(epoll_fd_, EPOLL_CTL_ADD, wake_fd_, &ev);
    pools_.push_back(std::make_unique<thread_pool>(*this, 1, pool_size));
}

loop::~loop()
{
    {
        std::lock_guard lock(remote_mutex_);
        terminated_ = true;
    }
    for (auto& p : pools_)
    {
        p->shutdown();
    }
    // Tasks still parked somewhere: drop every reference to them, then
    // destroy their frames.
    timers_.clear();
    fds_.clear();
    ready_head_ = ready_tail_ = nullptr;
    for (task_control* ctl : remote_)
    {
        if (!ctl->linked)
        {
            link_live(ctl);
        }
    }
    remote_.clear();
    while (live_head_ != nullptr)
    {
        task_control* ctl = live_head_;
        unlink_live(ctl);
        ctl->root.destroy();
        ctl->state.store(task_state::done, std::memory_order_release);
        ctl->release();
    }
    pools_.clear();
    ::close(wake_fd_);
    ::close(epoll_fd_);
}

task_control* loop::adopt(std::coroutine_handle<> root, task_control** promise_slot)
{
    auto* ctl = new task_control(*this, next_id_.fetch_add(1, std::memory_order_relaxed), ref());
    ctl->root = root;
    ctl->resume_point = root;
    *promise_slot = ctl;
    ctl->add_ref(); // for the returned handle

    const bool local = on_loop_thread();
    {
        std::lock_guard lock(remote_mutex_);
        if (terminated_)
        {
            ctl->refs.store(0);
            delete ctl;
            root.destroy();
            throw runtime_error(errc::runtime_shut_down, "spawn on a runtime whose loop has terminated");
        }
        live_tasks.fetch_add(1, std::memory_order_relaxed);
        tasks_spawned.fetch_add(1, std::memory_order_relaxed);
        if (!local)
        {
            remote_.push_back(ctl);
        }
    }
    if (local)
    {
        link_live(ctl);
        push_ready(ctl);
    }
    else
    {
        const std::uint64_t one = 1;
        [[maybe_unused]] auto n = ::write(wake_fd_, &one, sizeof one);
    }
    return ctl;
}

void loop::link_live(task_control* ctl) noexcept
{
    ctl->linked = true;
    ctl->prev_live = nullptr;
    ctl->next_live = live_head_;
    if (live_head_ != nullptr)
    {
        live_head_->prev_live = ctl;
    }
    live_head_ = ctl;
}

void loop::unlink_live(task_control* ctl) noexcept
{
    if (!ctl->linked)
    {
        return;
    }
    if (ctl->prev_live != nullptr)
    {
        ctl->prev_live->next_live = ctl->next_live;
    }
    else
    {
        live_head_ = ctl->next_live;
    }
    if (ctl->next_live != nullptr)
    {
        ctl->next_live->prev_live = ctl->prev_live;
    }
    ctl->prev_live = ctl->next_live = nullptr;
    ctl->linked = false;
}

void loop::push_ready(task_control* ctl) noexcept
{
    ctl->state.store(ctl->finishing ? task_state::running : task_state::ready, std::memory_order_release);
    ctl->next_ready = nullptr;
    if (ready_tail_ != nullptr)
    {
        ready_tail_->next_ready = ctl;
    }
    else
    {
        ready_head_ = ctl;
    }
    ready_tail_ = ctl;
    ++ready_size_;
}

void loop::post_remote(task_control* ctl, bool leaving_pool)
{
    {
        std::lock_guard lock(remote_mutex_);
        remote_.push_back(ctl);
        if (leaving_pool)
        {
            --detached_;
        }
    }
    const std::uint64_t one = 1;
    [[maybe_unused]] auto n = ::write(wake_fd_, &one, sizeof one);
}

void loop::drain_remote()
{
    std::vector<task_control*> batch;
    {
        std::lock_guard lock(remote_mutex_);
        if (remote_.empty())
        {
            return;
        }
        batch.swap(remote_);
    }
    for (task_control* ctl : batch)
    {
        if (!ctl->linked)
        {
            link_live(ctl);
        }
        push_ready(ctl);
    }
}

void loop::migrate(task_control* ctl, scheduler_ref target)
{
    if (target.owner() != this)
    {
        throw runtime_error(std::make_error_code(std::errc::invalid_argument),
                            "attach target belongs to another runtime");
    }
    const scheduler_ref from = ctl->sched;
    if (target.is_loop())
    {
        ctl->sched = target;
        ctl->state.store(task_state::ready, std::memory_order_release);
        post_remote(ctl, true);
        return;
    }
    thread_pool* pool = find_pool(target);
    if (pool == nullptr)
    {
        throw runtime_error(std::make_error_code(std::errc::invalid_argument), "unknown thread pool");
    }
    if (from.is_loop())
    {
        std::lock_guard lock(remote_mutex_);
        ++detached_;
    }
    ctl->sched = target;
    ctl->state.store(task_state::detached, std::memory_order_release);
    pool_dispatches.fetch_add(1, std::memory_order_relaxed);
    pool->submit(ctl);
}

thread_pool* loop::find_pool(scheduler_ref r) noexcept
{
    if (!r.is_pool() || r.owner() != this)
    {
        return nullptr;
    }
    for (auto& p : pools_)
    {
        if (p->ref() == r)
        {
            return p.get();
        }
    }
    return nullptr;
}

scheduler_ref loop::create_pool(std::size_t threads)
{
    pools_.push_back(std::make_unique<thread_pool>(*this, static_cast<std::uint32_t>(pools_.size() + 1), threads));
    return pools_.back()->ref();
}

void loop::on_root_final(task_control* ctl) noexcept
{
    ctl->finishing = true;
    if (ctl->sched.is_pool())
    {
        // Completion bookkeeping is loop-confined; hand the corpse back.
        ctl->sched = ref();
        post_remote(ctl, true);
        return;
    }
    finalize(ctl);
}

void loop::finalize(task_control* ctl) noexcept
{
    unlink_live(ctl);
    ctl->root.destroy();
    ctl->root = {};
    ctl->state.store(task_state::done, std::memory_order_release);
    while (wait_node* n = ctl->joiners.pop())
    {
        push_ready(n->ctl);
    }
    live_tasks.fetch_sub(1, std::memory_order_relaxed);
    ctl->release();
}

void loop::resume(task_control* ctl) noexcept
{
    if (ctl->finishing)
    {
        finalize(ctl);
        return;
    }
    ctl->state.store(task_state::running, std::memory_order_release);
    context_switches.fetch_add(1, std::memory_order_relaxed);
    resume_on_this_thread(ctl);
}

void loop::run_batch()
{
    std::size_t n = ready_size_;
    while (n-- > 0 && ready_head_ != nullptr)
    {
        task_control* ctl = ready_head_;
        ready_head_ = ctl->next_ready;
        if (ready_head_ == nullptr)
        {
            ready_tail_ = nullptr;
        }
        --ready_size_;
        resume(ctl);
    }
}

timer_key loop::add_timer(clock::time_point deadline, task_control* ctl)
{
    timer_key key{deadline, ++timer_seq_};
    timers_.emplace(key, ctl);
    return key;
}

bool loop::cancel_timer(const timer_key& key) noexcept
{
    return timers_.erase(key) > 0;
}

void loop::fire_timers()
{
    if (timers_.empty())
    {
        return;
    }
    const auto now = clock::now();
    while (!timers_.empty() && timers_.begin()->first.first <= now)
    {
        task_control* ctl = timers_.begin()->second;
        timers_.erase(timers_.begin());
        push_ready(ctl);
    }
}

int loop::next_timeout_ms() const
{
    if (timers_.empty())
    {
        return -1;
    }
    const auto delta = timers_.begin()->first.first - clock::now();
    if (delta <= clock::duration::zero())
    {
        return 0;
    }
    // round up so a timer is never fired early
    const auto ms = std::chrono::ceil<std::chrono::milliseconds>(delta).count();
    return static_cast<int>(std::min<std::int64_t>(ms, 1 << 30));
}

void loop::update_interest(int fd, fd_entry& e)
{
    std::uint32_t mask = 0;
    if (e.in != nullptr)
    {
        mask |= EPOLLIN | EPOLLRDHUP;
    }
    if (e.out != nullptr)
    {
        mask |= EPOLLOUT;
    }
    if (mask == e.mask)
    {
        return;
    }
    epoll_event ev{};
    ev.events = mask;
    ev.data.fd = fd;
    int rc = 0;
    if (mask == 0)
    {
        rc = ::epoll_ctl(epoll_fd_, EPOLL_CTL_DEL, fd, nullptr);
    }
    else if (e.mask == 0)
    {
        rc = ::epoll_ctl(epoll_fd_, EPOLL_CTL_ADD, fd, &ev);
    }
    else
    {
        rc = ::epoll_ctl(epoll_fd_, EPOLL_CTL_MOD, fd, &ev);
    }
    if (rc != 0 && mask != 0)
    {
        const int err = errno;
        throw runtime_error(err == EBADF || err == EPERM ? make_error_code(errc::invalid_descriptor)
                                                         : std::error_code(err, std::generic_category()),
                            "epoll_ctl");
    }
    e.mask = mask;
}

void loop::register_io(io_node& node)
{
    fd_entry& e = fds_[node.fd];
    io_node*& slot = node.dir == io_direction::in ? e.in : e.out;
    if (slot != nullptr)
    {
        throw runtime_error(errc::duplicate_waiter, "io_wait: descriptor already has a waiter");
    }
    slot = &node;
    try
    {
        update_interest(node.fd, e);
    }
    catch (...)
    {
        slot = nullptr;
        if (e.in == nullptr && e.out == nullptr && e.mask == 0)
        {
            fds_.erase(node.fd);
        }
        throw;
    }
    ++io_waiters_;
    ++io_registrations;
}

void loop::unregister_io(io_node& node) noexcept
{
    auto it = fds_.find(node.fd);
    if (it == fds_.end())
    {
        return;
    }
    fd_entry& e = it->second;
    io_node*& slot = node.dir == io_direction::in ? e.in : e.out;
    if (slot != &node)
    {
        return;
    }
    slot = nullptr;
    --io_waiters_;
    try
    {
        update_interest(node.fd, e);
    }
    catch (...)
    {
        // descriptor already closed; the kernel dropped the registration
        e.mask = e.in || e.out ? e.mask : 0;
    }
    if (e.in == nullptr && e.out == nullptr)
    {
        fds_.erase(it);
    }
}

void loop::complete_io(io_node* node, io_outcome outcome) noexcept
{
    unregister_io(*node);
    node->outcome = outcome;
    if (node->token != nullptr)
    {
        node->token->target = nullptr;
        node->token = nullptr;
    }
    push_ready(node->ctl);
}

void loop::poll_io(int timeout_ms)
{
    constexpr int max_events = 256;
    epoll_event events[max_events];
    const int n = ::epoll_wait(epoll_fd_, events, max_events, timeout_ms);
    if (n < 0)
    {
        if (errno == EINTR)
        {
            return;
        }
        throw sys_error("epoll_wait");
    }
    for (int i = 0; i < n; ++i)
    {
        const int fd = events[i].data.fd;
        const std::uint32_t ev = events[i].events;
        if (fd == wake_fd_)
        {
            std::uint64_t v = 0;
            [[maybe_unused]] auto r = ::read(wake_fd_, &v, sizeof v);
            continue;
        }
        auto it = fds_.find(fd);
        if (it == fds_.end())
        {
            continue;
        }
        io_node* in = it->second.in;
        io_node* out = it->second.out;
        const bool failed = (ev & (EPOLLHUP | EPOLLERR)) != 0;
        if (in != nullptr && (ev & (EPOLLIN | EPOLLRDHUP | EPOLLHUP | EPOLLERR)) != 0)
        {
            io_outcome o = io_outcome::ready;
            if (failed && (ev & EPOLLIN) == 0)
            {
                o = io_outcome::closed;
            }
            else if ((ev & EPOLLRDHUP) != 0)
            {
                int pending = 0;
                if (::ioctl(fd, FIONREAD, &pending) == 0 && pending == 0)
                {
                    o = io_outcome::closed;
                }
            }
            complete_io(in, o);
        }
        if (out != nullptr && (ev & (EPOLLOUT | EPOLLHUP | EPOLLERR)) != 0)
        {
            complete_io(out, failed ? io_outcome::closed : io_outcome::ready);
        }
    }
}

bool loop::terminated() const
{
    std::lock_guard lock(remote_mutex_);
    return terminated_;
}

void loop::run()
{
    {
        std::lock_guard lock(remote_mutex_);
        if (running_)
        {
            throw runtime_error(errc::already_running, "run: event loop already running");
        }
        if (terminated_)
        {
            throw runtime_error(errc::runtime_shut_down, "run: event loop already terminated");
        }
        running_ = true;
    }
    loop_thread_ = std::this_thread::get_id();

    for (;;)
    {
        drain_remote();
        run_batch();
        fire_timers();
        if (ready_size_ > 0)
        {
            if (!fds_.empty())
            {
                poll_io(0);
            }
            continue;
        }
        {
            std::lock_guard lock(remote_mutex_);
            if (!remote_.empty())
            {
                continue;
            }
            const bool quiet = timers_.empty() && io_waiters_ == 0;
            // Either nothing is left, or every remaining task is parked on a
            // condition or join that nothing can ever signal.
            if (quiet && (live_tasks.load() == 0 || detached_ == 0))
            {
                terminated_ = true;
                running_ = false;
                break;
            }
        }
        poll_io(next_timeout_ms());
        fire_timers();
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// public surface

const char* to_string(task_state s) noexcept
{
    switch (s)
    {
        case task_state::ready:
            return "ready";
        case task_state::running:
            return "running";
        case task_state::suspended:
            return "suspended";
        case task_state::detached:
            return "detached";
        case task_state::done:
            return "done";
    }
    return "?";
}

const char* to_string(suspend_reason r) noexcept
{
    switch (r)
    {
        case suspend_reason::none:
            return "none";
        case suspend_reason::yield:
            return "yield";
        case suspend_reason::sleep:
            return "sleep";
        case suspend_reason::io:
            return "io";
        case suspend_reason::condvar:
            return "condvar";
        case suspend_reason::join:
            return "join";
    }
    return "?";
}

std::string runtime_stats::to_text() const
{
    std::ostringstream out;
    out << "tasks_spawned=" << tasks_spawned << '\n'
        << "context_switches=" << context_switches << '\n'
        << "pool_dispatches=" << pool_dispatches << '\n'
        << "io_registrations=" << io_registrations << '\n'
        << "live_tasks=" << live_tasks << '\n';
    return out.str();
}

std::size_t pool_size_from_env(std::size_t fallback)
{
    const char* v = std::getenv("HS_POOL_SIZE");
    if (v == nullptr || *v == '\0')
    {
        return fallback;
    }
    char* end = nullptr;
    errno = 0;
    const long long n = std::strtoll(v, &end, 10);
    if (errno != 0 || end == v || *end != '\0' || n <= 0)
    {
        return fallback;
    }
    return static_cast<std::size_t>(n);
}

namespace {

std::size_t resolve_pool_size(const runtime_options& o)
{
    if (o.pool_size && *o.pool_size > 0)
    {
        return *o.pool_size;
    }
    return pool_size_from_env(std::max(1u, std::thread::hardware_concurrency()));
}

} // namespace

runtime::runtime(runtime_options options)
    : loop_(std::make_unique<detail::loop>(*this, resolve_pool_size(options)))
{
}

runtime::~runtime() = default;

void runtime::run()
{
    loop_->run();
}

runtime_stats runtime::stats() const
{
    runtime_stats s;
    s.tasks_spawned = loop_->tasks_spawned.load();
    s.context_switches = loop_->context_switches.load();
    s.pool_dispatches = loop_->pool_dispatches.load();
    s.io_registrations = loop_->io_registrations;
    s.live_tasks = loop_->live_tasks.load();
    return s;
}

runtime& current_runtime()
{
    return detail::require_task("current_runtime").owner->rt();
}

scheduler_ref current_scheduler()
{
    return detail::require_task("current_scheduler").sched;
}

bool is_attached() noexcept
{
    const detail::task_control* c = detail::current_task();
    return c != nullptr && c->sched.is_loop();
}

namespace detail {

task_handle adopt(loop& l, root_coroutine coro)
{
    return task_handle{l.adopt(coro.handle, &coro.handle.promise().ctl)};
}

void yield_awaiter::await_suspend(std::coroutine_handle<> h) const noexcept
{
    task_control* c = current_task();
    c->resume_point = h;
    c->reason = suspend_reason::yield;
    c->owner->push_ready(c);
}

void attach_awaiter::await_suspend(std::coroutine_handle<> h)
{
    ctl->resume_point = h;
    ctl->owner->migrate(ctl, target);
}

namespace {

struct join_awaiter
{
    task_control* target;
    wait_node node{};

    bool await_ready() const noexcept { return target->state.load(std::memory_order_acquire) == task_state::done; }

    void await_suspend(std::coroutine_handle<> h) noexcept
    {
        task_control* c = current_task();
        c->resume_point = h;
        c->reason = suspend_reason::join;
        c->state.store(task_state::suspended, std::memory_order_release);
        node.ctl = c;
        target->joiners.push(&node);
    }

    void await_resume() const noexcept {}
};

task<void> join_impl([[maybe_unused]] task_handle keep, task_control* target)
{
    require_attached("join");
    co_await join_awaiter{target};
}

} // namespace
} // namespace detail

task<void> task_handle::join() const
{
    return detail::join_impl(*this, ctl_);
}

} // namespace hs
