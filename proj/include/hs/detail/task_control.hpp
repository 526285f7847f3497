#pragma once

#include "hs/scheduler_ref.hpp"

#include <atomic>
#include <coroutine>
#include <cstdint>
#include <exception>

namespace hs {

enum class task_state : std::uint8_t
{
    ready,
    running,
    suspended,
    detached,
    done,
};

enum class suspend_reason : std::uint8_t
{
    none,
    yield,
    sleep,
    io,
    condvar,
    join,
};

const char* to_string(task_state s) noexcept;
const char* to_string(suspend_reason r) noexcept;

namespace detail {

class loop;
struct task_control;

/// Intrusive FIFO node for tasks parked on something (condvar, join).
struct wait_node
{
    task_control* ctl{nullptr};
    wait_node* next{nullptr};
};

class wait_queue
{
public:
    [[nodiscard]] bool empty() const noexcept { return head_ == nullptr; }
    [[nodiscard]] std::size_t size() const noexcept { return size_; }

    void push(wait_node* n) noexcept
    {
        n->next = nullptr;
        if (tail_ != nullptr)
        {
            tail_->next = n;
        }
        else
        {
            head_ = n;
        }
        tail_ = n;
        ++size_;
    }

    wait_node* pop() noexcept
    {
        wait_node* n = head_;
        if (n != nullptr)
        {
            head_ = n->next;
            if (head_ == nullptr)
            {
                tail_ = nullptr;
            }
            --size_;
        }
        return n;
    }

private:
    wait_node* head_{nullptr};
    wait_node* tail_{nullptr};
    std::size_t size_{0};
};

/// Per-task bookkeeping. Reference counted: the runtime holds one reference
/// until the task finishes, each task_handle holds another.
struct task_control
{
    task_control(loop& l, std::uint64_t task_id, scheduler_ref s) noexcept : owner(&l), id(task_id), sched(s) {}

    loop* owner;
    std::uint64_t id;
    std::atomic<std::uint32_t> refs{1};
    std::atomic<task_state> state{task_state::ready};
    suspend_reason reason{suspend_reason::none};
    scheduler_ref sched;
    std::coroutine_handle<> root;
    std::coroutine_handle<> resume_point;
    std::exception_ptr error;

    // loop-thread-only links
    task_control* next_ready{nullptr};
    task_control* prev_live{nullptr};
    task_control* next_live{nullptr};
    bool linked{false};
    bool finishing{false};
    wait_queue joiners;

    void add_ref() noexcept { refs.fetch_add(1, std::memory_order_relaxed); }

    void release() noexcept
    {
        if (refs.fetch_sub(1, std::memory_order_acq_rel) == 1)
        {
            delete this;
        }
    }
};

/// The task currently executing on this OS thread, if any.
task_control* current_task() noexcept;

/// Throws detached_mode_violation (or not_in_task) unless called from an
/// attached task. Returns that task.
task_control& require_attached(const char* op);

/// Throws not_in_task unless called from some task.
task_control& require_task(const char* op);

} // namespace detail
} // namespace hs
