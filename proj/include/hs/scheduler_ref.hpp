#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace hs {

enum class scheduler_kind : std::uint8_t
{
    event_loop,
    thread_pool,
};

/// Names either a runtime's event loop or one of its thread pools. This is the
/// value handed to and returned by attach().
class scheduler_ref
{
public:
    constexpr scheduler_ref() noexcept = default;
    constexpr scheduler_ref(scheduler_kind kind, std::uint32_t id, const void* owner) noexcept
        : kind_(kind), id_(id), owner_(owner)
    {
    }

    [[nodiscard]] constexpr scheduler_kind kind() const noexcept { return kind_; }
    [[nodiscard]] constexpr std::uint32_t id() const noexcept { return id_; }
    [[nodiscard]] constexpr bool is_loop() const noexcept { return kind_ == scheduler_kind::event_loop; }
    [[nodiscard]] constexpr bool is_pool() const noexcept { return kind_ == scheduler_kind::thread_pool; }
    [[nodiscard]] constexpr const void* owner() const noexcept { return owner_; }

    friend constexpr bool operator==(const scheduler_ref&, const scheduler_ref&) noexcept = default;

    [[nodiscard]] std::string to_string() const
    {
        return (is_loop() ? std::string{"loop#"} : std::string{"pool#"}) + std::to_string(id_);
    }

private:
    scheduler_kind kind_{scheduler_kind::event_loop};
    std::uint32_t id_{0};
    const void* owner_{nullptr};
};

} // namespace hs
