#pragma once

#include <cstddef>
#include <string>
#include <system_error>

namespace hs {

/// Runtime contract violations. I/O failures use std::generic_category.
enum class errc
{
    runtime_shut_down = 1,
    already_running,
    detached_mode_violation,
    not_in_task,
    invalid_descriptor,
    duplicate_waiter,
    broken_pipe,
};

const std::error_category& runtime_category() noexcept;

inline std::error_code make_error_code(errc e) noexcept
{
    return {static_cast<int>(e), runtime_category()};
}

class runtime_error : public std::system_error
{
public:
    runtime_error(errc e, const std::string& what) : std::system_error(make_error_code(e), what) {}
    runtime_error(std::error_code ec, const std::string& what) : std::system_error(ec, what) {}
};

/// A write that failed after `written()` bytes already reached the descriptor.
class write_error : public std::system_error
{
public:
    write_error(std::error_code ec, std::size_t written, const std::string& what)
        : std::system_error(ec, what), written_(written)
    {
    }

    [[nodiscard]] std::size_t written() const noexcept { return written_; }

private:
    std::size_t written_;
};

} // namespace hs

template <>
struct std::is_error_code_enum<hs::errc> : std::true_type
{
};
