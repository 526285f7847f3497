#pragma once

#include "hs/runtime.hpp"
#include "hs/sync.hpp"
#include "hs/task.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hs {

/// Owning file descriptor.
class unique_fd
{
public:
    unique_fd() noexcept = default;
    explicit unique_fd(int fd) noexcept : fd_(fd) {}
    unique_fd(unique_fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    unique_fd& operator=(unique_fd&& other) noexcept
    {
        if (this != &other)
        {
            reset(std::exchange(other.fd_, -1));
        }
        return *this;
    }
    unique_fd(const unique_fd&) = delete;
    unique_fd& operator=(const unique_fd&) = delete;
    ~unique_fd() { reset(); }

    [[nodiscard]] int get() const noexcept { return fd_; }
    [[nodiscard]] explicit operator bool() const noexcept { return fd_ >= 0; }
    int release() noexcept { return std::exchange(fd_, -1); }
    void reset(int fd = -1) noexcept;

private:
    int fd_{-1};
};

void set_nonblocking(int fd);

/// A connected, non-blocking AF_UNIX stream pair.
std::pair<unique_fd, unique_fd> make_socket_pair();

/// Suspends the calling attached task until `fd` is ready in `dir`, the
/// token fires (aborted) or the peer hangs up (closed).
task<io_outcome> io_wait(int fd, io_direction dir, std::optional<abort_token> token = std::nullopt);

struct read_result
{
    enum class kind : std::uint8_t
    {
        data,
        timed_out,
        eof,
    };

    kind what{kind::eof};
    std::vector<std::byte> bytes;

    [[nodiscard]] bool is_data() const noexcept { return what == kind::data; }
    [[nodiscard]] bool is_timed_out() const noexcept { return what == kind::timed_out; }
    [[nodiscard]] bool is_eof() const noexcept { return what == kind::eof; }
};

/// Waits for input (guarded by a timeout helper), and only then allocates a
/// buffer of at most `max_len` bytes and performs a single read.
task<read_result> read_lazy(int fd, std::size_t max_len, milliseconds timeout);

/// Writes all of `data`. Attached: non-blocking writes, parking on
/// io_wait(out) whenever the socket is full. Detached: plain blocking writes
/// with no event-loop involvement. Throws write_error carrying the count
/// written so far.
task<std::size_t> write_all(int fd, std::span<const std::byte> data);

using resolver_fn = std::function<std::vector<std::string>(const std::string&)>;

/// getaddrinfo with numeric formatting of every result. Blocks.
std::vector<std::string> system_resolve(const std::string& name);

/// Runs `resolver` (default: system_resolve) inside a detached block; the
/// caller resumes attached with the addresses or the resolver's error.
task<std::vector<std::string>> resolve_detached(std::string name, resolver_fn resolver = system_resolve);

class resolve_error : public std::runtime_error
{
public:
    resolve_error(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] int code() const noexcept { return code_; }

private:
    int code_;
};

} // namespace hs
