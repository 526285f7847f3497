#include "hs/io.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>

namespace hs {

void unique_fd::reset(int fd) noexcept
{
    if (fd_ >= 0)
    {
        ::close(fd_);
    }
    fd_ = fd;
}

void set_nonblocking(int fd)
{
    const int flags = ::fcntl(fd, F_GETFL);
    if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
    {
        throw std::system_error(errno, std::generic_category(), "fcntl(O_NONBLOCK)");
    }
}

std::pair<unique_fd, unique_fd> make_socket_pair()
{
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0, fds) != 0)
    {
        throw std::system_error(errno, std::generic_category(), "socketpair");
    }
    return {unique_fd{fds[0]}, unique_fd{fds[1]}};
}

namespace {

struct io_awaiter
{
    detail::io_node node;
    detail::abort_state* token;

    // Registration happens here, before suspending, so failures surface as
    // ordinary exceptions from the co_await expression.
    bool await_ready()
    {
        detail::task_control* c = detail::current_task();
        node.ctl = c;
        c->owner->register_io(node);
        if (token != nullptr)
        {
            token->target = &node;
            node.token = token;
        }
        return false;
    }

    void await_suspend(std::coroutine_handle<> h) noexcept
    {
        node.ctl->resume_point = h;
        node.ctl->reason = suspend_reason::io;
        node.ctl->state.store(task_state::suspended, std::memory_order_release);
    }

    io_outcome await_resume() const noexcept { return node.outcome; }
};

bool is_bad_descriptor(int fd)
{
    return fd < 0 || ::fcntl(fd, F_GETFD) == -1;
}

} // namespace

task<io_outcome> io_wait(int fd, io_direction dir, std::optional<abort_token> token)
{
    detail::require_attached("io_wait");
    if (is_bad_descriptor(fd))
    {
        throw runtime_error(errc::invalid_descriptor, "io_wait: invalid descriptor");
    }
    detail::abort_state* raw = nullptr;
    if (token)
    {
        if (token->state() == token_state::fired)
        {
            co_return io_outcome::aborted;
        }
        if (token->armed())
        {
            raw = &token->raw();
        }
    }
    io_awaiter w{detail::io_node{}, raw};
    w.node.fd = fd;
    w.node.dir = dir;
    co_return co_await w;
}

task<read_result> read_lazy(int fd, std::size_t max_len, milliseconds timeout)
{
    detail::task_control& self = detail::require_attached("read_lazy");
    const auto deadline = detail::clock::now() + timeout;

    for (;;)
    {
        const auto remaining = std::max(milliseconds::zero(),
                                        std::chrono::ceil<milliseconds>(deadline - detail::clock::now()));
        auto waited = co_await with_timeout(remaining, [fd](abort_token t) { return io_wait(fd, io_direction::in, t); });
        if (waited.is_timed_out())
        {
            co_return read_result{read_result::kind::timed_out, {}};
        }
        if (waited.value() == io_outcome::closed)
        {
            co_return read_result{read_result::kind::eof, {}};
        }

        // readable: only now does storage exist
        if (self.owner->buffer_alloc_hook)
        {
            self.owner->buffer_alloc_hook(max_len);
        }
        std::vector<std::byte> buffer(max_len);
        ssize_t n = 0;
        do
        {
            n = ::read(fd, buffer.data(), buffer.size());
        } while (n < 0 && errno == EINTR);

        if (n > 0)
        {
            buffer.resize(static_cast<std::size_t>(n));
            co_return read_result{read_result::kind::data, std::move(buffer)};
        }
        if (n == 0)
        {
            co_return read_result{read_result::kind::eof, {}};
        }
        if (errno != EAGAIN && errno != EWOULDBLOCK)
        {
            throw std::system_error(errno, std::generic_category(), "read");
        }
        // spurious readiness; wait again for whatever time is left
    }
}

namespace {

ssize_t write_some(int fd, const std::byte* p, std::size_t n)
{
    ssize_t rc = ::send(fd, p, n, MSG_NOSIGNAL);
    if (rc < 0 && errno == ENOTSOCK)
    {
        rc = ::write(fd, p, n);
    }
    return rc;
}

[[noreturn]] void throw_write_error(int err, std::size_t written)
{
    if (err == EPIPE || err == ECONNRESET)
    {
        throw write_error(make_error_code(errc::broken_pipe), written, "write_all");
    }
    throw write_error(std::error_code(err, std::generic_category()), written, "write_all");
}

} // namespace

task<std::size_t> write_all(int fd, std::span<const std::byte> data)
{
    if (data.empty())
    {
        co_return 0;
    }
    const detail::task_control* self = detail::current_task();
    const bool attached = self != nullptr && self->sched.is_loop();

    std::size_t written = 0;
    while (written < data.size())
    {
        const ssize_t n = write_some(fd, data.data() + written, data.size() - written);
        if (n > 0)
        {
            written += static_cast<std::size_t>(n);
            continue;
        }
        const int err = errno;
        if (n < 0 && err == EINTR)
        {
            continue;
        }
        if (n < 0 && (err == EAGAIN || err == EWOULDBLOCK))
        {
            if (attached)
            {
                const io_outcome o = co_await io_wait(fd, io_direction::out);
                if (o == io_outcome::closed)
                {
                    // let the next write report the precise error
                    const ssize_t probe = write_some(fd, data.data() + written, data.size() - written);
                    if (probe > 0)
                    {
                        written += static_cast<std::size_t>(probe);
                        continue;
                    }
                    throw_write_error(probe < 0 ? errno : EPIPE, written);
                }
            }
            else
            {
                pollfd p{fd, POLLOUT, 0};
                while (::poll(&p, 1, -1) < 0 && errno == EINTR)
                {
                }
            }
            continue;
        }
        throw_write_error(n < 0 ? err : EPIPE, written);
    }
    co_return written;
}

std::vector<std::string> system_resolve(const std::string& name)
{
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(name.c_str(), nullptr, &hints, &res);
    if (rc != 0)
    {
        throw resolve_error(rc, "getaddrinfo(" + name + "): " + ::gai_strerror(rc));
    }
    std::vector<std::string> out;
    for (const addrinfo* ai = res; ai != nullptr; ai = ai->ai_next)
    {
        char buf[INET6_ADDRSTRLEN] = {};
        const void* addr = nullptr;
        if (ai->ai_family == AF_INET)
        {
            addr = &reinterpret_cast<const sockaddr_in*>(ai->ai_addr)->sin_addr;
        }
        else if (ai->ai_family == AF_INET6)
        {
            addr = &reinterpret_cast<const sockaddr_in6*>(ai->ai_addr)->sin6_addr;
        }
        if (addr != nullptr && ::inet_ntop(ai->ai_family, addr, buf, sizeof buf) != nullptr)
        {
            std::string s{buf};
            if (std::find(out.begin(), out.end(), s) == out.end())
            {
                out.push_back(std::move(s));
            }
        }
    }
    ::freeaddrinfo(res);
    return out;
}

task<std::vector<std::string>> resolve_detached(std::string name, resolver_fn resolver)
{
    detail::require_attached("resolve_detached");
    auto addresses = co_await detached([&] { return resolver(name); });
    co_return addresses;
}

} // namespace hs
