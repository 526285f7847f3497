#include "hs/seeder/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <sstream>
#include <unordered_set>

namespace hs::seeder {

task<std::vector<std::byte>> read_exact(int fd, std::size_t n, clock::time_point deadline)
{
    std::vector<std::byte> out;
    out.reserve(n);
    while (out.size() < n)
    {
        const auto left = std::chrono::ceil<milliseconds>(deadline - clock::now());
        if (left <= milliseconds::zero())
        {
            throw protocol_error(protocol_errc::timed_out);
        }
        // ask for no more than is missing so nothing past the frame is consumed
        auto r = co_await read_lazy(fd, n - out.size(), left);
        if (r.is_timed_out())
        {
            throw protocol_error(protocol_errc::timed_out);
        }
        if (r.is_eof())
        {
            throw protocol_error(protocol_errc::eof);
        }
        out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    co_return out;
}

task<peer_id> handshake(int fd, const digest& info_hash, const peer_id& self, milliseconds timeout)
{
    const auto deadline = clock::now() + timeout;
    const auto bytes = co_await read_exact(fd, handshake_size, deadline);
    const handshake_frame theirs = decode_handshake(std::span<const std::byte, handshake_size>(bytes.data(), handshake_size));
    if (theirs.info_hash != info_hash)
    {
        throw protocol_error(protocol_errc::info_hash_mismatch);
    }
    const auto ours = encode_handshake({info_hash, self});
    co_await write_all(fd, ours);
    co_return theirs.id;
}

task<peer_id> client_handshake(int fd, const digest& info_hash, const peer_id& self, milliseconds timeout)
{
    const auto deadline = clock::now() + timeout;
    const auto ours = encode_handshake({info_hash, self});
    co_await write_all(fd, ours);
    const auto bytes = co_await read_exact(fd, handshake_size, deadline);
    const handshake_frame theirs = decode_handshake(std::span<const std::byte, handshake_size>(bytes.data(), handshake_size));
    if (theirs.info_hash != info_hash)
    {
        throw protocol_error(protocol_errc::info_hash_mismatch);
    }
    co_return theirs.id;
}

peer_id make_peer_id(std::string_view prefix, std::uint64_t salt)
{
    peer_id id{};
    const std::size_t n = std::min(prefix.size(), id.size());
    std::memcpy(id.data(), prefix.data(), n);
    // splitmix64 for the tail
    for (std::size_t i = n; i < id.size(); ++i)
    {
        salt += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = salt;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        id[i] = static_cast<std::uint8_t>(z ^ (z >> 31));
    }
    return id;
}

std::string seeder_stats::to_text() const
{
    std::ostringstream o;
    o << "connections_accepted=" << connections_accepted << '\n'
      << "handshakes_completed=" << handshakes_completed << '\n'
      << "handshake_failures=" << handshake_failures << '\n'
      << "sessions_active=" << sessions_active << '\n'
      << "sessions_closed=" << sessions_closed << '\n'
      << "idle_disconnects=" << idle_disconnects << '\n'
      << "protocol_errors=" << protocol_errors << '\n'
      << "write_errors=" << write_errors << '\n'
      << "requests_received=" << requests_received << '\n'
      << "requests_dropped_choked=" << requests_dropped_choked << '\n'
      << "pieces_sent=" << pieces_sent << '\n'
      << "payload_bytes_sent=" << payload_bytes_sent << '\n'
      << "choke_ticks=" << choke_ticks << '\n'
      << "max_unchoked=" << max_unchoked << '\n'
      << "unchoke_bound_violations=" << unchoke_bound_violations << '\n'
      << "fairness_violations=" << fairness_violations << '\n'
      << "max_wait_ticks=" << max_wait_ticks << '\n';
    return o.str();
}

seeder::seeder(const content_store& store, seeder_config config)
    : store_(store),
      config_(std::move(config)),
      self_id_(make_peer_id("-HS0001-", static_cast<std::uint64_t>(::getpid()))),
      choke_(config_.unchoked_fraction)
{
    if (!config_.oracle)
    {
        config_.oracle = os_residency();
    }
    stop_fd_.reset(::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC));
    if (!stop_fd_)
    {
        throw std::system_error(errno, std::generic_category(), "eventfd");
    }
}

seeder::~seeder() = default;

void seeder::open()
{
    if (listen_fd_)
    {
        return;
    }
    unique_fd fd{::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0)};
    if (!fd)
    {
        throw std::system_error(errno, std::generic_category(), "socket");
    }
    const int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(config_.port);
    if (::inet_pton(AF_INET, config_.bind_address.c_str(), &addr.sin_addr) != 1)
    {
        throw std::system_error(std::make_error_code(std::errc::invalid_argument),
                                "bad bind address " + config_.bind_address);
    }
    if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    {
        throw std::system_error(errno, std::generic_category(), "bind");
    }
    if (::listen(fd.get(), SOMAXCONN) != 0)
    {
        throw std::system_error(errno, std::generic_category(), "listen");
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    listen_fd_ = std::move(fd);
}

task<void> seeder::listen_loop()
{
    open();
    const task_handle ticker = spawn(choke_loop());
    while (!stopped_)
    {
        const io_outcome o = co_await io_wait(listen_fd_.get(), io_direction::in, accept_token_);
        if (o != io_outcome::ready)
        {
            break;
        }
        for (;;)
        {
            const int c = ::accept4(listen_fd_.get(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
            if (c < 0)
            {
                if (errno == EINTR || errno == ECONNABORTED)
                {
                    continue;
                }
                if (errno == EMFILE || errno == ENFILE)
                {
                    // the backlog stays readable; back off instead of spinning
                    co_await sleep(milliseconds(100));
                }
                break;
            }
            ++stats_.connections_accepted;
            const int one = 1;
            ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            spawn(serve_peer(unique_fd{c}));
        }
    }
    listen_fd_.reset();
    co_await ticker.join();
}

void seeder::stop()
{
    if (stopped_)
    {
        return;
    }
    stopped_ = true;
    accept_token_.fire();
    const std::uint64_t one = 1;
    [[maybe_unused]] const auto n = ::write(stop_fd_.get(), &one, sizeof one);
    for (auto& [key, s] : sessions_)
    {
        close_session(*s);
    }
}

task<void> seeder::serve_peer(unique_fd fd)
{
    peer_id remote{};
    try
    {
        remote = co_await handshake(fd.get(), store_.info_hash(), self_id_, config_.handshake_timeout);
    }
    catch (const std::system_error&)
    {
        ++stats_.handshake_failures;
        co_return;
    }
    if (stopped_)
    {
        co_return;
    }
    ++stats_.handshakes_completed;

    auto s = std::make_shared<peer_session>();
    s->fd = std::move(fd);
    s->key = next_key_++;
    s->id = remote;
    s->last_activity = clock::now();
    sessions_.emplace(s->key, s);
    ++stats_.sessions_active;

    const task_handle writer = spawn(writer_loop(s));
    co_await reader_loop(s);
    close_session(*s);
    co_await writer.join();

    sessions_.erase(s->key);
    --stats_.sessions_active;
    ++stats_.sessions_closed;
}

task<void> seeder::reader_loop(std::shared_ptr<peer_session> s)
{
    // a pure uploader never accepts Piece, so no payload room is needed
    message_reader in(0);
    try
    {
        while (!s->closed)
        {
            const auto idle = std::chrono::duration_cast<milliseconds>(clock::now() - s->last_activity);
            if (idle >= config_.idle_timeout)
            {
                ++stats_.idle_disconnects;
                break;
            }
            auto r = co_await read_lazy(s->fd.get(), 4096, config_.idle_timeout - idle);
            if (s->closed || r.is_eof())
            {
                break;
            }
            if (r.is_timed_out())
            {
                continue;
            }
            in.feed(r.bytes);
            while (auto m = in.next())
            {
                s->last_activity = clock::now();
                handle(*s, *m);
            }
        }
    }
    catch (const protocol_error&)
    {
        ++stats_.protocol_errors;
    }
    catch (const std::system_error&)
    {
        // connection reset; nothing more to do than tear down
    }
}

void seeder::handle(peer_session& s, const message& m)
{
    if (m.keep_alive())
    {
        return;
    }
    switch (*m.type)
    {
    case message_type::choke:
    case message_type::unchoke:
        // the peer's own upload state; irrelevant to a seeder
        break;
    case message_type::interested:
        if (!s.interested)
        {
            s.interested = true;
            choke_.add(s.key);
        }
        break;
    case message_type::not_interested:
        if (s.interested)
        {
            s.interested = false;
            choke_.remove(s.key);
        }
        break;
    case message_type::request:
        ++stats_.requests_received;
        if (!store_.valid(m.request))
        {
            throw protocol_error(protocol_errc::invalid_request);
        }
        if (s.choke == choke_state::choked)
        {
            ++stats_.requests_dropped_choked;
            break;
        }
        s.pending.push_back(m.request);
        s.writer_cv.signal();
        break;
    case message_type::piece: throw protocol_error(protocol_errc::malformed_message, "piece sent to a seeder");
    }
}

task<void> seeder::writer_loop(std::shared_ptr<peer_session> s)
{
    const int fd = s->fd.get();
    try
    {
        for (;;)
        {
            while (!s->closed && s->outbox.empty() && (s->pending.empty() || s->choke == choke_state::choked))
            {
                co_await s->writer_cv.wait();
            }
            if (s->closed)
            {
                break;
            }
            if (!s->outbox.empty())
            {
                const auto frame = std::move(s->outbox.front());
                s->outbox.pop_front();
                co_await write_all(fd, frame);
                continue;
            }
            const chunk_request r = s->pending.front();
            s->pending.pop_front();
            const auto header = encode_piece_header(r.index, r.begin, r.length);
            co_await write_all(fd, header);
            co_await send_file_chunk(fd, store_.region(r), config_.oracle);
            ++stats_.pieces_sent;
            stats_.payload_bytes_sent += r.length;
            s->last_activity = clock::now();
        }
    }
    catch (const std::system_error&)
    {
        if (!s->closed)
        {
            ++stats_.write_errors;
        }
        close_session(*s);
    }
}

void seeder::close_session(peer_session& s)
{
    if (s.closed)
    {
        return;
    }
    s.closed = true;
    s.interested = false;
    choke_.remove(s.key);
    // wakes a reader parked in read_lazy and a writer parked on a full socket
    ::shutdown(s.fd.get(), SHUT_RDWR);
    s.writer_cv.broadcast();
}

task<void> seeder::choke_loop()
{
    // each tick is a timed wait on the stop eventfd, so stop() is seen at once
    while (!stopped_)
    {
        const int fd = stop_fd_.get();
        auto waited = co_await with_timeout(config_.choke_tick, [fd](abort_token t) {
            return io_wait(fd, io_direction::in, t);
        });
        if (stopped_ || waited.is_completed())
        {
            break;
        }
        choke_tick();
    }
}

void seeder::choke_tick()
{
    const auto chosen_list = choke_.tick();
    const std::unordered_set<peer_key> chosen(chosen_list.begin(), chosen_list.end());
    std::vector<fairness_monitor::sample> samples;
    std::size_t unchoked = 0;
    for (auto& [key, s] : sessions_)
    {
        if (s->closed)
        {
            continue;
        }
        const bool want = chosen.contains(key);
        const choke_state next = want ? choke_state::unchoked : choke_state::choked;
        if (s->choke != next)
        {
            s->choke = next;
            s->outbox.push_back(encode_control(want ? message_type::unchoke : message_type::choke));
            s->writer_cv.signal();
        }
        unchoked += want ? 1 : 0;
        if (s->interested)
        {
            samples.push_back({key, want});
        }
    }
    fairness_.observe(samples, unchoked, choke_.fraction());
    stats_.choke_ticks = fairness_.ticks();
    stats_.max_unchoked = fairness_.max_unchoked();
    stats_.unchoke_bound_violations = fairness_.bound_violations();
    stats_.fairness_violations = fairness_.fairness_violations();
    stats_.max_wait_ticks = fairness_.max_wait_ticks();
}

} // namespace hs::seeder
