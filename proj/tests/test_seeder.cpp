#include "catch_amalgamated.hpp"

#include "hs/seeder/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

using namespace std::chrono_literals;
using namespace hs::seeder;
using hs::task;
using steady = std::chrono::steady_clock;

namespace {

struct temp_content
{
    std::filesystem::path path;
    std::vector<std::byte> bytes;

    explicit temp_content(std::size_t size, unsigned seed)
    {
        path = std::filesystem::temp_directory_path() /
               ("hs_seed_" + std::to_string(::getpid()) + "_" + std::to_string(seed) + ".bin");
        bytes.resize(size);
        std::uint32_t x = seed;
        for (auto& b : bytes)
        {
            x = x * 1103515245U + 12345U;
            b = static_cast<std::byte>(x >> 16);
        }
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    ~temp_content() { std::filesystem::remove(path); }
};

std::size_t open_fd_count()
{
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator("/proc/self/fd"))
    {
        ++n;
    }
    return n;
}

hs::unique_fd connect_loopback(std::uint16_t port)
{
    hs::unique_fd fd{::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0)};
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    // the kernel completes the handshake into the backlog, so a blocking
    // connect does not need the seeder's loop to be running
    REQUIRE(::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0);
    hs::set_nonblocking(fd.get());
    return fd;
}

/// Minimal downloader used as the oracle side of the wire.
struct client
{
    hs::unique_fd fd;
    message_reader reader{max_chunk_length};

    task<void> send(std::vector<std::byte> frame) { co_await hs::write_all(fd.get(), frame); }

    /// Next message, or nullopt on timeout; eof reported through `eof`.
    task<std::optional<message>> next(hs::milliseconds timeout, bool* eof = nullptr)
    {
        const auto deadline = steady::now() + timeout;
        for (;;)
        {
            if (auto m = reader.next())
            {
                co_return m;
            }
            const auto left = std::chrono::ceil<hs::milliseconds>(deadline - steady::now());
            if (left <= 0ms)
            {
                co_return std::nullopt;
            }
            auto r = co_await hs::read_lazy(fd.get(), 65536, left);
            if (r.is_eof())
            {
                if (eof != nullptr)
                {
                    *eof = true;
                }
                co_return std::nullopt;
            }
            if (r.is_timed_out())
            {
                co_return std::nullopt;
            }
            reader.feed(r.bytes);
        }
    }
};

/// Waits until the peer closes; returns how long that took, or nullopt.
task<std::optional<steady::duration>> wait_eof(int fd, hs::milliseconds limit)
{
    const auto t0 = steady::now();
    for (;;)
    {
        const auto left = std::chrono::ceil<hs::milliseconds>(t0 + limit - steady::now());
        if (left <= 0ms)
        {
            co_return std::nullopt;
        }
        auto r = co_await hs::read_lazy(fd, 4096, left);
        if (r.is_eof())
        {
            co_return steady::now() - t0;
        }
        if (r.is_timed_out())
        {
            co_return std::nullopt;
        }
    }
}

seeder_config test_config()
{
    seeder_config c;
    c.bind_address = "127.0.0.1";
    c.handshake_timeout = 300ms;
    c.idle_timeout = 2000ms;
    // ticks are driven by hand unless a test says otherwise
    c.choke_tick = 3600s;
    return c;
}

} // namespace

TEST_CASE("valid handshake exchanges peer ids", "[seeder][handshake]")
{
    temp_content f(100000, 1);
    content_store store(f.path, 32768);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();
    const auto mine = make_peer_id("-TEST01-", 5);
    std::optional<peer_id> theirs;
    std::optional<peer_id> recorded;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        auto fd = connect_loopback(s.port());
        theirs = co_await client_handshake(fd.get(), store.info_hash(), mine, 1000ms);
        while (s.sessions().empty())
        {
            co_await hs::yield_now();
        }
        recorded = s.sessions().begin()->second->id;
        s.stop();
    });
    rt.run();
    REQUIRE(theirs);
    CHECK(std::equal(theirs->begin(), theirs->begin() + 8, "-HS0001-"));
    CHECK(recorded == mine);
    CHECK(s.stats().handshakes_completed == 1);
    CHECK(s.stats().handshake_failures == 0);
    CHECK(rt.stats().live_tasks == 0);
}

TEST_CASE("bad handshakes are refused without a reply", "[seeder][handshake]")
{
    temp_content f(50000, 2);
    content_store store(f.path, 16384);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();

    handshake_frame wrong_hash{store.info_hash(), make_peer_id("x", 1)};
    wrong_hash.info_hash[0] ^= 0xff;
    auto wrong_proto = encode_handshake({store.info_hash(), make_peer_id("y", 2)});
    wrong_proto[1] = std::byte{'h'};

    std::vector<std::optional<steady::duration>> closes;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        for (const auto& frame : {encode_handshake(wrong_hash), wrong_proto})
        {
            auto fd = connect_loopback(s.port());
            co_await hs::write_all(fd.get(), frame);
            // eof with zero bytes: nothing was sent back
            closes.push_back(co_await wait_eof(fd.get(), 1000ms));
        }
        s.stop();
    });
    rt.run();
    REQUIRE(closes.size() == 2);
    CHECK(closes[0].has_value());
    CHECK(closes[1].has_value());
    CHECK(s.stats().handshake_failures == 2);
    CHECK(s.stats().handshakes_completed == 0);
}

TEST_CASE("client side rejects a mismatched seeder", "[seeder][handshake]")
{
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    auto [a, b] = hs::make_socket_pair();
    digest want{};
    want[3] = 7;
    digest other = want;
    other[3] = 8;
    std::error_code code;
    rt.spawn([&, fd = a.get()]() -> task<> {
        try
        {
            co_await client_handshake(fd, want, make_peer_id("c", 1), 500ms);
        }
        catch (const protocol_error& e)
        {
            code = e.code();
        }
    });
    rt.spawn([&, fd = b.get()]() -> task<> {
        co_await hs::write_all(fd, encode_handshake({other, make_peer_id("s", 1)}));
    });
    rt.run();
    CHECK(code == protocol_errc::info_hash_mismatch);
}

TEST_CASE("silent connection times out in the handshake", "[seeder][handshake]")
{
    temp_content f(20000, 3);
    content_store store(f.path, 16384);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();
    std::optional<steady::duration> closed_after;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        auto fd = connect_loopback(s.port());
        closed_after = co_await wait_eof(fd.get(), 2000ms);
        s.stop();
    });
    rt.run();
    REQUIRE(closed_after);
    CHECK(*closed_after >= 250ms);
    CHECK(*closed_after <= 450ms);
    CHECK(s.stats().handshake_failures == 1);
}

TEST_CASE("each handshaked peer adds a reader and a writer", "[seeder]")
{
    temp_content f(20000, 4);
    content_store store(f.path, 16384);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();
    std::int64_t before = 0;
    std::int64_t after = 0;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        co_await hs::yield_now();
        before = rt.stats().live_tasks;
        std::vector<hs::unique_fd> fds;
        for (int i = 0; i < 3; ++i)
        {
            fds.push_back(connect_loopback(s.port()));
            co_await client_handshake(fds.back().get(), store.info_hash(), make_peer_id("p", i), 1000ms);
        }
        while (s.sessions().size() < 3)
        {
            co_await hs::yield_now();
        }
        co_await hs::sleep(20ms);
        after = rt.stats().live_tasks;
        s.stop();
    });
    rt.run();
    CHECK(after - before >= 6);
    CHECK(s.stats().sessions_closed == 3);
    CHECK(rt.stats().live_tasks == 0);
}

TEST_CASE("requests while choked are dropped", "[seeder][choke]")
{
    temp_content f(65536, 5);
    content_store store(f.path, 16384);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();
    bool got_anything = true;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        client c{connect_loopback(s.port())};
        co_await client_handshake(c.fd.get(), store.info_hash(), make_peer_id("q", 1), 1000ms);
        co_await c.send(encode_control(message_type::interested));
        co_await c.send(encode_request({0, 0, 1024}));
        auto m = co_await c.next(200ms);
        got_anything = m.has_value();
        s.stop();
    });
    rt.run();
    CHECK_FALSE(got_anything);
    CHECK(s.stats().requests_received == 1);
    CHECK(s.stats().requests_dropped_choked == 1);
    CHECK(s.stats().pieces_sent == 0);
}

TEST_CASE("queued requests are served FIFO and held across a choke", "[seeder][writer]")
{
    temp_content f(300000, 6);
    content_store store(f.path, 65536);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();

    const std::vector<chunk_request> asks{{1, 0, 16384}, {0, 100, 5000}, {4, 20000, 13000}};
    std::vector<std::string> log;
    std::vector<chunk_request> served;
    std::vector<bool> payload_ok;
    std::size_t held_while_choked = 0;

    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        client a{connect_loopback(s.port())};
        client b{connect_loopback(s.port())};
        co_await client_handshake(a.fd.get(), store.info_hash(), make_peer_id("a", 1), 1000ms);
        co_await a.send(encode_control(message_type::interested));
        while (s.sessions().size() < 1 || !s.sessions().begin()->second->interested)
        {
            co_await hs::yield_now();
        }
        co_await client_handshake(b.fd.get(), store.info_hash(), make_peer_id("b", 2), 1000ms);
        co_await b.send(encode_control(message_type::interested));
        while (s.sessions().size() < 2 || !std::prev(s.sessions().end())->second->interested)
        {
            co_await hs::yield_now();
        }
        const auto keep = s.sessions().begin()->second;
        const auto& sa = *keep;

        s.choke_tick(); // A first in rotation
        auto m = co_await a.next(1000ms);
        log.emplace_back(m && m->type == message_type::unchoke ? "A-unchoked" : "A-?");

        std::vector<std::byte> batch;
        for (const auto& r : asks)
        {
            const auto frame = encode_request(r);
            batch.insert(batch.end(), frame.begin(), frame.end());
        }
        co_await a.send(batch);
        // the reader queues all three before the writer gets a turn
        while (sa.pending.size() < asks.size())
        {
            co_await hs::yield_now();
        }
        s.choke_tick(); // rotates to B, A is choked mid-queue
        m = co_await a.next(1000ms);
        log.emplace_back(m && m->type == message_type::choke ? "A-choked" : "A-?");
        m = co_await a.next(150ms);
        log.emplace_back(m ? "A-unexpected" : "A-quiet");
        held_while_choked = sa.pending.size();

        s.choke_tick(); // back to A
        m = co_await a.next(1000ms);
        log.emplace_back(m && m->type == message_type::unchoke ? "A-unchoked" : "A-?");
        for (std::size_t i = 0; i < asks.size(); ++i)
        {
            m = co_await a.next(1000ms);
            if (!m || m->type != message_type::piece)
            {
                log.emplace_back("A-missing-piece");
                break;
            }
            served.push_back(m->request);
            const auto off = static_cast<std::size_t>(m->request.index) * store.piece_length() + m->request.begin;
            payload_ok.push_back(m->data.size() == m->request.length &&
                                 std::equal(m->data.begin(), m->data.end(), f.bytes.begin() + static_cast<std::ptrdiff_t>(off)));
        }
        s.stop();
    });
    rt.run();
    CHECK(log == std::vector<std::string>{"A-unchoked", "A-choked", "A-quiet", "A-unchoked"});
    CHECK(held_while_choked == 3);
    CHECK(served == asks);
    CHECK(payload_ok == std::vector<bool>{true, true, true});
    CHECK(s.stats().pieces_sent == 3);
    CHECK(s.stats().unchoke_bound_violations == 0);
}

TEST_CASE("protocol violations disconnect the peer", "[seeder][reader]")
{
    temp_content f(40000, 7);
    content_store store(f.path, 16384);
    const std::vector<std::vector<std::byte>> bad{
        {std::byte{0}, std::byte{0}, std::byte{0}, std::byte{1}, std::byte{9}},
        encode_request({0, 0, 16385}),
        encode_request({5, 0, 10}),
        encode_piece(0, 0, std::vector<std::byte>(4)),
    };
    for (const auto& frame : bad)
    {
        hs::runtime rt{hs::runtime_options{.pool_size = 1}};
        seeder s(store, test_config());
        s.open();
        std::optional<steady::duration> closed;
        rt.spawn(s.listen_loop());
        rt.spawn([&]() -> task<> {
            auto fd = connect_loopback(s.port());
            co_await client_handshake(fd.get(), store.info_hash(), make_peer_id("m", 1), 1000ms);
            co_await hs::write_all(fd.get(), encode_control(message_type::interested));
            co_await hs::write_all(fd.get(), frame);
            closed = co_await wait_eof(fd.get(), 1000ms);
            s.stop();
        });
        rt.run();
        CHECK(closed.has_value());
        CHECK(s.stats().protocol_errors == 1);
        CHECK(s.stats().sessions_closed == 1);
    }
}

TEST_CASE("idle peers are disconnected and leave nothing behind", "[seeder][idle]")
{
    temp_content f(40000, 8);
    content_store store(f.path, 16384);
    const auto fds_before = open_fd_count();
    std::optional<steady::duration> closed_after;
    std::int64_t live_with_peer = 0;
    std::int64_t live_after = 0;
    std::int64_t live_baseline = 0;
    {
        hs::runtime rt{hs::runtime_options{.pool_size = 1}};
        auto cfg = test_config();
        cfg.idle_timeout = 400ms;
        seeder s(store, cfg);
        s.open();
        rt.spawn(s.listen_loop());
        rt.spawn([&]() -> task<> {
            co_await hs::yield_now();
            live_baseline = rt.stats().live_tasks;
            auto fd = connect_loopback(s.port());
            co_await client_handshake(fd.get(), store.info_hash(), make_peer_id("i", 1), 1000ms);
            const auto t0 = steady::now();
            while (s.sessions().empty())
            {
                co_await hs::yield_now();
            }
            live_with_peer = rt.stats().live_tasks;
            auto waited = co_await wait_eof(fd.get(), 2000ms);
            if (waited)
            {
                closed_after = steady::now() - t0;
            }
            while (!s.sessions().empty())
            {
                co_await hs::yield_now();
            }
            live_after = rt.stats().live_tasks;
            s.stop();
        });
        rt.run();
        CHECK(s.stats().idle_disconnects == 1);
    }
    REQUIRE(closed_after);
    CHECK(*closed_after >= 320ms);
    CHECK(*closed_after <= 480ms);
    CHECK(live_with_peer >= live_baseline + 2);
    CHECK(live_after == live_baseline);
    CHECK(open_fd_count() == fds_before);
}

TEST_CASE("stop tears down every session", "[seeder]")
{
    temp_content f(40000, 9);
    content_store store(f.path, 16384);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    seeder s(store, test_config());
    s.open();
    int eofs = 0;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        std::vector<hs::unique_fd> fds;
        for (int i = 0; i < 5; ++i)
        {
            fds.push_back(connect_loopback(s.port()));
            co_await client_handshake(fds.back().get(), store.info_hash(), make_peer_id("t", i), 1000ms);
        }
        while (s.sessions().size() < 5)
        {
            co_await hs::yield_now();
        }
        s.stop();
        for (auto& fd : fds)
        {
            eofs += (co_await wait_eof(fd.get(), 1000ms)).has_value() ? 1 : 0;
        }
    });
    const auto t0 = steady::now();
    rt.run();
    CHECK(eofs == 5);
    CHECK(s.session_count() == 0);
    CHECK(rt.stats().live_tasks == 0);
    CHECK(steady::now() - t0 < 2s);
}

TEST_CASE("choke loop ticks on its own timer", "[seeder][choke]")
{
    temp_content f(40000, 10);
    content_store store(f.path, 16384);
    hs::runtime rt{hs::runtime_options{.pool_size = 1}};
    auto cfg = test_config();
    cfg.choke_tick = 30ms;
    seeder s(store, cfg);
    s.open();
    int unchokes = 0;
    rt.spawn(s.listen_loop());
    rt.spawn([&]() -> task<> {
        client c{connect_loopback(s.port())};
        co_await client_handshake(c.fd.get(), store.info_hash(), make_peer_id("k", 1), 1000ms);
        co_await c.send(encode_control(message_type::interested));
        auto m = co_await c.next(500ms);
        unchokes += (m && m->type == message_type::unchoke) ? 1 : 0;
        co_await hs::sleep(200ms);
        s.stop();
    });
    rt.run();
    CHECK(unchokes == 1);
    CHECK(s.stats().choke_ticks >= 3);
    CHECK(s.stats().max_unchoked == 1);
    CHECK(s.stats().unchoke_bound_violations == 0);
    CHECK(s.stats().fairness_violations == 0);
}
