#include "hs/bench/sim_peers.hpp"

#include "hs/bench/micro.hpp"
#include "hs/io.hpp"
#include "hs/runtime.hpp"
#include "hs/seeder/server.hpp"
#include "hs/seeder/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace hs::bench {

namespace {

using seeder::chunk_request;
using steady = std::chrono::steady_clock;
using namespace std::chrono_literals;

constexpr std::uint64_t fnv_offset = 1469598103934665603ULL;
constexpr std::uint64_t fnv_prime = 1099511628211ULL;

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
    {
        h ^= (v >> (8 * i)) & 0xff;
        h *= fnv_prime;
    }
    return h;
}

std::uint64_t fnv_mix(std::uint64_t h, const chunk_request& r)
{
    return fnv_mix(fnv_mix(fnv_mix(h, r.index), r.begin), r.length);
}

using request_key = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>;

request_key key_of(const chunk_request& r)
{
    return {r.index, r.begin, r.length};
}

struct sim_context
{
    const seeder::content_store& store;
    sim_config config;
    sockaddr_in addr{};
    sim_report& report;
    std::vector<std::uint64_t> digests;
};

task<unique_fd> connect_to(const sockaddr_in& addr)
{
    unique_fd fd{::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0)};
    if (!fd)
    {
        throw std::system_error(errno, std::generic_category(), "socket");
    }
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    {
        if (errno != EINPROGRESS)
        {
            throw std::system_error(errno, std::generic_category(), "connect");
        }
        co_await io_wait(fd.get(), io_direction::out);
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0)
        {
            throw std::system_error(err, std::generic_category(), "connect");
        }
    }
    const int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    co_return fd;
}

bool payload_matches(const seeder::content_store& store, const seeder::message& m)
{
    if (!store.valid(m.request) || m.data.size() != m.request.length)
    {
        return false;
    }
    const auto expect = store.region(m.request).bytes();
    return std::equal(expect.begin(), expect.end(), m.data.begin(), m.data.end());
}

task<void> run_peer(sim_context& ctx, std::size_t idx)
{
    const auto& cfg = ctx.config;
    sim_report& rep = ctx.report;
    const auto plan = request_plan(ctx.store.size(), ctx.store.piece_length(), cfg, idx);
    std::map<request_key, std::size_t> plan_index;
    for (std::size_t i = 0; i < plan.size(); ++i)
    {
        plan_index.emplace(key_of(plan[i]), i);
    }

    std::uint64_t digest = fnv_offset;
    try
    {
        auto fd = co_await connect_to(ctx.addr);
        const auto me = seeder::make_peer_id("-SIM001-", cfg.seed * 1000003ULL + idx);
        co_await seeder::client_handshake(fd.get(), ctx.store.info_hash(), me, 10s);
        co_await write_all(fd.get(), seeder::encode_control(seeder::message_type::interested));

        seeder::message_reader in(seeder::max_chunk_length);
        std::vector<bool> got(plan.size(), false);
        std::set<std::size_t> outstanding;
        std::size_t received = 0;
        std::size_t next = 0;
        std::uint64_t bytes = 0;
        bool unchoked = false;
        const auto started = steady::now();
        auto last_progress = started;

        while (received < plan.size())
        {
            std::vector<std::byte> out;
            // requests only ever leave while unchoked
            while (unchoked && outstanding.size() < cfg.pipeline && next < plan.size())
            {
                const auto frame = seeder::encode_request(plan[next]);
                out.insert(out.end(), frame.begin(), frame.end());
                digest = fnv_mix(digest, plan[next]);
                outstanding.insert(next++);
                ++rep.requests_sent;
            }
            if (!out.empty())
            {
                co_await write_all(fd.get(), out);
            }

            auto m = in.next();
            if (!m)
            {
                const bool stalled_candidate = unchoked && !outstanding.empty();
                auto r = co_await read_lazy(fd.get(), 65536, stalled_candidate ? 500ms : 2000ms);
                if (r.is_eof())
                {
                    throw std::runtime_error("seeder closed the connection");
                }
                if (r.is_data())
                {
                    in.feed(r.bytes);
                    continue;
                }
                if (steady::now() - last_progress > cfg.peer_timeout)
                {
                    throw std::runtime_error("no progress");
                }
                if (stalled_candidate)
                {
                    // a request can cross a Choke on the wire and be dropped;
                    // ask again for whatever is still missing
                    out.clear();
                    for (std::size_t i : outstanding)
                    {
                        const auto frame = seeder::encode_request(plan[i]);
                        out.insert(out.end(), frame.begin(), frame.end());
                        ++rep.re_requests;
                    }
                    co_await write_all(fd.get(), out);
                }
                else
                {
                    co_await write_all(fd.get(), seeder::encode_keep_alive());
                }
                continue;
            }

            if (m->keep_alive())
            {
                continue;
            }
            switch (*m->type)
            {
            case seeder::message_type::choke: unchoked = false; break;
            case seeder::message_type::unchoke: unchoked = true; break;
            case seeder::message_type::piece:
            {
                ++rep.pieces_received;
                if (!payload_matches(ctx.store, *m))
                {
                    ++rep.mismatches;
                }
                const auto it = plan_index.find(key_of(m->request));
                if (it == plan_index.end())
                {
                    ++rep.unexpected_pieces;
                    break;
                }
                if (got[it->second])
                {
                    ++rep.duplicate_pieces;
                    break;
                }
                got[it->second] = true;
                outstanding.erase(it->second);
                ++received;
                bytes += m->data.size();
                rep.payload_bytes += m->data.size();
                last_progress = steady::now();
                if (cfg.rate_limit && *cfg.rate_limit > 0)
                {
                    const auto due = started + std::chrono::duration_cast<steady::duration>(
                                                   std::chrono::duration<double>(static_cast<double>(bytes) /
                                                                                 *cfg.rate_limit));
                    if (due > steady::now())
                    {
                        co_await sleep(std::chrono::ceil<milliseconds>(due - steady::now()));
                    }
                }
                break;
            }
            default: break;
            }
        }
        co_await write_all(fd.get(), seeder::encode_control(seeder::message_type::not_interested));
        ++rep.completed_peers;
    }
    catch (const std::exception&)
    {
        ++rep.failed_peers;
    }
    ctx.digests[idx] = digest;
}

sockaddr_in resolve_target(const std::string& host, std::uint16_t port)
{
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1)
    {
        return addr;
    }
    for (const auto& a : system_resolve(host))
    {
        if (::inet_pton(AF_INET, a.c_str(), &addr.sin_addr) == 1)
        {
            return addr;
        }
    }
    throw std::runtime_error("no IPv4 address for " + host);
}

} // namespace

std::string sim_report::to_text() const
{
    std::ostringstream o;
    o << "bench=peers\n"
      << "peers=" << peers << '\n'
      << "completed_peers=" << completed_peers << '\n'
      << "failed_peers=" << failed_peers << '\n'
      << "requests_sent=" << requests_sent << '\n'
      << "re_requests=" << re_requests << '\n'
      << "pieces_received=" << pieces_received << '\n'
      << "duplicate_pieces=" << duplicate_pieces << '\n'
      << "unexpected_pieces=" << unexpected_pieces << '\n'
      << "mismatches=" << mismatches << '\n'
      << "payload_bytes=" << payload_bytes << '\n'
      << "plan_digest=" << plan_digest << '\n'
      << "elapsed_sec=" << elapsed_sec << '\n'
      << "throughput_bytes_per_sec=" << throughput_bytes_per_sec << '\n'
      << "peak_rss=" << peak_rss << '\n';
    return o.str();
}

std::vector<chunk_request> request_plan(std::size_t file_size,
                                        std::size_t piece_length,
                                        const sim_config& config,
                                        std::size_t peer_index)
{
    if (config.chunk_length == 0 || config.chunk_length > seeder::max_chunk_length)
    {
        throw std::invalid_argument("chunk length must be in (0, 16 KiB]");
    }
    std::vector<chunk_request> slots;
    for (std::size_t start = 0, index = 0; start < file_size; start += piece_length, ++index)
    {
        const std::size_t psize = std::min(piece_length, file_size - start);
        for (std::size_t begin = 0; begin < psize; begin += config.chunk_length)
        {
            slots.push_back({static_cast<std::uint32_t>(index),
                             static_cast<std::uint32_t>(begin),
                             static_cast<std::uint32_t>(std::min(config.chunk_length, psize - begin))});
        }
    }

    if (config.pattern == request_pattern::sequential)
    {
        const std::size_t count = config.requests_per_peer == 0 ? slots.size()
                                                                : std::min(config.requests_per_peer, slots.size());
        slots.resize(count);
        return slots;
    }

    const std::size_t count = std::min(config.requests_per_peer == 0 ? 64 : config.requests_per_peer, slots.size());
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(peer_index)};
    std::mt19937_64 rng(seq);
    // partial Fisher-Yates with plain modulo: the engine's output is fully
    // specified, unlike the standard distributions
    for (std::size_t i = 0; i < count; ++i)
    {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (slots.size() - i));
        std::swap(slots[i], slots[j]);
    }
    slots.resize(count);
    return slots;
}

sim_report sim_peers(const sim_config& config,
                     const std::string& host,
                     std::uint16_t port,
                     const seeder::content_store& store)
{
    sim_report report;
    report.peers = config.peer_count;
    sim_context ctx{store, config, resolve_target(host, port), report, std::vector<std::uint64_t>(config.peer_count)};

    runtime rt;
    for (std::size_t i = 0; i < config.peer_count; ++i)
    {
        rt.spawn(run_peer(ctx, i));
    }
    const auto t0 = steady::now();
    rt.run();
    report.elapsed_sec = std::chrono::duration<double>(steady::now() - t0).count();

    report.plan_digest = fnv_offset;
    for (auto d : ctx.digests)
    {
        report.plan_digest = fnv_mix(report.plan_digest, d);
    }
    report.throughput_bytes_per_sec =
        report.elapsed_sec > 0 ? static_cast<double>(report.payload_bytes) / report.elapsed_sec : 0.0;
    report.peak_rss = peak_rss_bytes();
    return report;
}

} // namespace hs::bench
