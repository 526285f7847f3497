#pragma once

#include "hs/disk.hpp"
#include "hs/io.hpp"
#include "hs/runtime.hpp"
#include "hs/seeder/choke_manager.hpp"
#include "hs/seeder/content_store.hpp"
#include "hs/seeder/wire.hpp"
#include "hs/sync.hpp"

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace hs::seeder {

using clock = hs::detail::clock;

/// Reads the peer's handshake, checks it and answers with ours. Throws
/// protocol_error: timed_out, bad_protocol_string, info_hash_mismatch, eof.
task<peer_id> handshake(int fd, const digest& info_hash, const peer_id& self, milliseconds timeout);

/// Client side: sends ours first, then reads and checks the reply.
task<peer_id> client_handshake(int fd, const digest& info_hash, const peer_id& self, milliseconds timeout);

/// Reads exactly `n` bytes before `deadline`. Throws protocol_error
/// timed_out or eof.
task<std::vector<std::byte>> read_exact(int fd, std::size_t n, clock::time_point deadline);

peer_id make_peer_id(std::string_view prefix, std::uint64_t salt);

struct seeder_config
{
    std::string bind_address{"0.0.0.0"};
    /// 0 picks an ephemeral port; see seeder::port().
    std::uint16_t port{0};
    double unchoked_fraction{0.10};
    milliseconds idle_timeout{30000};
    milliseconds handshake_timeout{3000};
    milliseconds choke_tick{1000};
    /// Residency oracle for the hybrid send path. Unset: mincore.
    residency_oracle oracle;
};

struct seeder_stats
{
    std::uint64_t connections_accepted{0};
    std::uint64_t handshakes_completed{0};
    std::uint64_t handshake_failures{0};
    std::uint64_t sessions_active{0};
    std::uint64_t sessions_closed{0};
    std::uint64_t idle_disconnects{0};
    std::uint64_t protocol_errors{0};
    std::uint64_t write_errors{0};
    std::uint64_t requests_received{0};
    std::uint64_t requests_dropped_choked{0};
    std::uint64_t pieces_sent{0};
    std::uint64_t payload_bytes_sent{0};
    std::uint64_t choke_ticks{0};
    std::uint64_t max_unchoked{0};
    std::uint64_t unchoke_bound_violations{0};
    std::uint64_t fairness_violations{0};
    std::uint64_t max_wait_ticks{0};

    [[nodiscard]] std::string to_text() const;
};

enum class choke_state : std::uint8_t
{
    choked,
    unchoked,
};

/// Per-connection state shared by the session's reader and writer.
struct peer_session
{
    unique_fd fd;
    peer_key key{0};
    peer_id id{};
    choke_state choke{choke_state::choked};
    bool interested{false};
    bool closed{false};
    std::deque<chunk_request> pending;
    /// Choke / Unchoke frames queued by the choke task for the writer.
    std::deque<std::vector<std::byte>> outbox;
    cond_var writer_cv;
    clock::time_point last_activity{clock::now()};
};

/// Serves one content_store over TCP. All members run on the loop thread.
class seeder
{
public:
    seeder(const content_store& store, seeder_config config);
    seeder(const seeder&) = delete;
    seeder& operator=(const seeder&) = delete;
    ~seeder();

    /// Binds and listens. Called by listen_loop if not done before. Throws
    /// std::system_error.
    void open();

    /// Bound port, after open().
    [[nodiscard]] std::uint16_t port() const noexcept { return port_; }

    /// Accepts until stop(). Also runs the choke tick task.
    task<void> listen_loop();

    /// Stops accepting and closes every session. The tasks wind down on their
    /// own; run() returns once they have.
    void stop();

    [[nodiscard]] const seeder_stats& stats() const noexcept { return stats_; }
    [[nodiscard]] std::size_t session_count() const noexcept { return sessions_.size(); }
    [[nodiscard]] const content_store& store() const noexcept { return store_; }
    [[nodiscard]] const std::map<peer_key, std::shared_ptr<peer_session>>& sessions() const noexcept
    {
        return sessions_;
    }
    [[nodiscard]] const seeder_config& config() const noexcept { return config_; }

    /// One rotation step; public for tests driving ticks by hand.
    void choke_tick();

private:
    task<void> serve_peer(unique_fd fd);
    task<void> reader_loop(std::shared_ptr<peer_session> s);
    task<void> writer_loop(std::shared_ptr<peer_session> s);
    task<void> choke_loop();
    void handle(peer_session& s, const message& m);
    void close_session(peer_session& s);

    const content_store& store_;
    seeder_config config_;
    peer_id self_id_;
    unique_fd listen_fd_;
    unique_fd stop_fd_;
    std::uint16_t port_{0};
    bool stopped_{false};
    abort_token accept_token_;
    choke_manager choke_;
    fairness_monitor fairness_;
    std::map<peer_key, std::shared_ptr<peer_session>> sessions_;
    peer_key next_key_{1};
    seeder_stats stats_;
};

} // namespace hs::seeder
