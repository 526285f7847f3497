#pragma once

#include "hs/seeder/content_store.hpp"

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hs::bench {

enum class request_pattern : std::uint8_t
{
    sequential,
    random_chunks,
};

struct sim_config
{
    std::size_t peer_count{1};
    request_pattern pattern{request_pattern::sequential};
    std::uint64_t seed{0};
    /// Per-peer payload rate cap in bytes/sec. Unset: unlimited.
    std::optional<double> rate_limit;
    /// Requests per peer. 0: every chunk of the file (sequential) or 64
    /// distinct chunks (random).
    std::size_t requests_per_peer{0};
    std::size_t pipeline{8};
    std::size_t chunk_length{seeder::max_chunk_length};
    /// A peer that sees no progress for this long gives up.
    std::chrono::milliseconds peer_timeout{30000};
};

struct sim_report
{
    std::size_t peers{0};
    std::size_t completed_peers{0};
    std::size_t failed_peers{0};
    std::uint64_t requests_sent{0};
    std::uint64_t re_requests{0};
    std::uint64_t pieces_received{0};
    std::uint64_t duplicate_pieces{0};
    std::uint64_t unexpected_pieces{0};
    std::uint64_t mismatches{0};
    std::uint64_t payload_bytes{0};
    /// FNV-1a over every peer's first-issue request sequence.
    std::uint64_t plan_digest{0};
    double elapsed_sec{0};
    double throughput_bytes_per_sec{0};
    std::size_t peak_rss{0};

    [[nodiscard]] std::string to_text() const;
};

/// The request sequence peer `peer_index` issues. Seed-deterministic; random
/// plans draw distinct chunks.
std::vector<seeder::chunk_request> request_plan(std::size_t file_size,
                                                std::size_t piece_length,
                                                const sim_config& config,
                                                std::size_t peer_index);

/// Drives `config.peer_count` downloaders against host:port on a runtime of
/// its own and checks every payload against `store`.
sim_report sim_peers(const sim_config& config,
                     const std::string& host,
                     std::uint16_t port,
                     const seeder::content_store& store);

} // namespace hs::bench
