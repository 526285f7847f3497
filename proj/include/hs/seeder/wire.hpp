#pragma once

#include "hs/seeder/content_store.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <system_error>
#include <vector>

namespace hs::seeder {

using peer_id = std::array<std::uint8_t, 20>;

inline constexpr std::string_view protocol_string = "HEKATE-MINI/1";
inline constexpr std::size_t handshake_size = 1 + 13 + 20 + 20;
inline constexpr std::size_t piece_header_size = 4 + 1 + 8;

enum class protocol_errc
{
    timed_out = 1,
    bad_protocol_string,
    info_hash_mismatch,
    eof,
    malformed_message,
    invalid_request,
};

const std::error_category& protocol_category() noexcept;
std::error_code make_error_code(protocol_errc e) noexcept;

class protocol_error : public std::system_error
{
public:
    explicit protocol_error(protocol_errc e) : std::system_error(make_error_code(e)) {}
    protocol_error(protocol_errc e, const std::string& what) : std::system_error(make_error_code(e), what) {}
};

struct handshake_frame
{
    digest info_hash{};
    peer_id id{};
};

std::array<std::byte, handshake_size> encode_handshake(const handshake_frame& h);

/// Throws protocol_error(bad_protocol_string) on a wrong length byte or
/// protocol string.
handshake_frame decode_handshake(std::span<const std::byte, handshake_size> bytes);

enum class message_type : std::uint8_t
{
    choke = 0,
    unchoke = 1,
    interested = 2,
    not_interested = 3,
    request = 6,
    piece = 7,
};

struct message
{
    /// Empty for keep-alive.
    std::optional<message_type> type;
    chunk_request request{};
    /// Piece payload; request.length mirrors its size.
    std::vector<std::byte> data;

    [[nodiscard]] bool keep_alive() const noexcept { return !type; }
};

std::vector<std::byte> encode_keep_alive();
std::vector<std::byte> encode_control(message_type t);
std::vector<std::byte> encode_request(const chunk_request& r);
std::array<std::byte, piece_header_size> encode_piece_header(std::uint32_t index,
                                                             std::uint32_t begin,
                                                             std::size_t data_length);
std::vector<std::byte> encode_piece(std::uint32_t index, std::uint32_t begin, std::span<const std::byte> data);

/// Incremental decoder. Bytes go in through feed(); complete frames come out
/// of next(). Malformed frames throw protocol_error(malformed_message).
class message_reader
{
public:
    /// `max_payload`: largest Piece payload accepted. 0 rejects Piece.
    explicit message_reader(std::size_t max_payload = max_chunk_length) : max_payload_(max_payload) {}

    void feed(std::span<const std::byte> bytes);
    std::optional<message> next();
    [[nodiscard]] std::size_t buffered() const noexcept { return buf_.size() - pos_; }

private:
    std::vector<std::byte> buf_;
    std::size_t pos_{0};
    std::size_t max_payload_;
};

} // namespace hs::seeder

template <>
struct std::is_error_code_enum<hs::seeder::protocol_errc> : std::true_type
{
};
