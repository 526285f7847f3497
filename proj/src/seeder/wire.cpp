#include "hs/seeder/wire.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace hs::seeder {

namespace {

class protocol_category_impl final : public std::error_category
{
public:
    const char* name() const noexcept override { return "hs.wire"; }
    std::string message(int c) const override
    {
        switch (static_cast<protocol_errc>(c))
        {
        case protocol_errc::timed_out: return "handshake timed out";
        case protocol_errc::bad_protocol_string: return "bad protocol string";
        case protocol_errc::info_hash_mismatch: return "info hash mismatch";
        case protocol_errc::eof: return "connection closed";
        case protocol_errc::malformed_message: return "malformed message";
        case protocol_errc::invalid_request: return "invalid request";
        }
        return "unknown protocol error";
    }
};

void put_u32(std::byte* out, std::uint32_t v)
{
    out[0] = static_cast<std::byte>(v >> 24);
    out[1] = static_cast<std::byte>(v >> 16);
    out[2] = static_cast<std::byte>(v >> 8);
    out[3] = static_cast<std::byte>(v);
}

std::uint32_t get_u32(const std::byte* in)
{
    return (std::to_integer<std::uint32_t>(in[0]) << 24) | (std::to_integer<std::uint32_t>(in[1]) << 16) |
           (std::to_integer<std::uint32_t>(in[2]) << 8) | std::to_integer<std::uint32_t>(in[3]);
}

[[noreturn]] void malformed(const char* what)
{
    throw protocol_error(protocol_errc::malformed_message, what);
}

} // namespace

const std::error_category& protocol_category() noexcept
{
    static const protocol_category_impl cat;
    return cat;
}

std::error_code make_error_code(protocol_errc e) noexcept
{
    return {static_cast<int>(e), protocol_category()};
}

std::array<std::byte, handshake_size> encode_handshake(const handshake_frame& h)
{
    std::array<std::byte, handshake_size> out{};
    out[0] = static_cast<std::byte>(protocol_string.size());
    std::memcpy(out.data() + 1, protocol_string.data(), protocol_string.size());
    std::memcpy(out.data() + 14, h.info_hash.data(), 20);
    std::memcpy(out.data() + 34, h.id.data(), 20);
    return out;
}

handshake_frame decode_handshake(std::span<const std::byte, handshake_size> bytes)
{
    if (std::to_integer<std::size_t>(bytes[0]) != protocol_string.size() ||
        std::memcmp(bytes.data() + 1, protocol_string.data(), protocol_string.size()) != 0)
    {
        throw protocol_error(protocol_errc::bad_protocol_string);
    }
    handshake_frame h;
    std::memcpy(h.info_hash.data(), bytes.data() + 14, 20);
    std::memcpy(h.id.data(), bytes.data() + 34, 20);
    return h;
}

std::vector<std::byte> encode_keep_alive()
{
    return std::vector<std::byte>(4, std::byte{0});
}

std::vector<std::byte> encode_control(message_type t)
{
    std::vector<std::byte> out(5);
    put_u32(out.data(), 1);
    out[4] = static_cast<std::byte>(t);
    return out;
}

std::vector<std::byte> encode_request(const chunk_request& r)
{
    std::vector<std::byte> out(17);
    put_u32(out.data(), 13);
    out[4] = static_cast<std::byte>(message_type::request);
    put_u32(out.data() + 5, r.index);
    put_u32(out.data() + 9, r.begin);
    put_u32(out.data() + 13, r.length);
    return out;
}

std::array<std::byte, piece_header_size> encode_piece_header(std::uint32_t index,
                                                             std::uint32_t begin,
                                                             std::size_t data_length)
{
    std::array<std::byte, piece_header_size> out{};
    put_u32(out.data(), static_cast<std::uint32_t>(9 + data_length));
    out[4] = static_cast<std::byte>(message_type::piece);
    put_u32(out.data() + 5, index);
    put_u32(out.data() + 9, begin);
    return out;
}

std::vector<std::byte> encode_piece(std::uint32_t index, std::uint32_t begin, std::span<const std::byte> data)
{
    const auto header = encode_piece_header(index, begin, data.size());
    std::vector<std::byte> out(header.begin(), header.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

void message_reader::feed(std::span<const std::byte> bytes)
{
    if (pos_ > 0 && pos_ == buf_.size())
    {
        buf_.clear();
        pos_ = 0;
    }
    else if (pos_ > 64 * 1024)
    {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
    }
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<message> message_reader::next()
{
    const std::size_t avail = buf_.size() - pos_;
    if (avail < 4)
    {
        return std::nullopt;
    }
    const std::byte* p = buf_.data() + pos_;
    const std::uint32_t len = get_u32(p);
    if (len > 9 + max_payload_ && len > 13)
    {
        malformed("frame too long");
    }
    if (avail < 4 + static_cast<std::size_t>(len))
    {
        return std::nullopt;
    }

    message m;
    if (len > 0)
    {
        const auto t = std::to_integer<std::uint8_t>(p[4]);
        switch (t)
        {
        case 0:
        case 1:
        case 2:
        case 3:
            if (len != 1)
            {
                malformed("control message with payload");
            }
            break;
        case 6:
            if (len != 13)
            {
                malformed("request of wrong size");
            }
            m.request = {get_u32(p + 5), get_u32(p + 9), get_u32(p + 13)};
            break;
        case 7:
            if (len < 9 || len - 9 > max_payload_)
            {
                malformed("piece of wrong size");
            }
            m.request = {get_u32(p + 5), get_u32(p + 9), len - 9};
            m.data.assign(p + 13, p + 4 + len);
            break;
        default: malformed("unknown message type");
        }
        m.type = static_cast<message_type>(t);
    }
    pos_ += 4 + static_cast<std::size_t>(len);
    return m;
}

} // namespace hs::seeder
