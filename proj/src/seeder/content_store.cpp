#include "hs/seeder/content_store.hpp"

#include <openssl/evp.h>

#include <bit>
#include <stdexcept>

namespace hs::seeder {

digest sha1(std::span<const std::byte> bytes)
{
    digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha1(), nullptr) != 1 || len != out.size())
    {
        throw std::runtime_error("SHA-1 computation failed");
    }
    return out;
}

std::string to_hex(const digest& d)
{
    static constexpr char hex[] = "0123456789abcdef";
    std::string s;
    s.reserve(d.size() * 2);
    for (std::uint8_t b : d)
    {
        s.push_back(hex[b >> 4]);
        s.push_back(hex[b & 0xf]);
    }
    return s;
}

content_store::content_store(const std::filesystem::path& path, std::size_t piece_length)
    : file_(path), piece_length_(piece_length)
{
    if (piece_length == 0 || !std::has_single_bit(piece_length))
    {
        throw std::invalid_argument("piece length must be a power of two");
    }
    if (piece_length < max_chunk_length)
    {
        throw std::invalid_argument("piece length must be at least 16 KiB");
    }
    info_hash_ = sha1(file_.bytes());
}

std::size_t content_store::piece_size(std::size_t index) const noexcept
{
    if (index >= piece_count())
    {
        return 0;
    }
    const std::size_t start = index * piece_length_;
    return std::min(piece_length_, size() - start);
}

bool content_store::valid(const chunk_request& r) const noexcept
{
    if (r.length == 0 || r.length > max_chunk_length || r.index >= piece_count())
    {
        return false;
    }
    const std::size_t psize = piece_size(r.index);
    return r.begin < psize && r.length <= psize - r.begin;
}

file_region content_store::region(const chunk_request& r) const
{
    if (!valid(r))
    {
        throw std::out_of_range("chunk request outside of content");
    }
    return file_region(file_, static_cast<std::size_t>(r.index) * piece_length_ + r.begin, r.length);
}

} // namespace hs::seeder
