#pragma once

#include "hs/disk.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace hs::seeder {

using digest = std::array<std::uint8_t, 20>;

/// SHA-1 of `bytes`.
digest sha1(std::span<const std::byte> bytes);

std::string to_hex(const digest& d);

/// Wire cap on a single Request / Piece payload.
inline constexpr std::size_t max_chunk_length = 16 * 1024;

struct chunk_request
{
    std::uint32_t index{0};
    std::uint32_t begin{0};
    std::uint32_t length{0};

    friend bool operator==(const chunk_request&, const chunk_request&) = default;
};

/// The served file: a read-only mapping cut into power-of-two pieces and
/// identified by the SHA-1 of its content.
class content_store
{
public:
    static constexpr std::size_t default_piece_length = 262144;

    explicit content_store(const std::filesystem::path& path, std::size_t piece_length = default_piece_length);

    [[nodiscard]] const mapped_file& file() const noexcept { return file_; }
    [[nodiscard]] std::size_t size() const noexcept { return file_.size(); }
    [[nodiscard]] std::size_t piece_length() const noexcept { return piece_length_; }
    [[nodiscard]] std::size_t piece_count() const noexcept { return (size() + piece_length_ - 1) / piece_length_; }
    [[nodiscard]] std::size_t piece_size(std::size_t index) const noexcept;
    [[nodiscard]] const digest& info_hash() const noexcept { return info_hash_; }

    /// length in (0, 16 KiB] and the range lies inside its piece.
    [[nodiscard]] bool valid(const chunk_request& r) const noexcept;

    /// Throws std::out_of_range for invalid requests.
    [[nodiscard]] file_region region(const chunk_request& r) const;

private:
    mapped_file file_;
    std::size_t piece_length_;
    digest info_hash_{};
};

} // namespace hs::seeder
