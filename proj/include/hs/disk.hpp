#pragma once

// Hybrid send path for memory-mapped content: ask the kernel to read ahead,
// give it a scheduling round or two to do so, and only fall back to a
// detached (blocking) write when the pages still are not resident.

#include "hs/task.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace hs {

/// Read-only shared mapping of a whole regular file.
class mapped_file
{
public:
    explicit mapped_file(const std::filesystem::path& path);
    ~mapped_file();
    mapped_file(mapped_file&& other) noexcept;
    mapped_file& operator=(mapped_file&&) = delete;
    mapped_file(const mapped_file&) = delete;
    mapped_file& operator=(const mapped_file&) = delete;

    [[nodiscard]] std::size_t size() const noexcept { return size_; }
    [[nodiscard]] const std::byte* data() const noexcept { return data_; }
    [[nodiscard]] std::span<const std::byte> bytes() const noexcept { return {data_, size_}; }
    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    const std::byte* data_{nullptr};
    std::size_t size_{0};
};

/// A non-empty byte range inside a mapped file.
class file_region
{
public:
    /// Throws std::out_of_range unless 0 < length and offset + length <= size.
    file_region(const mapped_file& file, std::size_t offset, std::size_t length);

    [[nodiscard]] const mapped_file& file() const noexcept { return *file_; }
    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }
    [[nodiscard]] std::size_t length() const noexcept { return length_; }
    [[nodiscard]] std::span<const std::byte> bytes() const noexcept
    {
        return file_->bytes().subspan(offset_, length_);
    }

private:
    const mapped_file* file_;
    std::size_t offset_;
    std::size_t length_;
};

enum class residency : std::uint8_t
{
    resident,
    not_resident,
};

using residency_oracle = std::function<residency(const file_region&)>;

/// posix_madvise(WILLNEED) over the page-aligned cover of `region`. Advisory;
/// failures are counted and otherwise ignored.
void prefetch(const file_region& region) noexcept;

/// mincore over the page-aligned cover of `region`: resident only if every
/// page is. A failing probe reports not_resident.
residency incore(const file_region& region) noexcept;

/// Oracle backed by incore().
residency_oracle os_residency();

/// Number of prefetch advice calls the kernel rejected.
std::uint64_t prefetch_failures() noexcept;

enum class send_step : std::uint8_t
{
    prefetch = 1,
    yield = 2,
    probe = 3,
    yield_again = 4,
    probe_again = 5,
    detached_write = 6,
    attached_write = 7,
};

/// Sends `region` to `fd`:
///   prefetch (1); yield (2); probe (3);
///   not resident -> yield (4); probe (5); still not resident -> write in a
///   detached block (6);
///   otherwise write attached (7).
/// Caller must be attached and stays attached. Steps taken are appended to
/// `trace` when given.
task<std::size_t> send_file_chunk(int fd,
                                  file_region region,
                                  residency_oracle oracle,
                                  std::vector<send_step>* trace = nullptr);

} // namespace hs
