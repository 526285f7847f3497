#include "hs/disk.hpp"

#include "hs/io.hpp"
#include "hs/runtime.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <stdexcept>
#include <system_error>

namespace hs {
namespace {

std::atomic<std::uint64_t> g_prefetch_failures{0};

std::size_t page_size() noexcept
{
    static const std::size_t size = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
    return size;
}

/// Page-aligned [start, start + len) covering the region.
std::pair<std::byte*, std::size_t> page_cover(const file_region& r) noexcept
{
    const std::size_t ps = page_size();
    const auto base = reinterpret_cast<std::uintptr_t>(r.file().data());
    const std::uintptr_t first = base + r.offset();
    const std::uintptr_t last = first + r.length();
    const std::uintptr_t start = first & ~(ps - 1);
    const std::uintptr_t end = (last + ps - 1) & ~(ps - 1);
    return {reinterpret_cast<std::byte*>(start), end - start};
}

} // namespace

mapped_file::mapped_file(const std::filesystem::path& path) : path_(path)
{
    const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0)
    {
        throw std::system_error(errno, std::generic_category(), "open " + path.string());
    }
    struct stat st{};
    if (::fstat(fd, &st) != 0)
    {
        const int err = errno;
        ::close(fd);
        throw std::system_error(err, std::generic_category(), "fstat " + path.string());
    }
    if (!S_ISREG(st.st_mode) || st.st_size <= 0)
    {
        ::close(fd);
        throw std::invalid_argument("not a non-empty regular file: " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd, 0);
    const int err = errno;
    ::close(fd);
    if (p == MAP_FAILED)
    {
        throw std::system_error(err, std::generic_category(), "mmap " + path.string());
    }
    data_ = static_cast<const std::byte*>(p);
}

mapped_file::mapped_file(mapped_file&& other) noexcept
    : path_(std::move(other.path_)), data_(std::exchange(other.data_, nullptr)), size_(std::exchange(other.size_, 0))
{
}

mapped_file::~mapped_file()
{
    if (data_ != nullptr)
    {
        ::munmap(const_cast<std::byte*>(data_), size_);
    }
}

file_region::file_region(const mapped_file& file, std::size_t offset, std::size_t length)
    : file_(&file), offset_(offset), length_(length)
{
    if (length == 0 || offset > file.size() || length > file.size() - offset)
    {
        throw std::out_of_range("file_region outside of mapped file");
    }
}

void prefetch(const file_region& region) noexcept
{
    auto [start, len] = page_cover(region);
    if (::posix_madvise(start, len, POSIX_MADV_WILLNEED) != 0)
    {
        g_prefetch_failures.fetch_add(1, std::memory_order_relaxed);
    }
}

residency incore(const file_region& region) noexcept
{
    auto [start, len] = page_cover(region);
    const std::size_t pages = len / page_size();
    // small regions are the common case; avoid the heap for them
    unsigned char small[64];
    std::vector<unsigned char> large;
    unsigned char* vec = small;
    if (pages > sizeof small)
    {
        large.resize(pages);
        vec = large.data();
    }
    if (::mincore(start, len, vec) != 0)
    {
        return residency::not_resident;
    }
    for (std::size_t i = 0; i < pages; ++i)
    {
        if ((vec[i] & 1U) == 0)
        {
            return residency::not_resident;
        }
    }
    return residency::resident;
}

residency_oracle os_residency()
{
    return [](const file_region& r) { return incore(r); };
}

std::uint64_t prefetch_failures() noexcept
{
    return g_prefetch_failures.load(std::memory_order_relaxed);
}

task<std::size_t> send_file_chunk(int fd, file_region region, residency_oracle oracle, std::vector<send_step>* trace)
{
    detail::require_attached("send_file_chunk");
    auto note = [trace](send_step s) {
        if (trace != nullptr)
        {
            trace->push_back(s);
        }
    };
    const std::span<const std::byte> payload = region.bytes();

    prefetch(region);
    note(send_step::prefetch);
    co_await yield_now();
    note(send_step::yield);
    note(send_step::probe);
    if (oracle(region) == residency::not_resident)
    {
        co_await yield_now();
        note(send_step::yield_again);
        note(send_step::probe_again);
        if (oracle(region) == residency::not_resident)
        {
            note(send_step::detached_write);
            const std::size_t n = co_await detached([fd, payload]() { return write_all(fd, payload); });
            co_return n;
        }
    }
    note(send_step::attached_write);
    const std::size_t n = co_await write_all(fd, payload);
    co_return n;
}

} // namespace hs
