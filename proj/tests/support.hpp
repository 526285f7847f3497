#pragma once

// Shared by the bench tests and the acceptance runner.

#include "hs/runtime.hpp"
#include "hs/seeder/server.hpp"

#include <unistd.h>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <string>
#include <thread>
#include <vector>

namespace hs_test {

/// Deterministic pseudo-random file, removed on destruction.
struct temp_file
{
    std::filesystem::path path;
    std::vector<std::byte> bytes;

    temp_file(std::size_t size, unsigned seed, const std::string& tag)
    {
        path = std::filesystem::temp_directory_path() /
               ("hs_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(seed) + ".bin");
        bytes.resize(size);
        std::uint64_t x = 0x9e3779b97f4a7c15ULL * (seed + 1);
        for (auto& b : bytes)
        {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            b = static_cast<std::byte>(x);
        }
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    temp_file(const temp_file&) = delete;
    temp_file& operator=(const temp_file&) = delete;
    ~temp_file() { std::filesystem::remove(path); }
};

/// A seeder on its own runtime and thread.
class seeder_thread
{
public:
    seeder_thread(const hs::seeder::content_store& store, hs::seeder::seeder_config cfg)
        : seeder_(store, std::move(cfg))
    {
        seeder_.open();
        rt_.spawn(seeder_.listen_loop());
        thread_ = std::thread([this] { rt_.run(); });
    }
    seeder_thread(const seeder_thread&) = delete;
    seeder_thread& operator=(const seeder_thread&) = delete;
    ~seeder_thread() { stop(); }

    [[nodiscard]] std::uint16_t port() const noexcept { return seeder_.port(); }

    /// Stops the seeder from its own loop and waits for the runtime to finish.
    void stop()
    {
        if (thread_.joinable())
        {
            rt_.spawn([this] { seeder_.stop(); });
            thread_.join();
        }
    }

    /// Runs `fn` as a task on the seeder's loop and waits for it.
    void run_on_loop(std::function<void()> fn)
    {
        std::promise<void> done;
        rt_.spawn([&] {
            fn();
            done.set_value();
        });
        done.get_future().wait();
    }

    /// Loop-confined counters, read on the loop.
    [[nodiscard]] hs::runtime_stats live_runtime_stats()
    {
        hs::runtime_stats out;
        run_on_loop([&] { out = rt_.stats(); });
        return out;
    }

    [[nodiscard]] hs::seeder::seeder_stats live_stats()
    {
        hs::seeder::seeder_stats out;
        run_on_loop([&] { out = seeder_.stats(); });
        return out;
    }

    /// Valid once stop() returned.
    [[nodiscard]] const hs::seeder::seeder_stats& stats() const noexcept { return seeder_.stats(); }
    [[nodiscard]] hs::runtime_stats runtime_stats() const { return rt_.stats(); }

private:
    hs::runtime rt_{hs::runtime_options{.pool_size = 2}};
    hs::seeder::seeder seeder_;
    std::thread thread_;
};

inline std::size_t open_fd_count()
{
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator("/proc/self/fd"))
    {
        ++n;
    }
    return n;
}

} // namespace hs_test
