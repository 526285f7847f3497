// seeder: serve one file to downloaders until SIGINT/SIGTERM.

#include "hs/io.hpp"
#include "hs/runtime.hpp"
#include "hs/seeder/server.hpp"
#include "hs/sync.hpp"

#include <CLI11.hpp>

#include <sys/signalfd.h>
#include <csignal>
#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Seed a single file over the mini peer wire protocol"};
    std::string file;
    std::uint16_t port = 6881;
    std::string bind = "0.0.0.0";
    std::size_t piece_length = hs::seeder::content_store::default_piece_length;
    double fraction = 0.10;
    long idle_ms = 30000;
    long tick_ms = 1000;
    long handshake_ms = 3000;
    long duration_ms = 0;
    bool stats = false;

    app.add_option("--file", file, "File to serve")->required()->check(CLI::ExistingFile);
    app.add_option("--port", port, "TCP port (0 picks one)");
    app.add_option("--bind", bind, "IPv4 address to listen on");
    app.add_option("--piece-length", piece_length, "Piece length in bytes (power of two)");
    app.add_option("--unchoked-fraction", fraction, "Fraction of interested peers unchoked per tick")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--idle-timeout-ms", idle_ms, "Disconnect peers idle this long");
    app.add_option("--choke-tick-ms", tick_ms, "Choke rotation period");
    app.add_option("--handshake-timeout-ms", handshake_ms, "Handshake deadline");
    app.add_option("--duration-ms", duration_ms, "Stop after this long (0: run until signalled)");
    app.add_flag("--stats", stats, "Print counters on exit");
    CLI11_PARSE(app, argc, argv);

    // blocked before any pool thread exists, so only the signalfd sees them
    sigset_t mask;
    sigemptyset(&mask);
    sigaddset(&mask, SIGINT);
    sigaddset(&mask, SIGTERM);
    ::pthread_sigmask(SIG_BLOCK, &mask, nullptr);
    hs::unique_fd sigfd{::signalfd(-1, &mask, SFD_NONBLOCK | SFD_CLOEXEC)};

    try
    {
        const hs::seeder::content_store store(file, piece_length);
        hs::seeder::seeder_config cfg;
        cfg.bind_address = bind;
        cfg.port = port;
        cfg.unchoked_fraction = fraction;
        cfg.idle_timeout = hs::milliseconds(idle_ms);
        cfg.choke_tick = hs::milliseconds(tick_ms);
        cfg.handshake_timeout = hs::milliseconds(handshake_ms);

        hs::runtime rt;
        hs::seeder::seeder s(store, cfg);
        s.open();
        std::cout << "listening=" << bind << ':' << s.port() << '\n'
                  << "info_hash=" << hs::seeder::to_hex(store.info_hash()) << '\n'
                  << "size=" << store.size() << '\n'
                  << "pieces=" << store.piece_count() << std::endl;

        rt.spawn(s.listen_loop());
        rt.spawn([&]() -> hs::task<> {
            const int fd = sigfd.get();
            if (duration_ms > 0)
            {
                co_await hs::with_timeout(hs::milliseconds(duration_ms), [fd](hs::abort_token t) {
                    return hs::io_wait(fd, hs::io_direction::in, t);
                });
            }
            else
            {
                co_await hs::io_wait(fd, hs::io_direction::in);
            }
            s.stop();
        });
        rt.run();

        if (stats)
        {
            std::cout << s.stats().to_text() << rt.stats().to_text();
        }
    }
    catch (const std::exception& e)
    {
        std::cerr << "seeder: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
