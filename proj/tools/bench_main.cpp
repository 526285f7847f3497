// bench: spawn / switch microbenchmarks and the simulated-peer load generator.

#include "hs/bench/micro.hpp"
#include "hs/bench/sim_peers.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Runtime and seeder benchmarks"};
    app.require_subcommand(1);

    std::size_t n = 100000;
    auto* spawn = app.add_subcommand("spawn", "Spawn n parked tasks; report rate and per-task RSS");
    spawn->add_option("--n", n, "Task count");

    std::size_t pairs = 1;
    std::size_t iters = 1000000;
    auto* sw = app.add_subcommand("switch", "Ping-pong yields; report switches per second");
    sw->add_option("--pairs", pairs, "Task pairs");
    sw->add_option("--iters", iters, "Yields per task");

    hs::bench::sim_config cfg;
    std::string pattern = "sequential";
    std::string target;
    std::string file;
    std::size_t piece_length = hs::seeder::content_store::default_piece_length;
    double rate = 0;
    auto* peers = app.add_subcommand("peers", "Drive simulated downloaders against a running seeder");
    peers->add_option("--count", cfg.peer_count, "Number of peers");
    peers->add_option("--pattern", pattern, "sequential | random")
        ->check(CLI::IsMember({"sequential", "random"}));
    peers->add_option("--seed", cfg.seed, "Seed for random plans");
    peers->add_option("--target", target, "host:port of the seeder")->required();
    peers->add_option("--file", file, "Local copy of the served file")->required()->check(CLI::ExistingFile);
    peers->add_option("--piece-length", piece_length, "Piece length the seeder uses");
    peers->add_option("--requests-per-peer", cfg.requests_per_peer, "0: whole file / 64 random chunks");
    peers->add_option("--pipeline", cfg.pipeline, "Outstanding requests per peer");
    peers->add_option("--rate-limit", rate, "Per-peer bytes/sec (0: unlimited)");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (spawn->parsed())
        {
            std::cout << hs::bench::bench_spawn(n).to_text();
            return 0;
        }
        if (sw->parsed())
        {
            std::cout << hs::bench::bench_switch(pairs, iters).to_text();
            return 0;
        }

        const auto colon = target.rfind(':');
        if (colon == std::string::npos)
        {
            std::cerr << "bench: --target must be host:port\n";
            return 2;
        }
        cfg.pattern = pattern == "random" ? hs::bench::request_pattern::random_chunks
                                          : hs::bench::request_pattern::sequential;
        if (rate > 0)
        {
            cfg.rate_limit = rate;
        }
        const hs::seeder::content_store store(file, piece_length);
        const auto report = hs::bench::sim_peers(cfg,
                                                 target.substr(0, colon),
                                                 static_cast<std::uint16_t>(std::stoul(target.substr(colon + 1))),
                                                 store);
        std::cout << report.to_text();
        // a corrupted payload fails the run, not just the report
        return report.mismatches == 0 && report.failed_peers == 0 ? 0 : 1;
    }
    catch (const std::exception& e)
    {
        std::cerr << "bench: " << e.what() << '\n';
        return 1;
    }
}
