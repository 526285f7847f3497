#include "catch_amalgamated.hpp"

#include "hs/seeder/choke_manager.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

using namespace hs::seeder;

TEST_CASE("quota rounds up with a floor of one", "[choke]")
{
    CHECK(unchoke_quota(0.10, 0) == 0);
    CHECK(unchoke_quota(0.10, 1) == 1);
    CHECK(unchoke_quota(0.10, 9) == 1);
    CHECK(unchoke_quota(0.10, 10) == 1);
    CHECK(unchoke_quota(0.10, 11) == 2);
    CHECK(unchoke_quota(0.10, 20) == 2);
    // exact multiples must not be pushed up by binary rounding
    for (std::size_t n = 10; n <= 1000; n += 10)
    {
        CHECK(unchoke_quota(0.10, n) == n / 10);
    }
    CHECK(unchoke_quota(0.10, 100) == 10);
    CHECK(unchoke_quota(0.25, 7) == 2);
    CHECK(unchoke_quota(1.0, 7) == 7);
}

TEST_CASE("10 peers at 10% rotate one slot per tick", "[choke]")
{
    choke_manager m(0.10);
    for (peer_key k = 1; k <= 10; ++k)
    {
        m.add(k);
    }
    std::vector<peer_key> order;
    for (int t = 0; t < 20; ++t)
    {
        const auto chosen = m.tick();
        REQUIRE(chosen.size() == 1);
        order.push_back(chosen[0]);
    }
    // insertion order, twice over
    for (int t = 0; t < 20; ++t)
    {
        CHECK(order[static_cast<std::size_t>(t)] == static_cast<peer_key>(t % 10 + 1));
    }
}

TEST_CASE("a lone peer is always unchoked", "[choke]")
{
    choke_manager m(0.10);
    m.add(42);
    for (int t = 0; t < 10; ++t)
    {
        CHECK(m.tick() == std::vector<peer_key>{42});
    }
}

TEST_CASE("20 peers over 20 ticks get exactly two slots each", "[choke]")
{
    choke_manager m(0.10);
    for (peer_key k = 0; k < 20; ++k)
    {
        m.add(k);
    }
    std::map<peer_key, int> slots;
    for (int t = 0; t < 20; ++t)
    {
        const auto chosen = m.tick();
        CHECK(chosen.size() == 2);
        // oracle: tick t covers ring positions 2t and 2t+1 (mod 20)
        CHECK(chosen[0] == static_cast<peer_key>((2 * t) % 20));
        CHECK(chosen[1] == static_cast<peer_key>((2 * t + 1) % 20));
        for (auto k : chosen)
        {
            ++slots[k];
        }
    }
    REQUIRE(slots.size() == 20);
    for (const auto& [k, n] : slots)
    {
        CHECK(n == 2);
    }
}

TEST_CASE("new peers join at the back of the rotation", "[choke]")
{
    choke_manager m(0.10);
    for (peer_key k = 1; k <= 5; ++k)
    {
        m.add(k);
    }
    CHECK(m.tick() == std::vector<peer_key>{1});
    CHECK(m.tick() == std::vector<peer_key>{2});
    m.add(99);
    CHECK(m.rotation() == std::vector<peer_key>{3, 4, 5, 1, 2, 99});
    m.remove(4);
    CHECK(m.rotation() == std::vector<peer_key>{3, 5, 1, 2, 99});
    m.remove(3);
    CHECK(m.rotation() == std::vector<peer_key>{5, 1, 2, 99});
    m.add(5);
    CHECK(m.size() == 4);
    m.remove(12345);
    CHECK(m.size() == 4);
}

TEST_CASE("rotation is fair and bounded under random churn", "[choke][property]")
{
    // reference model: an explicit queue where the tick serves the head and
    // requeues it at the tail; joins enqueue at the tail
    std::mt19937 rng(7);
    for (int trial = 0; trial < 100; ++trial)
    {
        const double fraction = std::array{0.10, 0.25, 0.5}[rng() % 3];
        choke_manager m(fraction);
        fairness_monitor mon;
        std::vector<peer_key> model;
        peer_key next = 1;
        for (int t = 0; t < 200; ++t)
        {
            const int ops = static_cast<int>(rng() % 3);
            for (int i = 0; i < ops; ++i)
            {
                if (model.empty() || rng() % 3 != 0)
                {
                    m.add(next);
                    model.push_back(next++);
                }
                else
                {
                    const auto victim = model[rng() % model.size()];
                    m.remove(victim);
                    std::erase(model, victim);
                }
            }
            REQUIRE(m.rotation() == model);

            const auto chosen = m.tick();
            const std::size_t q = model.empty() ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(model.size()) - 1e-9)));
            REQUIRE(chosen.size() == q);
            for (std::size_t i = 0; i < q; ++i)
            {
                CHECK(chosen[i] == model[i]);
            }
            std::rotate(model.begin(), model.begin() + static_cast<std::ptrdiff_t>(q), model.end());

            std::vector<fairness_monitor::sample> samples;
            const std::set<peer_key> set(chosen.begin(), chosen.end());
            for (auto k : model)
            {
                samples.push_back({k, set.contains(k)});
            }
            mon.observe(samples, chosen.size(), fraction);
        }
        CHECK(mon.bound_violations() == 0);
        CHECK(mon.fairness_violations() == 0);
    }
}

TEST_CASE("fairness monitor flags starvation and excess unchokes", "[choke]")
{
    fairness_monitor mon;
    // 10 peers, quota 1: peer 1 served on tick 1, then not again for 11 ticks
    auto tick = [&](peer_key served, std::size_t unchoked_total) {
        std::vector<fairness_monitor::sample> s;
        for (peer_key k = 1; k <= 10; ++k)
        {
            s.push_back({k, k == served});
        }
        mon.observe(s, unchoked_total, 0.10);
    };
    tick(1, 1);
    for (int i = 0; i < 10; ++i)
    {
        tick(2, 1);
    }
    CHECK(mon.fairness_violations() == 0);
    tick(1, 1);
    CHECK(mon.fairness_violations() == 1);
    CHECK(mon.max_wait_ticks() == 11);
    CHECK(mon.bound_violations() == 0);
    tick(3, 2);
    CHECK(mon.bound_violations() == 1);
    CHECK(mon.max_unchoked() == 2);
}
