#pragma once

#include <cstddef>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace hs::seeder {

using peer_key = std::uint64_t;

/// max(1, ceil(fraction * interested)), or 0 with nobody interested.
std::size_t unchoke_quota(double fraction, std::size_t interested) noexcept;

/// Round-robin unchoke rotation over the interested peers.
///
/// The ring is walked from a cursor; each tick unchokes the next `quota`
/// peers and moves the cursor past them. A newly interested peer goes in
/// just before the cursor, i.e. at the back of the current rotation.
class choke_manager
{
public:
    explicit choke_manager(double unchoked_fraction = 0.10);

    /// No-op if already present.
    void add(peer_key key);
    /// No-op if absent.
    void remove(peer_key key);

    [[nodiscard]] bool contains(peer_key key) const;
    [[nodiscard]] std::size_t size() const noexcept { return ring_.size(); }
    [[nodiscard]] std::size_t quota() const noexcept { return unchoke_quota(fraction_, ring_.size()); }
    [[nodiscard]] double fraction() const noexcept { return fraction_; }

    /// Peers to hold unchoked until the next tick, in rotation order.
    std::vector<peer_key> tick();

    /// Ring contents in rotation order, starting at the cursor.
    [[nodiscard]] std::vector<peer_key> rotation() const;

private:
    double fraction_;
    std::vector<peer_key> ring_;
    std::size_t cursor_{0};
};

/// Checks what peers actually experienced, tick by tick: the unchoke count
/// bound and how long each interested peer waited for a slot.
///
/// A wait that starts with n peers interested is late if the quotas of the
/// ticks it sat through already add up to n. Joins land behind the waiter
/// and departures only shorten its distance, so this holds under churn; with
/// a stable swarm it is the ceil(n / quota) tick bound.
class fairness_monitor
{
public:
    struct sample
    {
        peer_key key;
        bool unchoked;
    };

    /// `interested`: every interested peer with its state after the tick.
    /// `unchoked_total`: all unchoked peers, interested or not.
    void observe(const std::vector<sample>& interested, std::size_t unchoked_total, double fraction);

    [[nodiscard]] std::uint64_t ticks() const noexcept { return ticks_; }
    [[nodiscard]] std::uint64_t bound_violations() const noexcept { return bound_violations_; }
    [[nodiscard]] std::uint64_t fairness_violations() const noexcept { return fairness_violations_; }
    [[nodiscard]] std::uint64_t max_wait_ticks() const noexcept { return max_wait_; }
    [[nodiscard]] std::size_t max_unchoked() const noexcept { return max_unchoked_; }

private:
    struct wait
    {
        std::uint64_t ticks{0};
        std::size_t n_start{0};
        std::size_t quota_sum{0};
    };

    std::unordered_map<peer_key, wait> waits_;
    std::uint64_t ticks_{0};
    std::uint64_t bound_violations_{0};
    std::uint64_t fairness_violations_{0};
    std::uint64_t max_wait_{0};
    std::size_t max_unchoked_{0};
};

} // namespace hs::seeder
