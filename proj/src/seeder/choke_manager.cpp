#include "hs/seeder/choke_manager.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace hs::seeder {

std::size_t unchoke_quota(double fraction, std::size_t interested) noexcept
{
    if (interested == 0)
    {
        return 0;
    }
    // 0.1 * 30 is 3.0000000000000004 in binary; shave the representation
    // error before rounding up
    const double raw = fraction * static_cast<double>(interested);
    const auto q = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(q, 1, interested);
}

choke_manager::choke_manager(double unchoked_fraction) : fraction_(unchoked_fraction)
{
    if (!(unchoked_fraction > 0.0 && unchoked_fraction <= 1.0))
    {
        throw std::invalid_argument("unchoked fraction must be in (0, 1]");
    }
}

void choke_manager::add(peer_key key)
{
    if (contains(key))
    {
        return;
    }
    ring_.insert(ring_.begin() + static_cast<std::ptrdiff_t>(cursor_), key);
    cursor_ = (cursor_ + 1) % ring_.size();
}

void choke_manager::remove(peer_key key)
{
    const auto it = std::find(ring_.begin(), ring_.end(), key);
    if (it == ring_.end())
    {
        return;
    }
    const auto idx = static_cast<std::size_t>(it - ring_.begin());
    ring_.erase(it);
    if (idx < cursor_)
    {
        --cursor_;
    }
    if (cursor_ >= ring_.size())
    {
        cursor_ = 0;
    }
}

bool choke_manager::contains(peer_key key) const
{
    return std::find(ring_.begin(), ring_.end(), key) != ring_.end();
}

std::vector<peer_key> choke_manager::tick()
{
    const std::size_t n = ring_.size();
    const std::size_t q = quota();
    std::vector<peer_key> out;
    out.reserve(q);
    for (std::size_t i = 0; i < q; ++i)
    {
        out.push_back(ring_[(cursor_ + i) % n]);
    }
    if (n > 0)
    {
        cursor_ = (cursor_ + q) % n;
    }
    return out;
}

std::vector<peer_key> choke_manager::rotation() const
{
    std::vector<peer_key> out;
    out.reserve(ring_.size());
    for (std::size_t i = 0; i < ring_.size(); ++i)
    {
        out.push_back(ring_[(cursor_ + i) % ring_.size()]);
    }
    return out;
}

void fairness_monitor::observe(const std::vector<sample>& interested, std::size_t unchoked_total, double fraction)
{
    ++ticks_;
    const std::size_t n = interested.size();
    const std::size_t q = unchoke_quota(fraction, n);
    max_unchoked_ = std::max(max_unchoked_, unchoked_total);
    if (unchoked_total > std::max<std::size_t>(1, q))
    {
        ++bound_violations_;
    }

    std::unordered_set<peer_key> present;
    present.reserve(n);
    for (const auto& s : interested)
    {
        present.insert(s.key);
        auto& w = waits_.try_emplace(s.key, wait{0, n, 0}).first->second;
        ++w.ticks;
        if (s.unchoked)
        {
            max_wait_ = std::max(max_wait_, w.ticks);
            if (w.quota_sum >= w.n_start)
            {
                ++fairness_violations_;
            }
            w = wait{0, n, 0};
        }
        else
        {
            w.quota_sum += q;
        }
    }
    std::erase_if(waits_, [&](const auto& kv) { return !present.contains(kv.first); });
}

} // namespace hs::seeder
