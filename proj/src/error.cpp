#include "hs/error.hpp"

namespace hs {
namespace {

class runtime_category_impl final : public std::error_category
{
public:
    const char* name() const noexcept override { return "hs"; }

    std::string message(int ev) const override
    {
        switch (static_cast<errc>(ev))
        {
            case errc::runtime_shut_down:
                return "runtime shut down";
            case errc::already_running:
                return "event loop already running";
            case errc::detached_mode_violation:
                return "operation requires an attached task";
            case errc::not_in_task:
                return "operation requires a current task";
            case errc::invalid_descriptor:
                return "invalid descriptor";
            case errc::duplicate_waiter:
                return "descriptor already has a waiter in this direction";
            case errc::broken_pipe:
                return "broken pipe";
        }
        return "unknown hs error";
    }
};

} // namespace

const std::error_category& runtime_category() noexcept
{
    static const runtime_category_impl instance;
    return instance;
}

} // namespace hs
