#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "forumfuse/core.hpp"
#include "forumfuse/fusion.hpp"

namespace forumfuse {

enum class ProviderKind : std::uint8_t { LocalMDC, LlmHttp, Replay, Mock };

constexpr std::string_view to_string(ProviderKind k) noexcept {
    switch (k) {
        case ProviderKind::LocalMDC: return "local";
        case ProviderKind::LlmHttp: return "llm";
        case ProviderKind::Replay: return "replay";
        case ProviderKind::Mock: return "mock";
    }
    return "?";
}

struct ProviderDescriptor {
    std::string provider_id;
    ProviderKind kind = ProviderKind::Mock;
    std::map<std::string, std::string> config;
};

// Anything that turns a post into per-dimension posteriors. Implementations
// must be callable from several threads at once. Failures are reported as
// ProviderUnavailable or ScoringError.
class ScoreProvider {
public:
    virtual ~ScoreProvider() = default;

    virtual const std::string& id() const = 0;
    virtual ProviderKind kind() const = 0;
    virtual ScoreBlock score(const Post& post) const = 0;
};

using ProviderPtr = std::shared_ptr<const ScoreProvider>;

class ProviderRegistry {
public:
    void add(ProviderPtr provider) {
        const std::string id = provider->id();
        if (!providers_.emplace(id, std::move(provider)).second)
            throw ValidationError("provider id '" + id + "' is already registered");
    }

    ProviderPtr get(const std::string& id) const {
        auto it = providers_.find(id);
        if (it == providers_.end()) throw NotFoundError("unknown provider '" + id + "'");
        return it->second;
    }

    bool contains(const std::string& id) const { return providers_.count(id) != 0; }

    std::vector<ProviderPtr> all() const {
        std::vector<ProviderPtr> out;
        for (const auto& [id, p] : providers_) out.push_back(p);
        return out;
    }

    std::vector<ProviderPtr> select(const std::vector<std::string>& ids) const {
        std::vector<ProviderPtr> out;
        for (const auto& id : ids) out.push_back(get(id));
        return out;
    }

private:
    std::map<std::string, ProviderPtr> providers_;
};

}  // namespace forumfuse
