#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <string_view>

#include <boost/math/distributions/normal.hpp>

#include "forumfuse/providers/provider.hpp"

namespace forumfuse {

// 64-bit FNV-1a; stable across platforms, used to derive per-post seeds.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) noexcept {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Deterministic test double. The scoring function sees the full post,
// gold labels included.
class MockProvider final : public ScoreProvider {
public:
    using ScoreFn = std::function<ScoreBlock(const Post&)>;

    MockProvider(std::string id, ScoreFn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    const std::string& id() const override { return id_; }
    ProviderKind kind() const override { return ProviderKind::Mock; }

    ScoreBlock score(const Post& post) const override {
        ScoreBlock b = fn_(post);
        b.provider_id = id_;
        b.validate();
        return b;
    }

    // Same block for every post.
    static std::shared_ptr<MockProvider> fixed(std::string id, ScoreBlock block) {
        return std::make_shared<MockProvider>(std::move(id), [block](const Post&) { return block; });
    }

    static std::shared_ptr<MockProvider> fixed(std::string id, const ScoreVector& every_dimension) {
        ScoreBlock b;
        b.per_dimension.fill(every_dimension);
        return fixed(std::move(id), b);
    }

    // Echoes the gold labels as one-hot vectors; unlabeled posts fail.
    static std::shared_ptr<MockProvider> oracle(std::string id) {
        return std::make_shared<MockProvider>(std::move(id), [](const Post& p) {
            if (!p.gold) throw ProviderUnavailable("oracle mock needs gold labels for post '" + p.post_id + "'");
            ScoreBlock b;
            for (std::size_t d = 0; d < kDimensionCount; ++d)
                b.per_dimension[d] = (*p.gold)[d] ? ScoreVector{0.0, 1.0} : ScoreVector{1.0, 0.0};
            return b;
        });
    }

    // Noisy but calibrated scorer: per (post, dimension) it draws a log-odds
    // z = +-mu + N(0, 1) around the gold label and emits sigmoid(z), with mu
    // chosen so that argmax disagrees with gold at `error_rate`. Draws depend
    // only on (seed, id, post_id, dimension), never on call order.
    static std::shared_ptr<MockProvider> noisy(std::string id, double error_rate, std::uint64_t seed) {
        if (!(error_rate > 0.0 && error_rate < 0.5)) throw ValidationError("error_rate must lie in (0, 0.5)");
        const double mu = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - error_rate);
        const std::string tag = id;
        return std::make_shared<MockProvider>(std::move(id), [mu, seed, tag](const Post& p) {
            if (!p.gold) throw ProviderUnavailable("noisy mock needs gold labels for post '" + p.post_id + "'");
            ScoreBlock b;
            for (std::size_t d = 0; d < kDimensionCount; ++d) {
                std::uint64_t h = fnv1a(tag, seed * 0x9E3779B97F4A7C15ull + 1);
                h = fnv1a(p.post_id, h);
                h = fnv1a(kDimensionNames[d], h);
                std::mt19937_64 rng(h);
                std::normal_distribution<double> noise(0.0, 1.0);
                const double z = ((*p.gold)[d] ? mu : -mu) + noise(rng);
                b.per_dimension[d] = ScoreVector::binary(1.0 / (1.0 + std::exp(-z)));
            }
            return b;
        });
    }

    // Fails for the listed posts (all posts when the set is empty) and
    // returns `fallback` otherwise.
    static std::shared_ptr<MockProvider> failing(std::string id, std::set<std::string> post_ids = {},
                                                 ScoreVector fallback = ScoreVector::uniform(2)) {
        return std::make_shared<MockProvider>(std::move(id), [post_ids, fallback](const Post& p) {
            if (post_ids.empty() || post_ids.count(p.post_id))
                throw ProviderUnavailable("mock outage for post '" + p.post_id + "'");
            ScoreBlock b;
            b.per_dimension.fill(fallback);
            return b;
        });
    }

private:
    std::string id_;
    ScoreFn fn_;
};

}  // namespace forumfuse
