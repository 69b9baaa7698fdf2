#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forumfuse/core.hpp"

namespace forumfuse {

inline constexpr double kProbabilitySumTolerance = 1e-9;

// Per-class probabilities for one dimension.
class ScoreVector {
public:
    ScoreVector() = default;
    explicit ScoreVector(std::vector<double> probs) : probs_(std::move(probs)) {}
    ScoreVector(std::initializer_list<double> probs) : probs_(probs) {}

    // Scales non-negative weights to sum to one; an all-zero input becomes
    // the uniform distribution.
    static ScoreVector normalized(std::vector<double> weights) {
        double total = 0;
        for (double w : weights) total += w;
        if (!(total > 0) || !std::isfinite(total)) {
            std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(weights.size()));
        } else {
            for (double& w : weights) w /= total;
        }
        return ScoreVector(std::move(weights));
    }

    static ScoreVector uniform(std::size_t class_count) {
        return ScoreVector(std::vector<double>(class_count, 1.0 / static_cast<double>(class_count)));
    }

    // Binary vector [1 - p, p] for probability p of class 1.
    static ScoreVector binary(double p_yes) { return ScoreVector({1.0 - p_yes, p_yes}); }

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const noexcept { return probs_[i]; }
    const std::vector<double>& probs() const noexcept { return probs_; }

    friend bool operator==(const ScoreVector&, const ScoreVector&) = default;

    bool is_valid() const noexcept {
        if (probs_.empty()) return false;
        double total = 0;
        for (double p : probs_) {
            if (!(p >= 0.0) || !std::isfinite(p)) return false;
            total += p;
        }
        return std::abs(total - 1.0) <= kProbabilitySumTolerance;
    }

    // Index of the largest entry; ties resolve to the lowest index.
    std::size_t argmax() const noexcept {
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs_.size(); ++i) {
            if (probs_[i] > probs_[best]) best = i;
        }
        return best;
    }

    double max() const noexcept { return probs_[argmax()]; }

    // Top probability minus runner-up; zero for a single class.
    double margin() const noexcept {
        if (probs_.size() < 2) return 0.0;
        std::vector<double> sorted = probs_;
        std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
        return sorted[0] - sorted[1];
    }

private:
    std::vector<double> probs_;
};

using PriorVector = ScoreVector;
using PerDimensionPriors = std::array<PriorVector, kDimensionCount>;

struct ScoreBlock {
    std::string provider_id;
    std::array<ScoreVector, kDimensionCount> per_dimension;

    const ScoreVector& operator[](Dimension d) const noexcept { return per_dimension[index_of(d)]; }

    friend bool operator==(const ScoreBlock&, const ScoreBlock&) = default;

    void validate() const {
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            if (!per_dimension[d].is_valid())
                throw ValidationError("provider '" + provider_id + "' produced an invalid score vector for dimension '" +
                                      std::string(kDimensionNames[d]) + "'");
        }
    }

    // Argmax class per dimension as a binary label vector; only meaningful
    // when every dimension has two classes.
    LabelVector labels() const {
        LabelVector out;
        for (std::size_t d = 0; d < kDimensionCount; ++d) out.labels[d] = static_cast<std::uint8_t>(per_dimension[d].argmax());
        return out;
    }
};

enum class RuleKind : std::uint8_t { Product, ProductPriorCorrected, Sum, Max, Min, Median, MajorityVote, BordaCount };

inline constexpr std::array<RuleKind, 8> kAllRuleKinds = {RuleKind::Product, RuleKind::ProductPriorCorrected,
                                                          RuleKind::Sum,     RuleKind::Max,
                                                          RuleKind::Min,     RuleKind::Median,
                                                          RuleKind::MajorityVote, RuleKind::BordaCount};

constexpr std::string_view to_string(RuleKind k) noexcept {
    switch (k) {
        case RuleKind::Product: return "product";
        case RuleKind::ProductPriorCorrected: return "product-prior-corrected";
        case RuleKind::Sum: return "sum";
        case RuleKind::Max: return "max";
        case RuleKind::Min: return "min";
        case RuleKind::Median: return "median";
        case RuleKind::MajorityVote: return "majority";
        case RuleKind::BordaCount: return "borda";
    }
    return "?";
}

inline RuleKind parse_rule_kind(std::string_view name) {
    for (RuleKind k : kAllRuleKinds) {
        if (to_string(k) == name) return k;
    }
    if (name == "majority-vote" || name == "vote") return RuleKind::MajorityVote;
    if (name == "prior-corrected") return RuleKind::ProductPriorCorrected;
    throw ValidationError("unknown fusion rule '" + std::string(name) + "'");
}

struct FusionRule {
    RuleKind kind = RuleKind::Product;
    double epsilon_floor = 1e-6;

    void validate() const {
        if (!(epsilon_floor > 0.0 && epsilon_floor <= 1e-2)) throw ValidationError("epsilon_floor must lie in (0, 1e-2]");
    }
};

struct DimensionVerdict {
    ScoreVector fused;
    std::size_t label = 0;
    double margin = 0.0;

    friend bool operator==(const DimensionVerdict&, const DimensionVerdict&) = default;
};

struct FusedVerdict {
    std::array<DimensionVerdict, kDimensionCount> per_dimension;
    double confidence = 0.0;

    const DimensionVerdict& operator[](Dimension d) const noexcept { return per_dimension[index_of(d)]; }

    LabelVector labels() const {
        LabelVector out;
        for (std::size_t d = 0; d < kDimensionCount; ++d) out.labels[d] = static_cast<std::uint8_t>(per_dimension[d].label);
        return out;
    }

    friend bool operator==(const FusedVerdict&, const FusedVerdict&) = default;
};

// Smallest fused top-class probability over the six dimensions: the weakest
// dimension gates the whole post.
inline double min_dimension_max_prob(const FusedVerdict& v) {
    double c = 1.0;
    for (const auto& d : v.per_dimension) c = std::min(c, d.fused.max());
    return c;
}

namespace detail {

inline void check_blocks(std::span<const ScoreBlock> blocks) {
    if (blocks.empty()) throw EmptyEnsembleError();
    for (const auto& b : blocks) b.validate();
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const std::size_t k = blocks.front().per_dimension[d].size();
        for (const auto& b : blocks) {
            if (b.per_dimension[d].size() != k)
                throw ValidationError("provider '" + b.provider_id + "' disagrees on the class count of dimension '" +
                                      std::string(kDimensionNames[d]) + "'");
        }
    }
}

inline DimensionVerdict make_dimension_verdict(ScoreVector fused) {
    DimensionVerdict v;
    v.label = fused.argmax();
    v.margin = fused.margin();
    v.fused = std::move(fused);
    return v;
}

// The provider scores for class `j` of dimension `d`, sorted so that every
// aggregate below is exactly invariant under provider permutation.
inline std::vector<double> sorted_column(std::span<const ScoreBlock> blocks, std::size_t d, std::size_t j) {
    std::vector<double> col;
    col.reserve(blocks.size());
    for (const auto& b : blocks) col.push_back(b.per_dimension[d][j]);
    std::sort(col.begin(), col.end());
    return col;
}

// Product of the provider scores per class, evaluated as a sum of logs after
// flooring at epsilon so that one hard zero cannot veto a class. With
// `prior`, each class is additionally divided by prior^(L-1).
inline ScoreVector log_product(std::span<const ScoreBlock> blocks, std::size_t d, double epsilon,
                               const PriorVector* prior) {
    const std::size_t k = blocks.front().per_dimension[d].size();
    const double extra_priors = static_cast<double>(blocks.size()) - 1.0;
    std::vector<double> logs(k);
    for (std::size_t j = 0; j < k; ++j) {
        double acc = 0;
        for (double s : sorted_column(blocks, d, j)) acc += std::log(std::max(s, epsilon));
        if (prior) acc -= extra_priors * std::log(std::max((*prior)[j], epsilon));
        logs[j] = acc;
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    std::vector<double> w(k);
    for (std::size_t j = 0; j < k; ++j) w[j] = std::exp(logs[j] - top);
    return ScoreVector::normalized(std::move(w));
}

inline double median_of_sorted(const std::vector<double>& v) {
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ScoreVector vote_distribution(std::span<const ScoreBlock> blocks, std::size_t d) {
    std::vector<double> votes(blocks.front().per_dimension[d].size(), 0.0);
    for (const auto& b : blocks) votes[b.per_dimension[d].argmax()] += 1.0;
    return ScoreVector::normalized(std::move(votes));
}

// Borda points for one provider: the class at rank r (0 = best) of k gets
// k-1-r; classes with equal scores share the mean of their rank points.
inline std::vector<double> borda_points(const ScoreVector& s) {
    const std::size_t k = s.size();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    std::vector<double> points(k, 0.0);
    for (std::size_t r = 0; r < k;) {
        std::size_t end = r + 1;
        while (end < k && s[order[end]] == s[order[r]]) ++end;
        double total = 0;
        for (std::size_t q = r; q < end; ++q) total += static_cast<double>(k - 1 - q);
        const double shared = total / static_cast<double>(end - r);
        for (std::size_t q = r; q < end; ++q) points[order[q]] = shared;
        r = end;
    }
    return points;
}

inline ScoreVector borda_distribution(std::span<const ScoreBlock> blocks, std::size_t d) {
    const std::size_t k = blocks.front().per_dimension[d].size();
    std::vector<std::vector<double>> per_provider;
    per_provider.reserve(blocks.size());
    for (const auto& b : blocks) per_provider.push_back(borda_points(b.per_dimension[d]));
    std::vector<double> totals(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> col;
        for (const auto& p : per_provider) col.push_back(p[j]);
        std::sort(col.begin(), col.end());
        for (double x : col) totals[j] += x;
    }
    return ScoreVector::normalized(std::move(totals));
}

}  // namespace detail

// Measurement-level fusion. Product multiplies the provider scores per
// class and renormalizes; ProductPriorCorrected further divides by
// prior^(L-1) (uniform priors when none are given). MajorityVote and
// BordaCount are routed to their label- and rank-level counterparts and
// expressed as normalized vote or point shares. A single block is returned
// unchanged by every measurement rule.
inline FusedVerdict fuse_measurement(std::span<const ScoreBlock> blocks, const FusionRule& rule = {},
                                     const std::optional<PerDimensionPriors>& priors = std::nullopt) {
    rule.validate();
    detail::check_blocks(blocks);
    if (priors) {
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            if (!(*priors)[d].is_valid() || (*priors)[d].size() != blocks.front().per_dimension[d].size())
                throw ValidationError("invalid prior for dimension '" + std::string(kDimensionNames[d]) + "'");
        }
    }

    FusedVerdict out;
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const std::size_t k = blocks.front().per_dimension[d].size();
        ScoreVector fused;
        const bool measurement = rule.kind != RuleKind::MajorityVote && rule.kind != RuleKind::BordaCount;
        if (measurement && blocks.size() == 1) {
            fused = blocks.front().per_dimension[d];
        } else {
            switch (rule.kind) {
                case RuleKind::Product:
                    fused = detail::log_product(blocks, d, rule.epsilon_floor, nullptr);
                    break;
                case RuleKind::ProductPriorCorrected: {
                    const PriorVector prior = priors ? (*priors)[d] : ScoreVector::uniform(k);
                    fused = detail::log_product(blocks, d, rule.epsilon_floor, &prior);
                    break;
                }
                case RuleKind::Sum:
                case RuleKind::Max:
                case RuleKind::Min:
                case RuleKind::Median: {
                    std::vector<double> agg(k);
                    for (std::size_t j = 0; j < k; ++j) {
                        const auto col = detail::sorted_column(blocks, d, j);
                        switch (rule.kind) {
                            case RuleKind::Sum: agg[j] = std::accumulate(col.begin(), col.end(), 0.0); break;
                            case RuleKind::Max: agg[j] = col.back(); break;
                            case RuleKind::Min: agg[j] = col.front(); break;
                            default: agg[j] = detail::median_of_sorted(col); break;
                        }
                    }
                    fused = ScoreVector::normalized(std::move(agg));
                    break;
                }
                case RuleKind::MajorityVote:
                    fused = detail::vote_distribution(blocks, d);
                    break;
                case RuleKind::BordaCount:
                    fused = detail::borda_distribution(blocks, d);
                    break;
            }
        }
        out.per_dimension[d] = detail::make_dimension_verdict(std::move(fused));
    }
    out.confidence = min_dimension_max_prob(out);
    return out;
}

inline FusedVerdict fuse_measurement(const std::vector<ScoreBlock>& blocks, const FusionRule& rule = {},
                                     const std::optional<PerDimensionPriors>& priors = std::nullopt) {
    return fuse_measurement(std::span<const ScoreBlock>(blocks), rule, priors);
}

using ClassIndices = std::array<std::size_t, kDimensionCount>;

// Abstract-level fusion: every provider votes its argmax class; the most
// voted class wins and ties go to the lowest class index (0 = "no").
inline ClassIndices fuse_abstract(std::span<const ScoreBlock> blocks) {
    detail::check_blocks(blocks);
    ClassIndices out{};
    for (std::size_t d = 0; d < kDimensionCount; ++d) out[d] = detail::vote_distribution(blocks, d).argmax();
    return out;
}

inline LabelVector to_label_vector(const ClassIndices& idx) {
    LabelVector out;
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        if (idx[d] > 1) throw ValidationError("class index does not fit a binary label vector");
        out.labels[d] = static_cast<std::uint8_t>(idx[d]);
    }
    return out;
}

// Rank-level fusion by Borda count, normalized to a distribution.
inline FusedVerdict fuse_rank(std::span<const ScoreBlock> blocks) {
    return fuse_measurement(blocks, FusionRule{RuleKind::BordaCount});
}

}  // namespace forumfuse
