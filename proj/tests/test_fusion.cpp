#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "forumfuse/fusion.hpp"
#include "test_helpers.hpp"

using namespace forumfuse;
using forumfuse::testing::random_block;
using forumfuse::testing::uniform_block;

namespace {

// Direct linear-space product, independent of the log-space path.
std::vector<double> linear_product(const std::vector<ScoreBlock>& blocks, std::size_t d) {
    std::vector<double> w(blocks.front().per_dimension[d].size(), 1.0);
    for (const auto& b : blocks)
        for (std::size_t j = 0; j < w.size(); ++j) w[j] *= b.per_dimension[d][j];
    double total = 0;
    for (double x : w) total += x;
    for (double& x : w) x /= total;
    return w;
}

}  // namespace

TEST(Fusion, SingleBlockIsIdentityForMeasurementRules) {
    std::mt19937_64 rng(1);
    const auto block = random_block(rng, "only", 2);
    for (RuleKind k : {RuleKind::Product, RuleKind::ProductPriorCorrected, RuleKind::Sum, RuleKind::Max, RuleKind::Min,
                       RuleKind::Median}) {
        const auto v = fuse_measurement({block}, FusionRule{k});
        for (std::size_t d = 0; d < kDimensionCount; ++d) EXPECT_EQ(v.per_dimension[d].fused, block.per_dimension[d]);
    }
}

TEST(Fusion, TwoIdenticalBinaryVectorsProduct) {
    const auto b = uniform_block("a", {0.8, 0.2});
    const auto v = fuse_measurement({b, b}, FusionRule{RuleKind::Product});
    // 0.64 / 0.68 and 0.04 / 0.68
    EXPECT_NEAR(v[Dimension::Urgency].fused[0], 16.0 / 17.0, 1e-12);
    EXPECT_NEAR(v[Dimension::Urgency].fused[1], 1.0 / 17.0, 1e-12);
    EXPECT_NEAR(v[Dimension::Urgency].fused[0], 0.9412, 1e-4);
    EXPECT_EQ(v[Dimension::Urgency].label, 0u);
}

TEST(Fusion, MedianOfThree) {
    const auto v = fuse_measurement({uniform_block("a", {0.6, 0.4}), uniform_block("b", {0.7, 0.3}),
                                     uniform_block("c", {0.2, 0.8})},
                                    FusionRule{RuleKind::Median});
    EXPECT_NEAR(v[Dimension::Opinion].fused[0], 0.6, 1e-12);
    EXPECT_NEAR(v[Dimension::Opinion].fused[1], 0.4, 1e-12);
}

TEST(Fusion, UniformInputsStayUniform) {
    for (std::size_t k : {2u, 7u}) {
        const auto u = uniform_block("u", ScoreVector::uniform(k));
        for (RuleKind rule : {RuleKind::Product, RuleKind::Sum, RuleKind::Max, RuleKind::Min, RuleKind::Median}) {
            const auto v = fuse_measurement({u, u, u}, FusionRule{rule});
            for (const auto& d : v.per_dimension)
                for (double p : d.fused.probs()) EXPECT_NEAR(p, 1.0 / static_cast<double>(k), 1e-12);
        }
    }
}

TEST(Fusion, HardZeroDoesNotVeto) {
    const auto v = fuse_measurement({uniform_block("a", {0.0, 1.0}), uniform_block("b", {0.999, 0.001}),
                                     uniform_block("c", {0.999, 0.001})},
                                    FusionRule{RuleKind::Product});
    EXPECT_GT(v[Dimension::Question].fused[0], 0.0);
    EXPECT_TRUE(v[Dimension::Question].fused.is_valid());
}

TEST(Fusion, MinOfDisjointVectorsFallsBackToUniform) {
    const auto v = fuse_measurement({uniform_block("a", {0.0, 1.0}), uniform_block("b", {1.0, 0.0})},
                                    FusionRule{RuleKind::Min});
    EXPECT_DOUBLE_EQ(v[Dimension::Answer].fused[0], 0.5);
    EXPECT_EQ(v[Dimension::Answer].label, 0u);
}

TEST(Fusion, EmptyEnsembleRejected) {
    EXPECT_THROW(fuse_measurement(std::vector<ScoreBlock>{}), EmptyEnsembleError);
    EXPECT_THROW(fuse_abstract({}), EmptyEnsembleError);
}

TEST(Fusion, InvalidVectorNamesProviderAndDimension) {
    auto bad = uniform_block("llm", {0.5, 0.5});
    bad.per_dimension[index_of(Dimension::Confusion)] = ScoreVector({0.7, 0.7});
    try {
        fuse_measurement({uniform_block("local", {0.5, 0.5}), bad});
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("llm"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("confusion"), std::string::npos);
    }
}

TEST(Fusion, MismatchedClassCountsRejected) {
    EXPECT_THROW(fuse_measurement({uniform_block("a", {0.5, 0.5}), uniform_block("b", ScoreVector::uniform(3))}),
                 ValidationError);
}

TEST(Fusion, EpsilonFloorBounds) {
    const auto b = uniform_block("a", {0.5, 0.5});
    EXPECT_THROW(fuse_measurement({b}, FusionRule{RuleKind::Product, 0.0}), ValidationError);
    EXPECT_THROW(fuse_measurement({b}, FusionRule{RuleKind::Product, 0.02}), ValidationError);
    EXPECT_NO_THROW(fuse_measurement({b}, FusionRule{RuleKind::Product, 1e-2}));
}

TEST(Fusion, LogProductMatchesLinearProduct) {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> l_dist(1, 10);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoreBlock> blocks;
        const int l = l_dist(rng);
        for (int i = 0; i < l; ++i) blocks.push_back(random_block(rng, "p" + std::to_string(i), 7, 1e-5));
        const auto v = fuse_measurement(blocks, FusionRule{RuleKind::Product});
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            const auto ref = linear_product(blocks, d);
            for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(v.per_dimension[d].fused[j], ref[j], 1e-9);
        }
    }
}

TEST(Fusion, UniformPriorCorrectionEqualsPlainProduct) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ScoreBlock> blocks;
        for (int i = 0; i < 4; ++i) blocks.push_back(random_block(rng, "p" + std::to_string(i), 2));
        const auto plain = fuse_measurement(blocks, FusionRule{RuleKind::Product});
        const auto corrected = fuse_measurement(blocks, FusionRule{RuleKind::ProductPriorCorrected});
        for (std::size_t d = 0; d < kDimensionCount; ++d)
            for (std::size_t j = 0; j < 2; ++j)
                EXPECT_NEAR(plain.per_dimension[d].fused[j], corrected.per_dimension[d].fused[j], 1e-12);
    }
}

TEST(Fusion, NonUniformPriorCorrection) {
    // Two providers at [0.6, 0.4] with prior [0.8, 0.2]:
    // 0.36 / 0.8 = 0.45 and 0.16 / 0.2 = 0.8 -> [0.45, 0.8] / 1.25.
    PerDimensionPriors priors;
    priors.fill(ScoreVector({0.8, 0.2}));
    const auto b = uniform_block("a", {0.6, 0.4});
    const auto v = fuse_measurement({b, b}, FusionRule{RuleKind::ProductPriorCorrected}, priors);
    EXPECT_NEAR(v[Dimension::Sentiment].fused[0], 0.36, 1e-12);
    EXPECT_NEAR(v[Dimension::Sentiment].fused[1], 0.64, 1e-12);
    EXPECT_EQ(v[Dimension::Sentiment].label, 1u);
}

TEST(Fusion, SumMaxMinHandCases) {
    const std::vector<ScoreBlock> blocks = {uniform_block("a", {0.9, 0.1}), uniform_block("b", {0.3, 0.7})};
    // Sum [1.2, 0.8] / 2; max [0.9, 0.7] / 1.6; min [0.3, 0.1] / 0.4.
    EXPECT_NEAR(fuse_measurement(blocks, FusionRule{RuleKind::Sum})[Dimension::Opinion].fused[0], 0.6, 1e-12);
    EXPECT_NEAR(fuse_measurement(blocks, FusionRule{RuleKind::Max})[Dimension::Opinion].fused[0], 0.5625, 1e-12);
    EXPECT_NEAR(fuse_measurement(blocks, FusionRule{RuleKind::Min})[Dimension::Opinion].fused[0], 0.75, 1e-12);
}

TEST(Fusion, MarginAndConfidence) {
    ScoreBlock b = uniform_block("a", {0.9, 0.1});
    b.per_dimension[index_of(Dimension::Urgency)] = ScoreVector({0.3, 0.7});
    const auto v = fuse_measurement({b});
    EXPECT_NEAR(v[Dimension::Opinion].margin, 0.8, 1e-12);
    EXPECT_EQ(v[Dimension::Urgency].label, 1u);
    EXPECT_NEAR(v.confidence, 0.7, 1e-12);
}

TEST(AbstractFusion, MajorityAndTieBreak) {
    const auto yes = uniform_block("y", {0.2, 0.8});
    const auto no = uniform_block("n", {0.8, 0.2});
    EXPECT_EQ(fuse_abstract(std::vector{yes, yes, no})[index_of(Dimension::Urgency)], 1u);
    EXPECT_EQ(fuse_abstract(std::vector{yes, no})[index_of(Dimension::Urgency)], 0u);
    EXPECT_EQ(to_label_vector(fuse_abstract(std::vector{yes})), yes.labels());
}

TEST(AbstractFusion, ExhaustiveAgainstVoteCountOracle) {
    for (std::size_t l = 1; l <= 4; ++l) {
        for (unsigned mask = 0; mask < (1u << l); ++mask) {
            std::vector<ScoreBlock> blocks;
            std::size_t ones = 0;
            for (std::size_t i = 0; i < l; ++i) {
                const bool yes = (mask >> i) & 1u;
                ones += yes;
                blocks.push_back(uniform_block("p" + std::to_string(i), yes ? ScoreVector{0.0, 1.0} : ScoreVector{1.0, 0.0}));
            }
            const std::size_t expected = ones > l - ones ? 1 : 0;
            const auto labels = fuse_abstract(blocks);
            for (auto x : labels) EXPECT_EQ(x, expected);
            EXPECT_EQ(fuse_measurement(blocks, FusionRule{RuleKind::MajorityVote}).per_dimension[0].label, expected);
        }
    }
}

TEST(RankFusion, BordaHandCase) {
    ScoreBlock r1 = uniform_block("r1", ScoreVector::uniform(3));
    ScoreBlock r2 = r1;
    r2.provider_id = "r2";
    // ranker1: A > B > C, ranker2: A > C > B
    r1.per_dimension[0] = ScoreVector({0.6, 0.3, 0.1});
    r2.per_dimension[0] = ScoreVector({0.5, 0.1, 0.4});
    const auto v = fuse_rank(std::vector{r1, r2});
    EXPECT_NEAR(v.per_dimension[0].fused[0], 4.0 / 6.0, 1e-12);
    EXPECT_NEAR(v.per_dimension[0].fused[1], 1.0 / 6.0, 1e-12);
    EXPECT_NEAR(v.per_dimension[0].fused[2], 1.0 / 6.0, 1e-12);
    EXPECT_EQ(v.per_dimension[0].label, 0u);
}

TEST(RankFusion, TiesShareMeanPoints) {
    const auto pts = detail::borda_points(ScoreVector({0.4, 0.4, 0.2}));
    EXPECT_DOUBLE_EQ(pts[0], 1.5);
    EXPECT_DOUBLE_EQ(pts[1], 1.5);
    EXPECT_DOUBLE_EQ(pts[2], 0.0);
}

TEST(RankFusion, SingleProviderPreservesOrder) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto b = random_block(rng, "only", 7);
        const auto v = fuse_rank(std::vector{b});
        for (std::size_t d = 0; d < kDimensionCount; ++d)
            for (std::size_t i = 0; i < 7; ++i)
                for (std::size_t j = 0; j < 7; ++j)
                    if (b.per_dimension[d][i] > b.per_dimension[d][j])
                        EXPECT_GT(v.per_dimension[d].fused[i], v.per_dimension[d].fused[j]);
    }
}

TEST(Fusion, ArgmaxDominance) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<ScoreBlock> blocks;
        for (int i = 0; i < 5; ++i) {
            auto b = random_block(rng, "p" + std::to_string(i), 2);
            for (auto& v : b.per_dimension) {
                if (v[1] <= v[0]) v = ScoreVector({v[1], v[0]});
                if (v[1] == v[0]) v = ScoreVector({0.4, 0.6});
            }
            blocks.push_back(b);
        }
        for (RuleKind k : {RuleKind::Product, RuleKind::Sum, RuleKind::Min, RuleKind::Median, RuleKind::MajorityVote}) {
            const auto v = fuse_measurement(blocks, FusionRule{k});
            for (const auto& d : v.per_dimension) EXPECT_EQ(d.label, 1u) << to_string(k);
        }
    }
}

TEST(Fusion, PermutationInvariance) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoreBlock> blocks;
        for (int i = 0; i < 6; ++i) blocks.push_back(random_block(rng, "p" + std::to_string(i), 7));
        auto shuffled = blocks;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (RuleKind k : kAllRuleKinds) {
            const auto a = fuse_measurement(blocks, FusionRule{k});
            const auto b = fuse_measurement(shuffled, FusionRule{k});
            for (std::size_t d = 0; d < kDimensionCount; ++d) {
                EXPECT_EQ(a.per_dimension[d].label, b.per_dimension[d].label);
                for (std::size_t j = 0; j < 7; ++j)
                    EXPECT_NEAR(a.per_dimension[d].fused[j], b.per_dimension[d].fused[j], 1e-12);
            }
        }
    }
}

TEST(Fusion, RuleNamesRoundTrip) {
    for (RuleKind k : kAllRuleKinds) EXPECT_EQ(parse_rule_kind(to_string(k)), k);
    EXPECT_THROW(parse_rule_kind("geometric"), ValidationError);
}
