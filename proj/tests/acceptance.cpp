// Acceptance suite: one PASS/FAIL line per primary criterion.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forumfuse/cli.hpp"
#include "forumfuse/engine.hpp"
#include "forumfuse/evaluation.hpp"
#include "forumfuse/fusion.hpp"
#include "forumfuse/ingest.hpp"
#include "forumfuse/providers/local_model.hpp"
#include "forumfuse/providers/mock.hpp"
#include "forumfuse/splits.hpp"
#include "test_helpers.hpp"

using namespace forumfuse;
using forumfuse::testing::random_block;
using forumfuse::testing::synthetic_corpus;
using forumfuse::testing::TempDir;
using forumfuse::testing::uniform_block;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        if (pass) detail = why;
        pass = false;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// Linear-space normalized product.
std::vector<double> linear_product(const std::vector<ScoreBlock>& blocks, std::size_t d) {
    std::vector<double> w(blocks.front().per_dimension[d].size(), 1.0);
    for (const auto& b : blocks)
        for (std::size_t j = 0; j < w.size(); ++j) w[j] *= b.per_dimension[d][j];
    double total = 0;
    for (double x : w) total += x;
    for (double& x : w) x /= total;
    return w;
}

Outcome fusion_normalization_and_permutation() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> l_dist(1, 8), k_dist(2, 7);
    double worst_sum = 0, worst_perm = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const int l = l_dist(rng);
        const std::size_t k = trial % 2 ? 2 : static_cast<std::size_t>(k_dist(rng));
        std::vector<ScoreBlock> blocks;
        for (int i = 0; i < l; ++i) blocks.push_back(random_block(rng, "p" + std::to_string(i), k));
        auto shuffled = blocks;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (RuleKind kind : kAllRuleKinds) {
            const auto a = fuse_measurement(blocks, FusionRule{kind});
            const auto b = fuse_measurement(shuffled, FusionRule{kind});
            for (std::size_t d = 0; d < kDimensionCount; ++d) {
                double sum = 0;
                for (std::size_t j = 0; j < k; ++j) {
                    const double x = a.per_dimension[d].fused[j];
                    if (!(x >= 0.0)) o.fail("negative probability under " + std::string(to_string(kind)));
                    sum += x;
                    worst_perm = std::max(worst_perm, std::abs(x - b.per_dimension[d].fused[j]));
                }
                worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
                if (a.per_dimension[d].label != b.per_dimension[d].label)
                    o.fail("label changed under permutation for " + std::string(to_string(kind)));
            }
        }
    }
    const double secs = seconds_since(t0);
    if (worst_sum > 1e-9) o.fail(fmt("max |sum-1| = %.3g", worst_sum));
    if (worst_perm > 1e-12) o.fail(fmt("max permutation delta = %.3g", worst_perm));
    if (secs >= 10.0) o.fail(fmt("runtime %.2f s", secs));
    if (o.pass) o.detail = fmt("10000 ensembles x 8 rules, max |sum-1| %.2g, max perm delta %.2g, %.2f s", worst_sum, worst_perm, secs);
    return o;
}

Outcome product_hand_cases() {
    Outcome o;
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        const auto block = random_block(rng, "only", 2 + trial % 6);
        const auto v = fuse_measurement(std::vector{block}, FusionRule{RuleKind::Product});
        for (std::size_t d = 0; d < kDimensionCount; ++d)
            if (v.per_dimension[d].fused != block.per_dimension[d]) {
                o.fail("L=1 product is not the identity");
                break;
            }
    }
    const auto pair = std::vector{uniform_block("a", {0.8, 0.2}), uniform_block("b", {0.8, 0.2})};
    const auto v = fuse_measurement(pair, FusionRule{RuleKind::Product});
    // 0.64 / (0.64 + 0.04)
    const double expect0 = 0.64 / 0.68, expect1 = 0.04 / 0.68;
    for (const auto& dv : v.per_dimension) {
        if (std::abs(dv.fused[0] - 0.9412) > 1e-4 || std::abs(dv.fused[1] - 0.0588) > 1e-4)
            o.fail(fmt("two-[0.8,0.2] case gave [%.6f, %.6f]", dv.fused[0], dv.fused[1]));
        if (std::abs(dv.fused[0] - expect0) > 1e-12 || std::abs(dv.fused[1] - expect1) > 1e-12)
            o.fail("two-[0.8,0.2] case disagrees with 0.64/0.68");
    }
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ScoreBlock> blocks;
        const int l = 1 + trial % 8;
        for (int i = 0; i < l; ++i) blocks.push_back(random_block(rng, "p" + std::to_string(i), 2 + trial % 3));
        const auto plain = fuse_measurement(blocks, FusionRule{RuleKind::Product});
        const auto corrected = fuse_measurement(blocks, FusionRule{RuleKind::ProductPriorCorrected});
        for (std::size_t d = 0; d < kDimensionCount; ++d)
            for (std::size_t j = 0; j < plain.per_dimension[d].fused.size(); ++j)
                worst = std::max(worst, std::abs(plain.per_dimension[d].fused[j] - corrected.per_dimension[d].fused[j]));
    }
    if (worst > 1e-12) o.fail(fmt("uniform prior-corrected vs product delta %.3g", worst));
    if (o.pass)
        o.detail = fmt("L=1 identity exact; [%.4f, %.4f]; uniform-prior delta %.2g", v.per_dimension[0].fused[0],
                       v.per_dimension[0].fused[1], worst);
    return o;
}

Outcome log_vs_linear() {
    Outcome o;
    std::mt19937_64 rng(1000);
    std::uniform_int_distribution<int> l_dist(1, 8), k_dist(2, 7);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ScoreBlock> blocks;
        const int l = l_dist(rng);
        const auto k = static_cast<std::size_t>(k_dist(rng));
        for (int i = 0; i < l; ++i) blocks.push_back(random_block(rng, "p" + std::to_string(i), k, 1e-5));
        const auto v = fuse_measurement(blocks, FusionRule{RuleKind::Product});
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            const auto ref = linear_product(blocks, d);
            for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(v.per_dimension[d].fused[j] - ref[j]));
        }
    }
    if (worst > 1e-9) o.fail(fmt("max delta %.3g", worst));
    else o.detail = fmt("1000 cases, max delta %.2g", worst);
    return o;
}

Outcome majority_exhaustive() {
    Outcome o;
    std::size_t cases = 0;
    for (std::size_t l = 1; l <= 4; ++l) {
        // every assignment of a binary vote per dimension per provider: 2^(6l)
        const std::uint64_t total = 1ull << (kDimensionCount * l);
        const ScoreVector yes_vote{0.0, 1.0}, no_vote{1.0, 0.0};
        std::vector<ScoreBlock> blocks(l);
        for (std::size_t i = 0; i < l; ++i) {
            blocks[i].provider_id = "p" + std::to_string(i);
            blocks[i].per_dimension.fill(no_vote);
        }
        for (std::uint64_t mask = 0; mask < total; ++mask, ++cases) {
            std::array<std::size_t, kDimensionCount> ones{};
            for (std::size_t i = 0; i < l; ++i) {
                for (std::size_t d = 0; d < kDimensionCount; ++d) {
                    const bool yes = (mask >> (i * kDimensionCount + d)) & 1u;
                    ones[d] += yes;
                    blocks[i].per_dimension[d] = yes ? yes_vote : no_vote;
                }
            }
            const auto abstract = fuse_abstract(blocks);
            const auto measured = fuse_measurement(blocks, FusionRule{RuleKind::MajorityVote});
            for (std::size_t d = 0; d < kDimensionCount; ++d) {
                // ties go to class 0
                const std::size_t expected = 2 * ones[d] > l ? 1 : 0;
                if (abstract[d] != expected || measured.per_dimension[d].label != expected) {
                    o.fail("mismatch at L=" + std::to_string(l) + " mask " + std::to_string(mask));
                    return o;
                }
            }
        }
    }
    o.detail = std::to_string(cases) + " ensembles, exact";
    return o;
}

Outcome binarization_exhaustive() {
    Outcome o;
    std::size_t checked = 0;
    for (int dim = 0; dim < 3; ++dim) {
        for (int v = 1; v <= 7; ++v) {
            RawAnnotation raw;
            raw.opinion = raw.question = raw.answer = 0;
            raw.sentiment = raw.confusion = raw.urgency = 1;
            (dim == 0 ? raw.sentiment : dim == 1 ? raw.confusion : raw.urgency) = v;
            const auto labels = binarize(raw);
            const std::size_t idx = 3 + static_cast<std::size_t>(dim);
            const std::uint8_t expected = v >= 4 ? 1 : 0;
            if (labels.labels[idx] != expected) o.fail(std::string(kDimensionNames[idx]) + "=" + std::to_string(v));
            ++checked;
        }
    }
    if (o.pass) o.detail = std::to_string(checked) + " (value, dimension) pairs";
    return o;
}

Outcome metrics_oracle() {
    Outcome o;
    std::mt19937_64 rng(2024);
    for (int inst = 0; inst < 200 && o.pass; ++inst) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
        std::array<ConfusionCounts, kDimensionCount> counts;
        std::array<std::array<double, 3>, kDimensionCount> oracle{};
        std::array<double, 3> pooled{};
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            std::bernoulli_distribution b(std::uniform_real_distribution<double>(0, 1)(rng));
            std::vector<std::uint8_t> pred(n), gold(n);
            double tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                pred[i] = b(rng);
                gold[i] = b(rng);
                tp += pred[i] && gold[i];
                fp += pred[i] && !gold[i];
                fn += !pred[i] && gold[i];
            }
            counts[d] = score_dimension(pred, gold);
            oracle[d] = {tp, fp, fn};
            pooled[0] += tp;
            pooled[1] += fp;
            pooled[2] += fn;
        }
        auto f1 = [](const std::array<double, 3>& c) {
            const double den = 2 * c[0] + c[1] + c[2];
            return den > 0 ? 2 * c[0] / den : 0.0;
        };
        const auto r = compute_metrics(counts);
        double macro = 0;
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            const auto& c = oracle[d];
            const double p = c[0] + c[1] > 0 ? c[0] / (c[0] + c[1]) : 0.0;
            const double rc = c[0] + c[2] > 0 ? c[0] / (c[0] + c[2]) : 0.0;
            if (r.per_dimension[d].precision != p || r.per_dimension[d].recall != rc || r.per_dimension[d].f1 != f1(c))
                o.fail("instance " + std::to_string(inst) + " dimension " + std::string(kDimensionNames[d]));
            macro += f1(c);
        }
        if (r.macro.f1 != macro / 6.0) o.fail("macro F1 at instance " + std::to_string(inst));
        if (r.micro.f1 != f1(pooled)) o.fail("micro F1 at instance " + std::to_string(inst));
    }
    std::array<ConfusionCounts, kDimensionCount> hand;
    hand.fill(ConfusionCounts{2, 1, 1, 0});
    const auto h = compute_metrics(hand);
    const double two_thirds = 2.0 / 3.0;
    if (h.per_dimension[0].precision != two_thirds || h.per_dimension[0].recall != two_thirds ||
        h.per_dimension[0].f1 != two_thirds)
        o.fail(fmt("hand case gave P=%.17g R=%.17g F1=%.17g", h.per_dimension[0].precision, h.per_dimension[0].recall,
                   h.per_dimension[0].f1));
    if (o.pass) o.detail = "200 instances exact; tp=2 fp=1 fn=1 -> 2/3 exact";
    return o;
}

Outcome dataset_check() {
    Outcome o;
    std::string path;
    if (const char* env = std::getenv("FORUMFUSE_STANFORD_CSV"); env && *env) path = env;
    else if (std::filesystem::exists(FORUMFUSE_STANFORD_DEFAULT)) path = FORUMFUSE_STANFORD_DEFAULT;

    if (!path.empty()) {
        const auto result = ingest_corpus(std::filesystem::path(path), stanford_profile());
        const auto& rep = result.report;
        const auto& all = rep.groups.at("all");
        const auto urgency = index_of(Dimension::Urgency);
        if (rep.total_posts != 29604) o.fail("total posts " + std::to_string(rep.total_posts));
        if (all[urgency].no != 23186 || all[urgency].yes != 6418)
            o.fail("urgency " + std::to_string(all[urgency].no) + "/" + std::to_string(all[urgency].yes));
        const DimensionCounts* ds1 = nullptr;
        for (const auto& [key, counts] : rep.groups)
            if (key.rfind("course:", 0) == 0 && key.find("EDUC115N") != std::string::npos) ds1 = &counts;
        if (!ds1) o.fail("no EDUC115N course group");
        else if ((*ds1)[urgency].no != 9418 || (*ds1)[urgency].yes != 461)
            o.fail("DS1 urgency " + std::to_string((*ds1)[urgency].no) + "/" + std::to_string((*ds1)[urgency].yes));
        if (o.pass) o.detail = "Stanford corpus at " + path + ": 29604 posts, 23186/6418, DS1 9418/461";
        return o;
    }

    const std::string data = FORUMFUSE_TEST_DATA;
    const auto got = ingest_corpus(std::filesystem::path(data + "/synthetic_12.csv"), default_profile()).report.to_json();
    std::ifstream in(data + "/synthetic_12.expected.json");
    const auto expected = nlohmann::json::parse(in);
    for (const auto& [key, value] : expected.items())
        if (!got.contains(key) || got[key] != value) o.fail("synthetic fixture field '" + key + "' differs");
    if (o.pass) o.detail = "Stanford corpus absent (set FORUMFUSE_STANFORD_CSV); synthetic fixture matches hand tally";
    return o;
}

std::set<std::string> referred_at(const Corpus& corpus, double th, double* secs) {
    ProviderRegistry reg;
    reg.add(MockProvider::noisy("a", 0.2, 11));
    reg.add(MockProvider::noisy("b", 0.2, 12));
    EngineConfig cfg;
    cfg.threshold = th;
    const auto t0 = Clock::now();
    Engine engine(cfg, reg, KnowledgeBase{});
    std::set<std::string> out;
    for (const auto& p : corpus)
        if (engine.process_post(p).status == PostStatus::Referred) out.insert(p.post_id);
    if (secs) *secs = seconds_since(t0);
    return out;
}

Outcome referral_threshold() {
    Outcome o;
    const Corpus corpus = synthetic_corpus(1000, 5);
    double worst_secs = 0;
    std::set<std::string> prev;
    std::vector<double> rates;
    for (int step = 0; step <= 20; ++step) {
        const double th = step / 20.0;
        double secs = 0;
        const auto cur = referred_at(corpus, th, &secs);
        worst_secs = std::max(worst_secs, secs);
        if (!std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()))
            o.fail(fmt("referred set at Th=%.2f is not a superset of the previous one", th));
        if (step == 0 && !cur.empty()) o.fail(std::to_string(cur.size()) + " referrals at Th=0");
        if (step == 20 && cur.size() != corpus.size()) o.fail(std::to_string(cur.size()) + " referrals at Th=1");
        rates.push_back(static_cast<double>(cur.size()) / corpus.size());
        prev = cur;
    }
    if (worst_secs >= 5.0) o.fail(fmt("slowest 1000-post run %.2f s", worst_secs));
    if (o.pass)
        o.detail = fmt("21 thresholds monotone, Th=0 %.0f%%, Th=1 %.0f%%, slowest run %.3f s", 100 * rates.front(),
                       100 * rates.back(), worst_secs);
    return o;
}

Outcome fusion_improves_components() {
    Outcome o;
    const Corpus corpus = synthetic_corpus(1200, 42);
    ProviderRegistry reg;
    reg.add(MockProvider::noisy("a", 0.2, 42));
    reg.add(MockProvider::noisy("b", 0.2, 4242));
    std::vector<DatasetSplit> splits;
    for (Configuration c : kAllConfigurations) {
        auto s = make_splits(corpus, c, {0.8, 42});
        splits.insert(splits.end(), s.begin(), s.end());
    }
    const std::vector<SystemSpec> systems = {
        {"a", {"a"}, std::nullopt, ""},
        {"b", {"b"}, std::nullopt, ""},
        {"fusion", {"a", "b"}, FusionRule{RuleKind::Product}, ""},
    };
    const auto result = run_experiment(corpus, splits, systems, static_providers(reg));
    std::map<std::string, std::map<std::string, double>> f1;
    for (const auto& row : result.aggregates) f1[std::string(to_string(row.configuration))][row.system] = row.macro.f1;
    std::ostringstream detail;
    for (const auto& [config, by_system] : f1) {
        const double best = std::max(by_system.at("a"), by_system.at("b"));
        const double fused = by_system.at("fusion");
        detail << config << " " << fmt("%.3f vs max %.3f; ", fused, best);
        if (fused < best - 0.01) o.fail(config + fmt(": fused %.4f < max %.4f - 0.01", fused, best));
    }
    if (f1.size() != 3) o.fail("missing configurations in aggregates");
    if (o.pass) o.detail = detail.str();
    return o;
}

Outcome determinism() {
    Outcome o;
    TempDir dir;
    const auto log = dir / "events.jsonl";
    {
        ProviderRegistry reg;
        reg.add(MockProvider::noisy("a", 0.2, 1));
        reg.add(MockProvider::noisy("b", 0.2, 2));
        EngineConfig cfg;
        cfg.threshold = 0.8;
        EngineOptions eo;
        eo.event_log = log;
        eo.feedback_log = dir / "feedback.jsonl";
        Engine engine(cfg, reg, KnowledgeBase{}, eo);
        for (const auto& p : synthetic_corpus(300, 9)) engine.process_post(p);
        const auto open = engine.referrals();
        for (std::size_t i = 0; i < open.size(); i += 2) engine.resolve_referral(open[i].referral_id, LabelVector{}, "ok");
    }
    auto cli_out = [&](std::vector<std::string> args) {
        args.insert(args.begin(), "forumfuse");
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        if (code != 0) o.fail("cli " + args[1] + " exited " + std::to_string(code) + ": " + err.str());
        return out.str();
    };
    const auto s1 = cli_out({"replay", "--events", log.string()});
    const auto s2 = cli_out({"replay", "--events", log.string()});
    const auto r1 = cli_out({"report", "--events", log.string()});
    const auto r2 = cli_out({"report", "--events", log.string()});
    if (s1 != s2) o.fail("state stores differ between replays");
    if (r1 != r2) o.fail("reports differ between replays");
    if (s1.size() < 100) o.fail("replayed state is suspiciously small");
    if (o.pass) o.detail = "state " + std::to_string(s1.size()) + " bytes and report " + std::to_string(r1.size()) + " bytes identical";
    return o;
}

Outcome chain_mode_benefit() {
    Outcome o;
    const Corpus corpus = synthetic_corpus(1200, 77, true);
    const auto split = make_splits(corpus, Configuration::Intracourse, {0.8, 77});
    const std::size_t a = index_of(Dimension::Answer);
    ConfusionCounts indep_total, chain_total;
    for (const auto& s : split) {
        Corpus train, test;
        for (const auto& p : corpus) {
            if (s.train.count(p.post_id)) train.push_back(p);
            else if (s.test.count(p.post_id)) test.push_back(p);
        }
        LocalTrainConfig indep_cfg, chain_cfg;
        chain_cfg.chain_mode = true;
        const auto indep = train_local(train, indep_cfg);
        const auto chain = train_local(train, chain_cfg);
        std::vector<std::uint8_t> gold, pi, pc;
        for (const auto& p : test) {
            gold.push_back(p.gold->labels[a]);
            pi.push_back(static_cast<std::uint8_t>(predict_local(indep, p).per_dimension[a].argmax()));
            pc.push_back(static_cast<std::uint8_t>(predict_local(chain, p).per_dimension[a].argmax()));
        }
        indep_total += score_dimension(pi, gold);
        chain_total += score_dimension(pc, gold);
    }
    const double fi = prf(indep_total).f1, fc = prf(chain_total).f1;
    if (fc < fi) o.fail(fmt("chain answer F1 %.4f < independent %.4f", fc, fi));
    else o.detail = fmt("answer F1 chain %.4f >= independent %.4f", fc, fi);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"fusion-normalization-permutation", fusion_normalization_and_permutation},
        {"product-identity-hand-cases", product_hand_cases},
        {"log-vs-linear-product", log_vs_linear},
        {"majority-vote-exhaustive", majority_exhaustive},
        {"binarization-exhaustive", binarization_exhaustive},
        {"metrics-oracle", metrics_oracle},
        {"dataset-check", dataset_check},
        {"referral-threshold", referral_threshold},
        {"fusion-improves-components", fusion_improves_components},
        {"replay-determinism", determinism},
        {"chain-mode-benefit", chain_mode_benefit},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed;
}
