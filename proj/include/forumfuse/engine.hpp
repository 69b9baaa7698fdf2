#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forumfuse/core.hpp"
#include "forumfuse/fusion.hpp"
#include "forumfuse/json_io.hpp"
#include "forumfuse/providers/provider.hpp"

namespace forumfuse {

inline constexpr double kConfidenceFloor = 1e-9;

enum class ConfidencePolicy : std::uint8_t { MinDimMaxProb, MeanMargin, IntervenedDimOnly };

constexpr std::string_view to_string(ConfidencePolicy p) noexcept {
    switch (p) {
        case ConfidencePolicy::MinDimMaxProb: return "min-dim-max-prob";
        case ConfidencePolicy::MeanMargin: return "mean-margin";
        case ConfidencePolicy::IntervenedDimOnly: return "intervened-dim-only";
    }
    return "?";
}

inline ConfidencePolicy parse_confidence_policy(std::string_view s) {
    for (auto p : {ConfidencePolicy::MinDimMaxProb, ConfidencePolicy::MeanMargin, ConfidencePolicy::IntervenedDimOnly})
        if (s == to_string(p)) return p;
    throw ValidationError("unknown confidence policy '" + std::string(s) + "'");
}

enum class ResponseMode : std::uint8_t { KbOnly, LlmGenerate };

constexpr std::string_view to_string(ResponseMode m) noexcept {
    return m == ResponseMode::KbOnly ? "kb-only" : "llm-generate";
}

inline ResponseMode parse_response_mode(std::string_view s) {
    if (s == "kb-only") return ResponseMode::KbOnly;
    if (s == "llm-generate") return ResponseMode::LlmGenerate;
    throw ValidationError("unknown response mode '" + std::string(s) + "'");
}

using PriorityWeights = std::array<double, kDimensionCount>;

// Schema order: opinion, question, answer, sentiment, confusion, urgency.
inline constexpr PriorityWeights kDefaultPriorityWeights = {0.25, 2.0, 1.0, 0.5, 4.0, 8.0};

struct EngineConfig {
    double threshold = 0.75;
    ConfidencePolicy confidence_policy = ConfidencePolicy::MinDimMaxProb;
    FusionRule rule;
    std::optional<PerDimensionPriors> priors;
    // Empty means every registered provider.
    std::vector<std::string> providers;
    double referral_goal = 0.02;
    PriorityWeights priority_weights = kDefaultPriorityWeights;
    ResponseMode response_mode = ResponseMode::KbOnly;

    void validate() const {
        if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0, 1]");
        if (!(referral_goal > 0.0 && referral_goal < 1.0)) throw ValidationError("referral_goal must lie in (0, 1)");
        for (std::size_t d = 0; d < kDimensionCount; ++d)
            if (!(priority_weights[d] >= 0.0) || !std::isfinite(priority_weights[d]))
                throw ValidationError("priority weight for '" + std::string(kDimensionNames[d]) + "' must be non-negative");
        rule.validate();
        if (priors)
            for (std::size_t d = 0; d < kDimensionCount; ++d)
                if (!(*priors)[d].is_valid()) throw ValidationError("invalid prior for '" + std::string(kDimensionNames[d]) + "'");
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"threshold", threshold},
                            {"confidence_policy", std::string(to_string(confidence_policy))},
                            {"rule", std::string(to_string(rule.kind))},
                            {"epsilon", rule.epsilon_floor},
                            {"providers", providers},
                            {"referral_goal", referral_goal},
                            {"response_mode", std::string(to_string(response_mode))}};
        auto& w = j["priority_weights"] = nlohmann::json::object();
        for (std::size_t d = 0; d < kDimensionCount; ++d) w[std::string(kDimensionNames[d])] = priority_weights[d];
        if (priors) {
            auto& p = j["priors"] = nlohmann::json::object();
            for (std::size_t d = 0; d < kDimensionCount; ++d) p[std::string(kDimensionNames[d])] = (*priors)[d].probs();
        }
        return j;
    }

    // Missing keys keep their defaults; unknown keys are rejected.
    static EngineConfig from_json(const nlohmann::json& j, EngineConfig c) {
        if (!j.is_object()) throw ValidationError("engine config must be a JSON object");
        static const std::set<std::string> known = {"threshold",     "confidence_policy", "rule",
                                                    "epsilon",       "providers",         "referral_goal",
                                                    "response_mode", "priority_weights",  "priors"};
        for (const auto& [k, v] : j.items())
            if (!known.count(k)) throw ValidationError("unknown engine config key '" + k + "'");
        try {
            if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
            if (j.contains("confidence_policy"))
                c.confidence_policy = parse_confidence_policy(j["confidence_policy"].get<std::string>());
            if (j.contains("rule")) c.rule.kind = parse_rule_kind(j["rule"].get<std::string>());
            if (j.contains("epsilon")) c.rule.epsilon_floor = j["epsilon"].get<double>();
            if (j.contains("providers")) c.providers = j["providers"].get<std::vector<std::string>>();
            if (j.contains("referral_goal")) c.referral_goal = j["referral_goal"].get<double>();
            if (j.contains("response_mode")) c.response_mode = parse_response_mode(j["response_mode"].get<std::string>());
            if (j.contains("priority_weights")) {
                const auto& w = j["priority_weights"];
                if (w.is_array()) {
                    if (w.size() != kDimensionCount) throw ValidationError("priority_weights must have six entries");
                    for (std::size_t d = 0; d < kDimensionCount; ++d) c.priority_weights[d] = w[d].get<double>();
                } else {
                    for (const auto& [k, v] : w.items()) c.priority_weights[index_of(parse_dimension(k))] = v.get<double>();
                }
            }
            if (j.contains("priors")) {
                PerDimensionPriors p;
                for (std::size_t d = 0; d < kDimensionCount; ++d)
                    p[d] = ScoreVector(j["priors"].at(std::string(kDimensionNames[d])).get<std::vector<double>>());
                c.priors = p;
            }
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("malformed engine config: ") + e.what());
        }
        c.validate();
        return c;
    }
    static EngineConfig from_json(const nlohmann::json& j) { return from_json(j, EngineConfig{}); }
};

// Floored at kConfidenceFloor so that a threshold of 0 accepts every post.
inline double policy_confidence(const FusedVerdict& v, ConfidencePolicy policy) {
    double c = 0.0;
    switch (policy) {
        case ConfidencePolicy::MinDimMaxProb: c = min_dimension_max_prob(v); break;
        case ConfidencePolicy::MeanMargin: {
            for (const auto& d : v.per_dimension) c += d.margin;
            c /= static_cast<double>(kDimensionCount);
            break;
        }
        case ConfidencePolicy::IntervenedDimOnly: {
            // Dimensions predicted positive; all dimensions when none is.
            bool any = false;
            c = 1.0;
            for (const auto& d : v.per_dimension) {
                if (d.label == 1) {
                    c = std::min(c, d.fused.max());
                    any = true;
                }
            }
            if (!any) c = min_dimension_max_prob(v);
            break;
        }
    }
    return std::max(c, kConfidenceFloor);
}

// Weighted sum of class-1 probabilities.
inline double compute_priority(const FusedVerdict& v, const PriorityWeights& weights) {
    double p = 0.0;
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const auto& f = v.per_dimension[d].fused;
        if (f.size() > 1) p += weights[d] * f[1];
    }
    return p;
}

struct KbEntry {
    std::string kb_id;
    std::string course_id = "*";  // "*" matches every course
    Dimension dimension = Dimension::Opinion;
    std::uint8_t label = 0;
    std::string template_text;
    std::optional<std::string> complement_text;
    int specificity = 0;

    bool wildcard() const { return course_id == "*"; }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"kb_id", kb_id},
                            {"course_id", course_id},
                            {"dimension", std::string(to_string(dimension))},
                            {"label", label},
                            {"template_text", template_text},
                            {"specificity", specificity}};
        if (complement_text) j["complement_text"] = *complement_text;
        return j;
    }

    static KbEntry from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ValidationError("KB entry must be an object");
        KbEntry e;
        try {
            e.kb_id = j.at("kb_id").get<std::string>();
            if (j.contains("course_id")) e.course_id = j["course_id"].get<std::string>();
            e.dimension = parse_dimension(j.at("dimension").get<std::string>());
            const int label = j.at("label").get<int>();
            if (label != 0 && label != 1) throw ValidationError("KB entry '" + e.kb_id + "': label must be 0 or 1");
            e.label = static_cast<std::uint8_t>(label);
            e.template_text = j.at("template_text").get<std::string>();
            if (j.contains("complement_text") && !j["complement_text"].is_null())
                e.complement_text = j["complement_text"].get<std::string>();
            if (j.contains("specificity")) e.specificity = j["specificity"].get<int>();
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(std::string("malformed KB entry: ") + ex.what());
        }
        if (is_blank(e.kb_id)) throw ValidationError("KB entry has an empty kb_id");
        if (is_blank(e.course_id)) throw ValidationError("KB entry '" + e.kb_id + "' has an empty course_id");
        if (is_blank(e.template_text)) throw ValidationError("KB entry '" + e.kb_id + "' has an empty template_text");
        return e;
    }
};

inline constexpr std::string_view kGenericFallback =
    "Thanks for your post. Your message has been recorded and the course team will follow up if needed.";

struct ResponseRecord {
    std::string text;
    // One tag per source: "kb:<id>", "kb:<id>:complement", "fallback:generic"
    // or "generator".
    std::vector<std::string> provenance;
    bool fallback = false;

    friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

class KnowledgeBase {
public:
    KnowledgeBase() = default;
    explicit KnowledgeBase(std::vector<KbEntry> entries, std::string fallback = std::string(kGenericFallback))
        : entries_(std::move(entries)), fallback_(std::move(fallback)) {
        std::set<std::string> ids;
        for (const auto& e : entries_)
            if (!ids.insert(e.kb_id).second) throw ValidationError("duplicate kb_id '" + e.kb_id + "'");
    }

    // A JSON array of entries.
    static KnowledgeBase from_json(const nlohmann::json& j) {
        if (!j.is_array()) throw ValidationError("knowledge base must be a JSON array");
        std::vector<KbEntry> entries;
        for (const auto& e : j) entries.push_back(KbEntry::from_json(e));
        return KnowledgeBase(std::move(entries));
    }

    static KnowledgeBase load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("io_error", "cannot open knowledge base " + path.string());
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("knowledge base " + path.string() + " is not valid JSON: " + e.what());
        }
    }

    const std::vector<KbEntry>& entries() const { return entries_; }
    const std::string& fallback_text() const { return fallback_; }

    // Dimensions are tried with positive labels first, each group in
    // descending weight. Within a dimension an exact course match beats the
    // wildcard, then higher specificity, then smaller kb_id. A course-specific
    // complement for the same key is appended.
    ResponseRecord compose(const Post& post, const FusedVerdict& verdict, const PriorityWeights& weights) const {
        std::array<std::size_t, kDimensionCount> order;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto la = verdict.per_dimension[a].label, lb = verdict.per_dimension[b].label;
            if (la != lb) return la > lb;
            return weights[a] > weights[b];
        });
        auto better = [&](const KbEntry* a, const KbEntry* b) {
            if (a->wildcard() != b->wildcard()) return !a->wildcard();
            if (a->specificity != b->specificity) return a->specificity > b->specificity;
            return a->kb_id < b->kb_id;
        };
        for (std::size_t d : order) {
            const auto label = verdict.per_dimension[d].label;
            const KbEntry* best = nullptr;
            const KbEntry* complement = nullptr;
            for (const auto& e : entries_) {
                if (index_of(e.dimension) != d || e.label != label) continue;
                if (!e.wildcard() && e.course_id != post.course_id) continue;
                if (!best || better(&e, best)) best = &e;
                if (!e.wildcard() && e.complement_text && (!complement || better(&e, complement))) complement = &e;
            }
            if (!best) continue;
            ResponseRecord r;
            r.text = render(best->template_text, post);
            r.provenance.push_back("kb:" + best->kb_id);
            if (complement) {
                r.text += "\n\n" + render(*complement->complement_text, post);
                r.provenance.push_back("kb:" + complement->kb_id + ":complement");
            }
            return r;
        }
        return {fallback_, {"fallback:generic"}, true};
    }

private:
    static std::string render(std::string text, const Post& post) {
        const std::string key = "{course_id}";
        for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + post.course_id.size()))
            text.replace(pos, key.size(), post.course_id);
        return text;
    }

    std::vector<KbEntry> entries_;
    std::string fallback_ = std::string(kGenericFallback);
};

enum class PostStatus : std::uint8_t { New, Responded, Referred, Resolved };

constexpr std::string_view to_string(PostStatus s) noexcept {
    switch (s) {
        case PostStatus::New: return "New";
        case PostStatus::Responded: return "Responded";
        case PostStatus::Referred: return "Referred";
        case PostStatus::Resolved: return "Resolved";
    }
    return "?";
}

inline PostStatus parse_post_status(std::string_view s) {
    for (auto v : {PostStatus::New, PostStatus::Responded, PostStatus::Referred, PostStatus::Resolved})
        if (s == to_string(v)) return v;
    throw SchemaError("unknown post status '" + std::string(s) + "'");
}

inline constexpr std::string_view kReasonLowConfidence = "low-confidence";
inline constexpr std::string_view kReasonNoScores = "no-scores";

struct PostState {
    std::string post_id;
    std::string course_id;
    Area area = Area::Education;
    std::string text;
    PostStatus status = PostStatus::New;
    // Empty for responded posts.
    std::string reason;
    std::optional<FusedVerdict> verdict;
    double priority = 0.0;
    std::optional<ResponseRecord> response;
    std::optional<std::string> referral_id;
    std::vector<std::string> providers;
    std::vector<std::string> failed_providers;
    std::int64_t processed_at = 0;
    std::int64_t updated_at = 0;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"post_id", post_id},
                            {"course_id", course_id},
                            {"area", std::string(to_string(area))},
                            {"text", text},
                            {"status", std::string(to_string(status))},
                            {"reason", reason},
                            {"priority", priority},
                            {"providers", providers},
                            {"failed_providers", failed_providers},
                            {"processed_at", processed_at},
                            {"updated_at", updated_at}};
        j["verdict"] = verdict ? verdict_to_json(*verdict) : nlohmann::json();
        if (response) {
            j["response"] = {{"text", response->text}, {"provenance", response->provenance}, {"fallback", response->fallback}};
        } else {
            j["response"] = nullptr;
        }
        j["referral_id"] = referral_id ? nlohmann::json(*referral_id) : nlohmann::json();
        return j;
    }

    static PostState from_json(const nlohmann::json& j) {
        PostState s;
        s.post_id = j.at("post_id").get<std::string>();
        s.course_id = j.at("course_id").get<std::string>();
        s.area = parse_area(j.at("area").get<std::string>()).value_or(Area::Education);
        s.text = j.at("text").get<std::string>();
        s.status = parse_post_status(j.at("status").get<std::string>());
        s.reason = j.at("reason").get<std::string>();
        s.priority = j.at("priority").get<double>();
        s.providers = j.at("providers").get<std::vector<std::string>>();
        s.failed_providers = j.at("failed_providers").get<std::vector<std::string>>();
        s.processed_at = j.at("processed_at").get<std::int64_t>();
        s.updated_at = j.at("updated_at").get<std::int64_t>();
        if (!j.at("verdict").is_null()) s.verdict = verdict_from_json(j["verdict"]);
        if (!j.at("response").is_null()) {
            const auto& r = j["response"];
            s.response = ResponseRecord{r.at("text").get<std::string>(), r.at("provenance").get<std::vector<std::string>>(),
                                        r.at("fallback").get<bool>()};
        }
        if (!j.at("referral_id").is_null()) s.referral_id = j["referral_id"].get<std::string>();
        return s;
    }
};

struct Resolution {
    LabelVector labels;
    std::string response;
    std::int64_t resolved_at = 0;
};

struct ReferralItem {
    std::string referral_id;
    std::string post_id;
    std::string course_id;
    std::string text;
    std::string reason;
    std::optional<FusedVerdict> verdict;
    double priority = 0.0;
    std::int64_t created_at = 0;
    std::uint64_t created_seq = 0;
    std::optional<Resolution> resolution;

    bool open() const { return !resolution.has_value(); }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"referral_id", referral_id}, {"post_id", post_id},   {"course_id", course_id},
                            {"text", text},               {"reason", reason},     {"priority", priority},
                            {"created_at", created_at},   {"created_seq", created_seq},
                            {"status", open() ? "open" : "resolved"}};
        j["verdict"] = verdict ? verdict_to_json(*verdict) : nlohmann::json();
        if (resolution) {
            j["resolution"] = {{"labels", label_vector_to_json(resolution->labels)},
                               {"response", resolution->response},
                               {"resolved_at", resolution->resolved_at}};
        } else {
            j["resolution"] = nullptr;
        }
        return j;
    }

    static ReferralItem from_json(const nlohmann::json& j) {
        ReferralItem r;
        r.referral_id = j.at("referral_id").get<std::string>();
        r.post_id = j.at("post_id").get<std::string>();
        r.course_id = j.at("course_id").get<std::string>();
        r.text = j.at("text").get<std::string>();
        r.reason = j.at("reason").get<std::string>();
        r.priority = j.at("priority").get<double>();
        r.created_at = j.at("created_at").get<std::int64_t>();
        r.created_seq = j.at("created_seq").get<std::uint64_t>();
        if (!j.at("verdict").is_null()) r.verdict = verdict_from_json(j["verdict"]);
        if (j.contains("resolution") && !j["resolution"].is_null()) {
            const auto& x = j["resolution"];
            r.resolution = Resolution{label_vector_from_json(x.at("labels")), x.at("response").get<std::string>(),
                                      x.at("resolved_at").get<std::int64_t>()};
        }
        return r;
    }
};

// Tutor-labeled post from a resolved referral.
struct FeedbackRecord {
    Post post;
    std::string response;
    std::string referral_id;
};

struct CurationReport {
    std::size_t processed = 0;
    std::size_t responded = 0;
    std::size_t referred_open = 0;
    std::size_t resolved = 0;
    std::size_t referrals_total = 0;
    std::size_t no_scores = 0;
    std::size_t fallback_responses = 0;
    // Over every processed post.
    double referral_rate = 0.0;
    // Over posts whose verdict flags a question, confusion or urgency, plus
    // posts that could not be scored.
    std::size_t intervention_situations = 0;
    std::size_t intervention_referrals = 0;
    double intervention_referral_rate = 0.0;
    double referral_goal = 0.02;
    bool goal_met = true;
    std::int64_t first_processed_at = 0;
    std::int64_t last_processed_at = 0;
    std::optional<double> throughput_per_second;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"processed", processed},
                            {"counts",
                             {{"Responded", responded}, {"Referred", referred_open}, {"Resolved", resolved}}},
                            {"referrals_total", referrals_total},
                            {"no_scores", no_scores},
                            {"fallback_responses", fallback_responses},
                            {"referral_rate", referral_rate},
                            {"intervention_situations", intervention_situations},
                            {"intervention_referrals", intervention_referrals},
                            {"intervention_referral_rate", intervention_referral_rate},
                            {"referral_goal", referral_goal},
                            {"goal_met", goal_met},
                            {"first_processed_at", first_processed_at},
                            {"last_processed_at", last_processed_at}};
        j["throughput_per_second"] = throughput_per_second ? nlohmann::json(*throughput_per_second) : nlohmann::json();
        return j;
    }
};

// Folds events into state. Shared by the live engine and log replay so both
// paths produce identical state.
class EngineState {
public:
    std::uint64_t last_seq() const { return last_seq_; }
    const std::map<std::string, PostState>& posts() const { return posts_; }
    const std::map<std::string, ReferralItem>& referrals() const { return referrals_; }
    const std::vector<FeedbackRecord>& feedback() const { return feedback_; }
    std::size_t referral_count() const { return referrals_.size(); }

    void apply(const nlohmann::json& event) {
        const auto seq = event.at("seq").get<std::uint64_t>();
        if (seq <= last_seq_)
            throw SchemaError("event sequence " + std::to_string(seq) + " does not follow " + std::to_string(last_seq_));
        const auto type = event.at("type").get<std::string>();
        const auto at = event.at("at").get<std::int64_t>();
        if (type == "process") {
            PostState s = PostState::from_json(event.at("state"));
            if (posts_.count(s.post_id)) throw SchemaError("post '" + s.post_id + "' processed twice");
            posts_.emplace(s.post_id, std::move(s));
        } else if (type == "refer") {
            ReferralItem r = ReferralItem::from_json(event.at("referral"));
            if (referrals_.count(r.referral_id)) throw SchemaError("referral '" + r.referral_id + "' created twice");
            auto it = posts_.find(r.post_id);
            if (it == posts_.end()) throw SchemaError("referral for unknown post '" + r.post_id + "'");
            it->second.referral_id = r.referral_id;
            referrals_.emplace(r.referral_id, std::move(r));
        } else if (type == "resolve") {
            const auto id = event.at("referral_id").get<std::string>();
            auto it = referrals_.find(id);
            if (it == referrals_.end()) throw SchemaError("resolution for unknown referral '" + id + "'");
            if (!it->second.open()) throw SchemaError("referral '" + id + "' resolved twice");
            Resolution res{label_vector_from_json(event.at("labels")), event.at("response").get<std::string>(), at};
            it->second.resolution = res;
            auto& post = posts_.at(it->second.post_id);
            post.status = PostStatus::Resolved;
            post.updated_at = at;
            if (!res.response.empty()) post.response = ResponseRecord{res.response, {"tutor:" + id}, false};
            Post p;
            p.post_id = post.post_id;
            p.course_id = post.course_id;
            p.area = post.area;
            p.text = post.text;
            p.gold = res.labels;
            feedback_.push_back({std::move(p), res.response, id});
        } else {
            throw SchemaError("unknown event type '" + type + "'");
        }
        last_seq_ = seq;
    }

    // Canonical: keys sorted, posts and referrals ordered by id.
    nlohmann::json snapshot() const {
        nlohmann::json j;
        j["schema_version"] = kSchemaVersion;
        j["last_seq"] = last_seq_;
        auto& posts = j["posts"] = nlohmann::json::array();
        for (const auto& [id, s] : posts_) posts.push_back(s.to_json());
        auto& refs = j["referrals"] = nlohmann::json::array();
        for (const auto& [id, r] : referrals_) refs.push_back(r.to_json());
        auto& fb = j["feedback"] = nlohmann::json::array();
        for (const auto& f : feedback_)
            fb.push_back({{"post", post_to_json(f.post)}, {"response", f.response}, {"referral_id", f.referral_id}});
        return j;
    }

    // Highest priority first; creation order breaks ties.
    std::vector<ReferralItem> queue(std::optional<bool> open_only) const {
        std::vector<ReferralItem> out;
        for (const auto& [id, r] : referrals_)
            if (!open_only || r.open() == *open_only) out.push_back(r);
        std::sort(out.begin(), out.end(), [](const ReferralItem& a, const ReferralItem& b) {
            if (a.priority != b.priority) return a.priority > b.priority;
            return a.created_seq < b.created_seq;
        });
        return out;
    }

    CurationReport report(double referral_goal) const {
        CurationReport r;
        r.referral_goal = referral_goal;
        r.processed = posts_.size();
        r.referrals_total = referrals_.size();
        bool first = true;
        for (const auto& [id, s] : posts_) {
            if (s.status == PostStatus::Responded) ++r.responded;
            if (s.status == PostStatus::Referred) ++r.referred_open;
            if (s.status == PostStatus::Resolved) ++r.resolved;
            if (s.reason == kReasonNoScores) ++r.no_scores;
            if (s.response && s.response->fallback) ++r.fallback_responses;
            const bool intervention =
                !s.verdict || s.verdict->per_dimension[index_of(Dimension::Question)].label == 1 ||
                s.verdict->per_dimension[index_of(Dimension::Confusion)].label == 1 ||
                s.verdict->per_dimension[index_of(Dimension::Urgency)].label == 1;
            if (intervention) {
                ++r.intervention_situations;
                if (s.referral_id) ++r.intervention_referrals;
            }
            if (first || s.processed_at < r.first_processed_at) r.first_processed_at = s.processed_at;
            if (first || s.processed_at > r.last_processed_at) r.last_processed_at = s.processed_at;
            first = false;
        }
        if (r.processed)
            r.referral_rate = static_cast<double>(r.referrals_total) / static_cast<double>(r.processed);
        if (r.intervention_situations)
            r.intervention_referral_rate =
                static_cast<double>(r.intervention_referrals) / static_cast<double>(r.intervention_situations);
        r.goal_met = r.referral_rate < referral_goal;
        const auto span_ms = r.last_processed_at - r.first_processed_at;
        if (r.processed > 1 && span_ms > 0)
            r.throughput_per_second = static_cast<double>(r.processed) * 1000.0 / static_cast<double>(span_ms);
        return r;
    }

private:
    std::uint64_t last_seq_ = 0;
    std::map<std::string, PostState> posts_;
    std::map<std::string, ReferralItem> referrals_;
    std::vector<FeedbackRecord> feedback_;
};

// Append-only line-delimited event file.
class EventLog {
public:
    struct LoadResult {
        std::vector<nlohmann::json> events;
        bool dropped_torn_tail = false;
    };

    explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {}

    const std::filesystem::path& path() const { return path_; }

    // A final line that is unterminated and unparsable is the remains of an
    // interrupted write: it is dropped and the file truncated. Any other bad
    // line is corruption.
    LoadResult load_and_compact() const {
        LoadResult out;
        if (!std::filesystem::exists(path_)) return out;
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw Error("io_error", "cannot open event log " + path_.string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::size_t pos = 0, line_no = 0, good_end = 0;
        while (pos < content.size()) {
            const auto nl = content.find('\n', pos);
            const bool terminated = nl != std::string::npos;
            const std::string line = content.substr(pos, terminated ? nl - pos : std::string::npos);
            ++line_no;
            const std::size_t next = terminated ? nl + 1 : content.size();
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                pos = good_end = next;
                continue;
            }
            try {
                out.events.push_back(nlohmann::json::parse(line));
                good_end = next;
            } catch (const nlohmann::json::parse_error&) {
                if (!terminated) {
                    out.dropped_torn_tail = true;
                    break;
                }
                throw SchemaError("event log " + path_.string() + " line " + std::to_string(line_no) + " is not valid JSON");
            }
            pos = next;
        }
        if (out.dropped_torn_tail) std::filesystem::resize_file(path_, good_end);
        return out;
    }

    void append(const nlohmann::json& event) {
        if (!out_.is_open()) {
            if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
            out_.open(path_, std::ios::app | std::ios::binary);
            if (!out_) throw Error("io_error", "cannot open event log " + path_.string() + " for writing");
        }
        out_ << event.dump() << '\n';
        out_.flush();
        if (!out_) throw Error("io_error", "write to event log " + path_.string() + " failed");
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

inline EngineState replay_events(const std::vector<nlohmann::json>& events) {
    EngineState s;
    for (const auto& e : events) {
        try {
            s.apply(e);
        } catch (const nlohmann::json::exception& ex) {
            throw SchemaError(std::string("malformed event: ") + ex.what());
        }
    }
    return s;
}

using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

// Produces a response in llm-generate mode. Returning nullopt falls back to
// the knowledge base.
using ResponseGenerator = std::function<std::optional<std::string>(const Post&, const FusedVerdict&)>;

struct EngineOptions {
    std::optional<std::filesystem::path> event_log;
    std::optional<std::filesystem::path> feedback_log;
    Clock clock = system_clock_ms;
    ResponseGenerator generator;
};

class Engine {
public:
    Engine(EngineConfig config, ProviderRegistry providers, KnowledgeBase kb, EngineOptions options = {})
        : config_(std::move(config)), providers_(std::move(providers)), kb_(std::move(kb)), options_(std::move(options)) {
        config_.validate();
        if (!options_.clock) options_.clock = system_clock_ms;
        if (config_.response_mode == ResponseMode::LlmGenerate && !options_.generator)
            throw ValidationError("response mode llm-generate needs a response generator");
        for (const auto& id : config_.providers) providers_.get(id);
        if (options_.event_log) {
            log_.emplace(*options_.event_log);
            auto loaded = log_->load_and_compact();
            recovered_torn_tail_ = loaded.dropped_torn_tail;
            state_ = replay_events(loaded.events);
        }
    }

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    const EngineConfig& config() const { return config_; }
    bool recovered_torn_tail() const { return recovered_torn_tail_; }

    // Scores, fuses and either answers from the knowledge base or refers the
    // post. Scoring happens outside the commit lock.
    PostState process_post(const Post& post) {
        if (is_blank(post.post_id)) throw ValidationError("post_id is empty");
        if (is_blank(post.course_id)) throw ValidationError("course_id is empty");
        if (is_blank(post.text)) throw ValidationError("post text is empty");
        {
            std::lock_guard lock(mutex_);
            if (state_.posts().count(post.post_id) || in_flight_.count(post.post_id))
                throw ConflictError("post '" + post.post_id + "' has already been processed");
            in_flight_.insert(post.post_id);
        }
        try {
            PostState s = evaluate(post);
            std::lock_guard lock(mutex_);
            in_flight_.erase(post.post_id);
            const auto at = options_.clock();
            s.processed_at = s.updated_at = at;
            if (s.status == PostStatus::Referred) s.referral_id = next_referral_id();
            commit({{"seq", state_.last_seq() + 1}, {"type", "process"}, {"at", at}, {"state", s.to_json()}});
            if (s.status == PostStatus::Referred) {
                ReferralItem r;
                r.referral_id = *s.referral_id;
                r.post_id = s.post_id;
                r.course_id = s.course_id;
                r.text = s.text;
                r.reason = s.reason;
                r.verdict = s.verdict;
                r.priority = s.priority;
                r.created_at = at;
                r.created_seq = state_.last_seq() + 1;
                commit({{"seq", r.created_seq}, {"type", "refer"}, {"at", at}, {"referral", r.to_json()}});
            }
            return state_.posts().at(post.post_id);
        } catch (...) {
            std::lock_guard lock(mutex_);
            in_flight_.erase(post.post_id);
            throw;
        }
    }

    PostState resolve_referral(const std::string& referral_id, const LabelVector& labels, const std::string& response) {
        labels.validate();
        std::lock_guard lock(mutex_);
        const auto it = state_.referrals().find(referral_id);
        if (it == state_.referrals().end()) throw NotFoundError("unknown referral '" + referral_id + "'");
        if (!it->second.open()) throw ConflictError("referral '" + referral_id + "' is already resolved");
        const auto post_id = it->second.post_id;
        commit({{"seq", state_.last_seq() + 1},
                {"type", "resolve"},
                {"at", options_.clock()},
                {"referral_id", referral_id},
                {"labels", label_vector_to_json(labels)},
                {"response", response}});
        if (options_.feedback_log) {
            const auto& f = state_.feedback().back();
            std::ofstream out(*options_.feedback_log, std::ios::app | std::ios::binary);
            if (!out) throw Error("io_error", "cannot open feedback log " + options_.feedback_log->string());
            out << nlohmann::json{{"post", post_to_json(f.post)}, {"response", f.response}, {"referral_id", f.referral_id}}
                       .dump()
                << '\n';
        }
        return state_.posts().at(post_id);
    }

    std::optional<PostState> post(const std::string& id) const {
        std::lock_guard lock(mutex_);
        const auto it = state_.posts().find(id);
        if (it == state_.posts().end()) return std::nullopt;
        return it->second;
    }

    ReferralItem referral(const std::string& id) const {
        std::lock_guard lock(mutex_);
        const auto it = state_.referrals().find(id);
        if (it == state_.referrals().end()) throw NotFoundError("unknown referral '" + id + "'");
        return it->second;
    }

    // nullopt: all; true: open only; false: resolved only.
    std::vector<ReferralItem> referrals(std::optional<bool> open_only = true) const {
        std::lock_guard lock(mutex_);
        return state_.queue(open_only);
    }

    CurationReport report() const {
        std::lock_guard lock(mutex_);
        return state_.report(config_.referral_goal);
    }

    nlohmann::json snapshot() const {
        std::lock_guard lock(mutex_);
        return state_.snapshot();
    }

    std::vector<FeedbackRecord> feedback() const {
        std::lock_guard lock(mutex_);
        return state_.feedback();
    }

private:
    PostState evaluate(const Post& post) const {
        PostState s;
        s.post_id = post.post_id;
        s.course_id = post.course_id;
        s.area = post.area;
        s.text = post.text;
        std::vector<ScoreBlock> blocks;
        const auto ids = config_.providers.empty() ? all_provider_ids() : config_.providers;
        for (const auto& id : ids) {
            try {
                blocks.push_back(providers_.get(id)->score(post));
                s.providers.push_back(id);
            } catch (const std::exception&) {
                s.failed_providers.push_back(id);
            }
        }
        if (blocks.empty()) {
            s.status = PostStatus::Referred;
            s.reason = std::string(kReasonNoScores);
            // Unscored posts go to the front of the queue.
            s.priority = std::accumulate(config_.priority_weights.begin(), config_.priority_weights.end(), 0.0);
            return s;
        }
        FusedVerdict v = fuse_measurement(blocks, config_.rule, config_.priors);
        v.confidence = policy_confidence(v, config_.confidence_policy);
        s.priority = compute_priority(v, config_.priority_weights);
        if (v.confidence > config_.threshold) {
            s.status = PostStatus::Responded;
            if (config_.response_mode == ResponseMode::LlmGenerate) {
                if (auto text = options_.generator(post, v)) s.response = ResponseRecord{*text, {"generator"}, false};
            }
            if (!s.response) s.response = kb_.compose(post, v, config_.priority_weights);
        } else {
            s.status = PostStatus::Referred;
            s.reason = std::string(kReasonLowConfidence);
        }
        s.verdict = std::move(v);
        return s;
    }

    std::vector<std::string> all_provider_ids() const {
        std::vector<std::string> ids;
        for (const auto& p : providers_.all()) ids.push_back(p->id());
        return ids;
    }

    std::string next_referral_id() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "ref-%06zu", state_.referral_count() + 1);
        return buf;
    }

    void commit(const nlohmann::json& event) {
        state_.apply(event);
        if (log_) log_->append(event);
    }

    EngineConfig config_;
    ProviderRegistry providers_;
    KnowledgeBase kb_;
    EngineOptions options_;
    std::optional<EventLog> log_;
    bool recovered_torn_tail_ = false;
    mutable std::mutex mutex_;
    EngineState state_;
    std::set<std::string> in_flight_;
};

}  // namespace forumfuse
