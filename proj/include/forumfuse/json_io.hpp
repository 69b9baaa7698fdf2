#pragma once

#include <nlohmann/json.hpp>

#include "forumfuse/core.hpp"
#include "forumfuse/fusion.hpp"

namespace forumfuse {

inline constexpr int kSchemaVersion = 1;

inline nlohmann::json label_vector_to_json(const LabelVector& lv) {
    auto j = nlohmann::json::array();
    for (auto x : lv.labels) j.push_back(static_cast<int>(x));
    return j;
}

// Accepts a 6-element array or an object keyed by dimension name.
inline LabelVector label_vector_from_json(const nlohmann::json& j) {
    LabelVector lv;
    if (j.is_array()) {
        if (j.size() != kDimensionCount) throw ValidationError("labels must have six entries");
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            if (!j[d].is_number_integer()) throw ValidationError("labels must be integers 0 or 1");
            const int v = j[d].get<int>();
            if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
            lv.labels[d] = static_cast<std::uint8_t>(v);
        }
    } else if (j.is_object()) {
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            const auto it = j.find(std::string(kDimensionNames[d]));
            if (it == j.end()) throw ValidationError("labels object is missing '" + std::string(kDimensionNames[d]) + "'");
            if (!it->is_number_integer()) throw ValidationError("labels must be integers 0 or 1");
            const int v = it->get<int>();
            if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
            lv.labels[d] = static_cast<std::uint8_t>(v);
        }
    } else {
        throw ValidationError("labels must be an array or an object");
    }
    return lv;
}

inline nlohmann::json scores_to_json(const ScoreBlock& b) {
    auto j = nlohmann::json::array();
    for (const auto& v : b.per_dimension) j.push_back(v.probs());
    return j;
}

inline ScoreBlock scores_from_json(std::string provider_id, const nlohmann::json& j) {
    if (!j.is_array() || j.size() != kDimensionCount) throw ValidationError("scores must be an array of six arrays");
    ScoreBlock b;
    b.provider_id = std::move(provider_id);
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        if (!j[d].is_array() || j[d].empty()) throw ValidationError("score entry must be a non-empty array");
        std::vector<double> probs;
        for (const auto& x : j[d]) {
            if (!x.is_number()) throw ValidationError("score entries must be numbers");
            probs.push_back(x.get<double>());
        }
        b.per_dimension[d] = ScoreVector(std::move(probs));
    }
    b.validate();
    return b;
}

// One record of the line-delimited score file.
inline nlohmann::json score_record(const std::string& post_id, const ScoreBlock& b) {
    return {{"post_id", post_id}, {"provider_id", b.provider_id}, {"scores", scores_to_json(b)}};
}

inline nlohmann::json verdict_to_json(const FusedVerdict& v) {
    nlohmann::json j;
    auto& dims = j["dimensions"] = nlohmann::json::object();
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const auto& dv = v.per_dimension[d];
        dims[std::string(kDimensionNames[d])] = {{"fused", dv.fused.probs()}, {"label", dv.label}, {"margin", dv.margin}};
    }
    j["confidence"] = v.confidence;
    return j;
}

inline FusedVerdict verdict_from_json(const nlohmann::json& j) {
    FusedVerdict v;
    const auto& dims = j.at("dimensions");
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const auto& dj = dims.at(std::string(kDimensionNames[d]));
        v.per_dimension[d].fused = ScoreVector(dj.at("fused").get<std::vector<double>>());
        v.per_dimension[d].label = dj.at("label").get<std::size_t>();
        v.per_dimension[d].margin = dj.at("margin").get<double>();
    }
    v.confidence = j.at("confidence").get<double>();
    return v;
}

inline nlohmann::json post_to_json(const Post& p) {
    nlohmann::json j = {{"post_id", p.post_id},
                        {"course_id", p.course_id},
                        {"area", std::string(to_string(p.area))},
                        {"text", p.text}};
    if (p.gold) j["labels"] = label_vector_to_json(*p.gold);
    return j;
}

// post_id, course_id and text are required; area defaults to Education.
inline Post post_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("post must be a JSON object");
    auto str = [&](const char* key, bool required) -> std::string {
        const auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            if (required) throw ValidationError(std::string("post is missing '") + key + "'");
            return {};
        }
        if (!it->is_string()) throw ValidationError(std::string("'") + key + "' must be a string");
        return it->get<std::string>();
    };
    Post p;
    p.post_id = str("post_id", true);
    p.course_id = str("course_id", true);
    p.text = str("text", true);
    if (is_blank(p.post_id)) throw ValidationError("post_id is empty");
    if (is_blank(p.text)) throw ValidationError("post text is empty");
    if (is_digits_only(p.text)) throw ValidationError("post text is numeric only");
    const std::string area = str("area", false);
    if (!area.empty()) {
        const auto a = parse_area(area);
        if (!a) throw ValidationError("unknown area '" + area + "'");
        p.area = *a;
    }
    if (j.contains("labels") && !j["labels"].is_null()) p.gold = label_vector_from_json(j["labels"]);
    return p;
}

}  // namespace forumfuse
