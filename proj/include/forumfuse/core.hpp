#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "forumfuse/error.hpp"

namespace forumfuse {

inline constexpr std::size_t kDimensionCount = 6;

// Fixed order used by every index-aligned array in the library.
enum class Dimension : std::uint8_t { Opinion, Question, Answer, Sentiment, Confusion, Urgency };

inline constexpr std::array<Dimension, kDimensionCount> kAllDimensions = {
    Dimension::Opinion,   Dimension::Question,  Dimension::Answer,
    Dimension::Sentiment, Dimension::Confusion, Dimension::Urgency};

inline constexpr std::array<std::string_view, kDimensionCount> kDimensionNames = {
    "opinion", "question", "answer", "sentiment", "confusion", "urgency"};

constexpr std::size_t index_of(Dimension d) noexcept { return static_cast<std::size_t>(d); }

constexpr std::string_view to_string(Dimension d) noexcept { return kDimensionNames[index_of(d)]; }

inline Dimension parse_dimension(std::string_view name) {
    for (std::size_t i = 0; i < kDimensionCount; ++i) {
        if (kDimensionNames[i] == name) return kAllDimensions[i];
    }
    throw ValidationError("unknown dimension '" + std::string(name) + "'");
}

enum class RawScale : std::uint8_t { Binary, Ordinal1To7 };

struct DimensionDescriptor {
    Dimension dimension;
    RawScale raw_scale;
    std::size_t class_count = 2;
};

// The six dimensions with their raw scales. Ordinal dimensions are mapped to
// class 1 when the raw value is >= ordinal_threshold.
struct DimensionSchema {
    std::array<DimensionDescriptor, kDimensionCount> dimensions = {{
        {Dimension::Opinion, RawScale::Binary, 2},
        {Dimension::Question, RawScale::Binary, 2},
        {Dimension::Answer, RawScale::Binary, 2},
        {Dimension::Sentiment, RawScale::Ordinal1To7, 2},
        {Dimension::Confusion, RawScale::Ordinal1To7, 2},
        {Dimension::Urgency, RawScale::Ordinal1To7, 2},
    }};
    double ordinal_threshold = 4.0;

    static DimensionSchema standard() { return {}; }

    void validate() const {
        for (std::size_t i = 0; i < kDimensionCount; ++i) {
            const auto& d = dimensions[i];
            if (d.dimension != kAllDimensions[i])
                throw SchemaError("dimension order must be opinion, question, answer, sentiment, confusion, urgency");
            const RawScale expected = i < 3 ? RawScale::Binary : RawScale::Ordinal1To7;
            if (d.raw_scale != expected)
                throw SchemaError("dimension '" + std::string(to_string(d.dimension)) + "' has the wrong raw scale");
            if (d.class_count != 2) throw SchemaError("every dimension is binary after binarization");
        }
        if (!(ordinal_threshold > 1.0 && ordinal_threshold <= 7.0))
            throw SchemaError("ordinal threshold must lie in (1, 7]");
    }
};

enum class Area : std::uint8_t { Education, HumanitiesScience, Medicine };

inline constexpr std::array<Area, 3> kAllAreas = {Area::Education, Area::HumanitiesScience, Area::Medicine};

constexpr std::string_view to_string(Area a) noexcept {
    switch (a) {
        case Area::Education: return "Education";
        case Area::HumanitiesScience: return "HumanitiesScience";
        case Area::Medicine: return "Medicine";
    }
    return "?";
}

// Accepts the canonical names plus the spellings found in common exports.
inline std::optional<Area> parse_area(std::string_view raw) {
    std::string s;
    for (char c : raw) {
        if (std::isalnum(static_cast<unsigned char>(c))) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (s == "education" || s == "edu" || s == "educ") return Area::Education;
    if (s == "humanitiesscience" || s == "humanitiessciences" || s == "humanities" || s == "hs" ||
        s == "science" || s == "sciences")
        return Area::HumanitiesScience;
    if (s == "medicine" || s == "med" || s == "medical") return Area::Medicine;
    return std::nullopt;
}

struct LabelVector {
    std::array<std::uint8_t, kDimensionCount> labels{};

    std::uint8_t operator[](Dimension d) const noexcept { return labels[index_of(d)]; }
    std::uint8_t operator[](std::size_t i) const noexcept { return labels[i]; }

    friend bool operator==(const LabelVector&, const LabelVector&) = default;

    void validate() const {
        for (std::size_t i = 0; i < kDimensionCount; ++i) {
            if (labels[i] > 1)
                throw ValidationError("label for '" + std::string(kDimensionNames[i]) + "' must be 0 or 1");
        }
    }
};

// Annotation as it appears in the source data. Ordinal values may be
// annotator averages, so they are kept as reals.
struct RawAnnotation {
    int opinion = 0;
    int question = 0;
    int answer = 0;
    double sentiment = 1;
    double confusion = 1;
    double urgency = 1;

    friend bool operator==(const RawAnnotation&, const RawAnnotation&) = default;

    void validate() const {
        auto check_binary = [](int v, std::string_view name) {
            if (v != 0 && v != 1) throw ValidationError(std::string(name) + " must be 0 or 1, got " + std::to_string(v));
        };
        auto check_ordinal = [](double v, std::string_view name) {
            if (!(v >= 1.0 && v <= 7.0))
                throw ValidationError(std::string(name) + " must lie in 1..7, got " + std::to_string(v));
        };
        check_binary(opinion, "opinion");
        check_binary(question, "question");
        check_binary(answer, "answer");
        check_ordinal(sentiment, "sentiment");
        check_ordinal(confusion, "confusion");
        check_ordinal(urgency, "urgency");
    }
};

inline LabelVector binarize(const RawAnnotation& raw, const DimensionSchema& schema = DimensionSchema::standard()) {
    raw.validate();
    auto ordinal = [&](double v) -> std::uint8_t { return v >= schema.ordinal_threshold ? 1 : 0; };
    LabelVector out;
    out.labels = {static_cast<std::uint8_t>(raw.opinion), static_cast<std::uint8_t>(raw.question),
                  static_cast<std::uint8_t>(raw.answer),  ordinal(raw.sentiment),
                  ordinal(raw.confusion),                 ordinal(raw.urgency)};
    return out;
}

struct Post {
    std::string post_id;
    std::string course_id;
    Area area = Area::Education;
    std::string text;
    std::optional<LabelVector> gold;
    // Kept so that a corpus can be written back out without loss.
    std::optional<RawAnnotation> raw;

    friend bool operator==(const Post&, const Post&) = default;
};

using Corpus = std::vector<Post>;

inline bool is_blank(std::string_view s) {
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

// True when every non-space character is an ASCII digit.
inline bool is_digits_only(std::string_view s) {
    bool any = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
        any = true;
    }
    return any;
}

enum class Configuration : std::uint8_t { Intracourse, Intradomain, Crossdomain };

inline constexpr std::array<Configuration, 3> kAllConfigurations = {
    Configuration::Intracourse, Configuration::Intradomain, Configuration::Crossdomain};

constexpr std::string_view to_string(Configuration c) noexcept {
    switch (c) {
        case Configuration::Intracourse: return "Intracourse";
        case Configuration::Intradomain: return "Intradomain";
        case Configuration::Crossdomain: return "Crossdomain";
    }
    return "?";
}

inline Configuration parse_configuration(std::string_view raw) {
    std::string s;
    for (char c : raw) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "intracourse") return Configuration::Intracourse;
    if (s == "intradomain") return Configuration::Intradomain;
    if (s == "crossdomain") return Configuration::Crossdomain;
    throw ValidationError("unknown configuration '" + std::string(raw) + "'");
}

struct DatasetSplit {
    std::string name;
    std::set<std::string> train;
    std::set<std::string> test;
    Configuration configuration = Configuration::Intracourse;

    void validate() const {
        if (train.empty() || test.empty()) throw InfeasibleError("split '" + name + "' has an empty side");
        for (const auto& id : test) {
            if (train.count(id)) throw ValidationError("split '" + name + "' shares post '" + id + "' between train and test");
        }
    }
};

}  // namespace forumfuse
