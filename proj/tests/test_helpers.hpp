#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "forumfuse/core.hpp"
#include "forumfuse/fusion.hpp"

namespace forumfuse::testing {

// Same score vector on all six dimensions.
inline ScoreBlock uniform_block(std::string provider, const ScoreVector& v) {
    ScoreBlock b;
    b.provider_id = std::move(provider);
    b.per_dimension.fill(v);
    return b;
}

inline ScoreVector random_vector(std::mt19937_64& rng, std::size_t k, double floor = 0.0) {
    std::uniform_real_distribution<double> u(floor, 1.0);
    std::vector<double> w(k);
    for (auto& x : w) x = u(rng);
    return ScoreVector::normalized(std::move(w));
}

inline ScoreBlock random_block(std::mt19937_64& rng, std::string provider, std::size_t k, double floor = 0.0) {
    ScoreBlock b;
    b.provider_id = std::move(provider);
    for (auto& v : b.per_dimension) v = random_vector(rng, k, floor);
    return b;
}

// Labeled corpus whose texts carry one marker word per positive dimension
// plus filler, spread over six courses in three areas.
// With answer_not_question, answer = 1 - question before the text is drawn.
inline Corpus synthetic_corpus(std::size_t n, std::uint64_t seed, bool answer_not_question = false) {
    static const char* courses[] = {"EDU1", "EDU2", "MED1", "MED2", "HS1", "HS2"};
    static const Area areas[] = {Area::Education, Area::Education, Area::Medicine,
                                 Area::Medicine, Area::HumanitiesScience, Area::HumanitiesScience};
    static const char* markers[] = {"think", "how", "because", "great", "lost", "asap"};
    static const char* filler[] = {"week", "lecture", "video", "quiz", "reading", "forum", "notes", "grade"};
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution pos(0.35), keep(0.95);
    std::uniform_int_distribution<int> f(0, 7);
    Corpus c;
    for (std::size_t i = 0; i < n; ++i) {
        Post p;
        p.post_id = "s" + std::to_string(100000 + i);
        const std::size_t k = i % 6;
        p.course_id = courses[k];
        p.area = areas[k];
        LabelVector g;
        std::string text;
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            g.labels[d] = pos(rng) ? 1 : 0;
            if (answer_not_question && d == 2) g.labels[d] = g.labels[1] ? 0 : 1;
            if (g.labels[d] == keep(rng)) text += std::string(markers[d]) + " ";
        }
        for (int j = 0; j < 4; ++j) text += std::string(filler[f(rng)]) + " ";
        p.text = text;
        p.gold = g;
        RawAnnotation raw;
        raw.opinion = g.labels[0];
        raw.question = g.labels[1];
        raw.answer = g.labels[2];
        raw.sentiment = g.labels[3] ? 5 : 3;
        raw.confusion = g.labels[4] ? 5 : 3;
        raw.urgency = g.labels[5] ? 6 : 2;
        p.raw = raw;
        c.push_back(std::move(p));
    }
    return c;
}

// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("forumfuse-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace forumfuse::testing
