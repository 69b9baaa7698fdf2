#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "forumfuse/core.hpp"

namespace forumfuse {

struct SplitParams {
    double train_fraction = 0.8;
    std::uint64_t seed = 7;
    // Restricts Intracourse to one course.
    std::optional<std::string> course;
    // Intradomain: held-out course. Defaults to the lexicographically last
    // course of each area with at least two courses.
    std::optional<std::string> test_course;
};

namespace detail {

// Stratum key used for the seeded split: urgency label, or a separate
// bucket for unlabeled posts.
inline int urgency_stratum(const Post& p) {
    if (!p.gold) return -1;
    return (*p.gold)[Dimension::Urgency];
}

// Seeded split of `posts` with the train size fixed at round(n * fraction)
// and per-stratum quotas assigned by largest remainder.
inline DatasetSplit stratified_split(const std::vector<const Post*>& posts, double fraction, std::uint64_t seed,
                                     std::string name) {
    std::map<int, std::vector<const Post*>> strata;
    for (const Post* p : posts) strata[urgency_stratum(*p)].push_back(p);

    const std::size_t n = posts.size();
    const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
    std::map<int, std::size_t> quota;
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (auto& [key, members] : strata) {
        const double exact = static_cast<double>(members.size()) * fraction;
        quota[key] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[key];
        remainders.emplace_back(exact - std::floor(exact), key);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];

    DatasetSplit split;
    split.name = std::move(name);
    std::mt19937_64 rng(seed);
    for (auto& [key, members] : strata) {
        std::vector<const Post*> order = members;
        std::sort(order.begin(), order.end(), [](const Post* a, const Post* b) { return a->post_id < b->post_id; });
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < quota[key] ? split.train : split.test).insert(order[i]->post_id);
        }
    }
    return split;
}

}  // namespace detail

// Builds the splits for one generalization configuration. Every returned
// split has disjoint, non-empty train and test sets.
inline std::vector<DatasetSplit> make_splits(const Corpus& corpus, Configuration configuration,
                                             const SplitParams& params = {}) {
    if (!(params.train_fraction > 0.0 && params.train_fraction < 1.0))
        throw ValidationError("train_fraction must lie in (0, 1)");

    std::map<std::string, std::vector<const Post*>> by_course;
    std::map<Area, std::map<std::string, std::vector<const Post*>>> by_area_course;
    for (const auto& p : corpus) {
        by_course[p.course_id].push_back(&p);
        by_area_course[p.area][p.course_id].push_back(&p);
    }

    std::vector<DatasetSplit> splits;
    switch (configuration) {
        case Configuration::Intracourse: {
            for (const auto& [course, posts] : by_course) {
                if (params.course && *params.course != course) continue;
                auto split = detail::stratified_split(posts, params.train_fraction, params.seed, "intracourse:" + course);
                if (split.train.empty() || split.test.empty()) continue;
                split.configuration = configuration;
                splits.push_back(std::move(split));
            }
            if (splits.empty())
                throw InfeasibleError(params.course ? "course '" + *params.course + "' cannot be split"
                                                    : "no course has enough posts for an intracourse split");
            break;
        }
        case Configuration::Intradomain: {
            for (const auto& [area, courses] : by_area_course) {
                if (courses.size() < 2) continue;
                std::string held_out = courses.rbegin()->first;
                if (params.test_course) {
                    if (!courses.count(*params.test_course)) continue;
                    held_out = *params.test_course;
                }
                DatasetSplit split;
                split.configuration = configuration;
                split.name = "intradomain:" + std::string(to_string(area)) + ":" + held_out;
                for (const auto& [course, posts] : courses) {
                    for (const Post* p : posts) (course == held_out ? split.test : split.train).insert(p->post_id);
                }
                splits.push_back(std::move(split));
            }
            if (splits.empty()) throw InfeasibleError("intradomain needs an area with at least two courses");
            break;
        }
        case Configuration::Crossdomain: {
            if (by_area_course.size() < 2) throw InfeasibleError("crossdomain needs posts from at least two areas");
            for (const auto& [train_area, train_courses] : by_area_course) {
                for (const auto& [test_area, test_courses] : by_area_course) {
                    if (train_area == test_area) continue;
                    DatasetSplit split;
                    split.configuration = configuration;
                    split.name = "crossdomain:" + std::string(to_string(train_area)) + "->" + std::string(to_string(test_area));
                    for (const auto& [c, posts] : train_courses)
                        for (const Post* p : posts) split.train.insert(p->post_id);
                    for (const auto& [c, posts] : test_courses)
                        for (const Post* p : posts) split.test.insert(p->post_id);
                    splits.push_back(std::move(split));
                }
            }
            break;
        }
    }
    for (const auto& s : splits) s.validate();
    return splits;
}

}  // namespace forumfuse
