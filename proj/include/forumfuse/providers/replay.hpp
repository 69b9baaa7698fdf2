#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forumfuse/json_io.hpp"
#include "forumfuse/providers/provider.hpp"

namespace forumfuse {

// post_id -> provider_id -> block
using ScoreTable = std::map<std::string, std::map<std::string, ScoreBlock>>;

struct ReplayReport {
    struct Issue {
        std::size_t line = 0;
        std::string message;
    };
    std::size_t records = 0;
    std::vector<Issue> rejected;
    // Later record replaced an earlier one for the same (post, provider).
    std::vector<Issue> duplicates;
};

struct ReplayResult {
    ScoreTable scores;
    ReplayReport report;
};

// Line-delimited score records {post_id, provider_id, scores}. Invalid
// lines are rejected with their line number; the last duplicate wins.
inline ReplayResult replay_scores(std::istream& in) {
    ReplayResult out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto post_id = j.at("post_id").get<std::string>();
            const auto provider_id = j.at("provider_id").get<std::string>();
            auto block = scores_from_json(provider_id, j.at("scores"));
            auto& slot = out.scores[post_id];
            if (slot.count(provider_id))
                out.report.duplicates.push_back({n, "duplicate record for (" + post_id + ", " + provider_id + ")"});
            slot[provider_id] = std::move(block);
            ++out.report.records;
        } catch (const std::exception& e) {
            out.report.rejected.push_back({n, e.what()});
        }
    }
    return out;
}

inline ReplayResult replay_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("io_error", "cannot open score file " + path.string());
    return replay_scores(in);
}

inline void write_scores(std::ostream& out, const std::string& post_id, const ScoreBlock& block) {
    out << score_record(post_id, block).dump() << '\n';
}

// Serves pre-recorded blocks for one provider id.
class ReplayProvider final : public ScoreProvider {
public:
    ReplayProvider(std::string id, const ScoreTable& table, std::string source_provider = {})
        : id_(std::move(id)) {
        const std::string& source = source_provider.empty() ? id_ : source_provider;
        for (const auto& [post_id, by_provider] : table) {
            auto it = by_provider.find(source);
            if (it != by_provider.end()) blocks_[post_id] = it->second;
        }
    }

    const std::string& id() const override { return id_; }
    ProviderKind kind() const override { return ProviderKind::Replay; }

    ScoreBlock score(const Post& post) const override {
        auto it = blocks_.find(post.post_id);
        if (it == blocks_.end()) throw ProviderUnavailable("no recorded scores for post '" + post.post_id + "'");
        ScoreBlock b = it->second;
        b.provider_id = id_;
        return b;
    }

    std::size_t size() const { return blocks_.size(); }

private:
    std::string id_;
    std::map<std::string, ScoreBlock> blocks_;
};

}  // namespace forumfuse
