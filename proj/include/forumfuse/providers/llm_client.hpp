#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "forumfuse/json_io.hpp"
#include "forumfuse/providers/provider.hpp"

namespace forumfuse {

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

struct LlmConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    // Name of the environment variable holding the bearer token.
    std::string api_key_env = "OPENAI_API_KEY";
    std::string model = "gpt-4o-mini";
    double timeout_seconds = 30.0;
    int max_attempts = 3;
    int initial_backoff_ms = 500;
    double calibration_confidence = 0.9;
    std::size_t max_in_flight = 4;
    bool json_response_format = false;

    // FORUMFUSE_LLM_BASE_URL, FORUMFUSE_LLM_PATH, FORUMFUSE_LLM_MODEL,
    // FORUMFUSE_LLM_API_KEY_ENV, FORUMFUSE_LLM_TIMEOUT override the defaults.
    static LlmConfig from_env() {
        LlmConfig c;
        auto env = [](const char* name) -> std::optional<std::string> {
            const char* v = std::getenv(name);
            if (!v || !*v) return std::nullopt;
            return std::string(v);
        };
        if (auto v = env("FORUMFUSE_LLM_BASE_URL")) c.base_url = *v;
        if (auto v = env("FORUMFUSE_LLM_PATH")) c.path = *v;
        if (auto v = env("FORUMFUSE_LLM_MODEL")) c.model = *v;
        if (auto v = env("FORUMFUSE_LLM_API_KEY_ENV")) c.api_key_env = *v;
        if (auto v = env("FORUMFUSE_LLM_TIMEOUT")) c.timeout_seconds = std::stod(*v);
        return c;
    }

    static LlmConfig from_json(const nlohmann::json& j) { return from_json(j, LlmConfig{}); }

    static LlmConfig from_json(const nlohmann::json& j, LlmConfig c) {
        c.base_url = j.value("base_url", c.base_url);
        c.path = j.value("path", c.path);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        c.model = j.value("model", c.model);
        c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
        c.max_attempts = j.value("max_attempts", c.max_attempts);
        c.initial_backoff_ms = j.value("initial_backoff_ms", c.initial_backoff_ms);
        c.calibration_confidence = j.value("calibration_confidence", c.calibration_confidence);
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        c.json_response_format = j.value("json_response_format", c.json_response_format);
        return c;
    }

    std::string api_key() const {
        const char* v = std::getenv(api_key_env.c_str());
        return v ? std::string(v) : std::string();
    }
};

struct PromptTemplate {
    std::string system =
        "You classify posts from online course discussion forums. For each of six dimensions, estimate the "
        "probability that the answer is yes. Reply with a single JSON object and nothing else.";
    // {post} is replaced with the post text.
    std::string user =
        "Forum post:\n\"\"\"\n{post}\n\"\"\"\n\n"
        "Dimensions:\n"
        "- opinion: does the post express an opinion?\n"
        "- question: does the post ask a question?\n"
        "- answer: does the post answer another participant's question?\n"
        "- sentiment: rated from 1 (very negative) to 7 (very positive), is it 4 or higher?\n"
        "- confusion: rated from 1 (none) to 7 (severe), is the confusion 4 or higher?\n"
        "- urgency: rated from 1 (can be ignored) to 7 (needs an instructor now), is it 4 or higher?\n\n"
        "Respond as {\"opinion\": p, \"question\": p, \"answer\": p, \"sentiment\": p, \"confusion\": p, "
        "\"urgency\": p} with each p between 0 and 1. If you cannot give probabilities, answer one line per "
        "dimension as `name: yes|no` (or `name: 1-7` for sentiment, confusion and urgency).";

    std::string render(const Post& post) const {
        std::string out = user;
        const std::string key = "{post}";
        for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + post.text.size()))
            out.replace(pos, key.size(), post.text);
        return out;
    }

    std::string hash() const { return sha256_hex(system + "\n\x1f\n" + user); }
};

namespace detail {

inline std::string strip_code_fence(const std::string& s) {
    const auto first = s.find('{');
    const auto last = s.rfind('}');
    if (first == std::string::npos || last == std::string::npos || last < first) return {};
    return s.substr(first, last - first + 1);
}

inline std::optional<std::uint8_t> discrete_label(std::size_t d, const nlohmann::json& v) {
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        if (s == "yes" || s == "true" || s == "y") return 1;
        if (s == "no" || s == "false" || s == "n") return 0;
        try {
            std::size_t used = 0;
            const double x = std::stod(s, &used);
            if (used == s.size()) return discrete_label(d, nlohmann::json(x));
        } catch (const std::exception&) {
        }
        return std::nullopt;
    }
    if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
    if (v.is_number()) {
        const double x = v.get<double>();
        if (d < 3) {
            if (x == 0.0 || x == 1.0) return static_cast<std::uint8_t>(x);
            return std::nullopt;
        }
        if (x >= 1.0 && x <= 7.0) return x >= 4.0 ? 1 : 0;
    }
    return std::nullopt;
}

}  // namespace detail

// Turns the model's reply into a ScoreBlock. Six probabilities in [0, 1]
// are taken as P(yes). Otherwise each dimension is read as a discrete
// answer (yes/no, or 1-7 for the ordinal ones, binarized at 4) and mapped
// to [1 - c, c] for yes and [c, 1 - c] for no, where c is the calibration
// confidence.
inline ScoreBlock parse_llm_content(const std::string& content, double calibration_confidence,
                                    const std::string& provider_id = "llm") {
    auto from_labels = [&](const std::array<std::uint8_t, kDimensionCount>& labels) {
        ScoreBlock b;
        b.provider_id = provider_id;
        for (std::size_t d = 0; d < kDimensionCount; ++d)
            b.per_dimension[d] = ScoreVector::binary(labels[d] ? calibration_confidence : 1.0 - calibration_confidence);
        return b;
    };

    const std::string body = detail::strip_code_fence(content);
    if (!body.empty()) {
        const auto j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_object()) {
            const nlohmann::json& obj = j.contains("scores") && j["scores"].is_object() ? j["scores"] : j;
            bool all_probs = true;
            std::array<double, kDimensionCount> probs{};
            for (std::size_t d = 0; d < kDimensionCount; ++d) {
                auto it = obj.find(std::string(kDimensionNames[d]));
                if (it == obj.end() || !it->is_number() || !(it->get<double>() >= 0.0 && it->get<double>() <= 1.0)) {
                    all_probs = false;
                    break;
                }
                probs[d] = it->get<double>();
            }
            if (all_probs) {
                ScoreBlock b;
                b.provider_id = provider_id;
                for (std::size_t d = 0; d < kDimensionCount; ++d) b.per_dimension[d] = ScoreVector::binary(probs[d]);
                return b;
            }
            std::array<std::uint8_t, kDimensionCount> labels{};
            bool all_discrete = true;
            for (std::size_t d = 0; d < kDimensionCount && all_discrete; ++d) {
                auto it = obj.find(std::string(kDimensionNames[d]));
                std::optional<std::uint8_t> l;
                if (it != obj.end()) l = detail::discrete_label(d, *it);
                if (!l) all_discrete = false;
                else labels[d] = *l;
            }
            if (all_discrete) return from_labels(labels);
        }
    }

    static const std::regex line_re(
        R"((opinion|question|answer|sentiment|confusion|urgency)\W{0,3}\s*[:=]\s*["']?([A-Za-z]+|\d+(?:\.\d+)?))",
        std::regex::icase);
    std::array<std::optional<std::uint8_t>, kDimensionCount> found;
    for (auto it = std::sregex_iterator(content.begin(), content.end(), line_re); it != std::sregex_iterator(); ++it) {
        std::string name = (*it)[1];
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        const std::size_t d = index_of(parse_dimension(name));
        if (!found[d]) found[d] = detail::discrete_label(d, nlohmann::json((*it)[2].str()));
    }
    std::array<std::uint8_t, kDimensionCount> labels{};
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        if (!found[d]) throw ScoringError("could not read dimension '" + std::string(kDimensionNames[d]) + "' from LLM reply", content);
        labels[d] = *found[d];
    }
    return from_labels(labels);
}

// Thread-safe score cache keyed by (model, prompt hash, post id),
// optionally persisted as line-delimited JSON.
class ScoreCache {
public:
    struct Key {
        std::string model;
        std::string prompt_hash;
        std::string post_id;
        auto operator<=>(const Key&) const = default;
    };

    ScoreCache() = default;

    explicit ScoreCache(std::filesystem::path file) : file_(std::move(file)) {
        std::ifstream in(*file_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) continue;
            try {
                Key k{j.at("model").get<std::string>(), j.at("prompt_hash").get<std::string>(),
                      j.at("post_id").get<std::string>()};
                entries_[k] = scores_from_json(j.value("provider_id", std::string("llm")), j.at("scores"));
            } catch (const std::exception&) {
                // a torn last line is expected after a crash
            }
        }
    }

    std::optional<ScoreBlock> get(const Key& k) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(k);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const Key& k, const ScoreBlock& b) {
        std::lock_guard lock(mu_);
        entries_[k] = b;
        if (file_) {
            std::ofstream out(*file_, std::ios::app);
            out << nlohmann::json{{"model", k.model}, {"prompt_hash", k.prompt_hash}, {"post_id", k.post_id},
                                  {"provider_id", b.provider_id}, {"scores", scores_to_json(b)}}
                       .dump()
                << '\n';
        }
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    // Writes the cached blocks in the replayable score-file format.
    void export_scores(std::ostream& out, const std::string& provider_id) const {
        std::lock_guard lock(mu_);
        for (const auto& [k, b] : entries_) {
            ScoreBlock copy = b;
            copy.provider_id = provider_id;
            out << score_record(k.post_id, copy).dump() << '\n';
        }
    }

private:
    mutable std::mutex mu_;
    std::map<Key, ScoreBlock> entries_;
    std::optional<std::filesystem::path> file_;
};

// Chat-completions client. One request per uncached post; transport
// failures, 429 and 5xx are retried with exponential backoff.
class LlmProvider final : public ScoreProvider {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    LlmProvider(std::string id, LlmConfig config, std::shared_ptr<ScoreCache> cache = std::make_shared<ScoreCache>(),
                PromptTemplate prompt = {})
        : id_(std::move(id)),
          config_(std::move(config)),
          cache_(std::move(cache)),
          prompt_(std::move(prompt)),
          prompt_hash_(prompt_.hash()),
          in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, std::min<std::size_t>(config_.max_in_flight, 64)))),
          sleep_([](std::chrono::milliseconds ms) { std::this_thread::sleep_for(ms); }) {}

    const std::string& id() const override { return id_; }
    ProviderKind kind() const override { return ProviderKind::LlmHttp; }

    void set_sleeper(Sleeper s) { sleep_ = std::move(s); }

    std::size_t requests_sent() const { return requests_sent_.load(); }
    const ScoreCache& cache() const { return *cache_; }
    const std::string& prompt_hash() const { return prompt_hash_; }

    ScoreBlock score(const Post& post) const override {
        const ScoreCache::Key key{config_.model, prompt_hash_, post.post_id};
        if (auto hit = cache_->get(key)) {
            hit->provider_id = id_;
            return *hit;
        }
        in_flight_.acquire();
        std::string content;
        try {
            content = request(post);
        } catch (...) {
            in_flight_.release();
            throw;
        }
        in_flight_.release();
        ScoreBlock b = parse_llm_content(content, config_.calibration_confidence, id_);
        b.validate();
        cache_->put(key, b);
        return b;
    }

    using BatchResult = std::variant<ScoreBlock, std::string>;

    // Scores posts with at most max_in_flight concurrent requests. Failures
    // are returned as their error message in the same slot.
    std::vector<BatchResult> score_batch(const std::vector<Post>& posts) const {
        std::vector<BatchResult> out(posts.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < posts.size(); i = next++) {
                try {
                    out[i] = score(posts[i]);
                } catch (const std::exception& e) {
                    out[i] = std::string(e.what());
                }
            }
        };
        const std::size_t n = std::min(posts.size(), std::max<std::size_t>(1, config_.max_in_flight));
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        return out;
    }

private:
    std::string request(const Post& post) const {
        nlohmann::json body = {{"model", config_.model},
                               {"temperature", 0},
                               {"messages",
                                {{{"role", "system"}, {"content", prompt_.system}},
                                 {{"role", "user"}, {"content", prompt_.render(post)}}}}};
        if (config_.json_response_format) body["response_format"] = {{"type", "json_object"}};
        const std::string payload = body.dump();

        httplib::Headers headers;
        if (const std::string key = config_.api_key(); !key.empty()) headers.emplace("Authorization", "Bearer " + key);

        std::string last_error;
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            httplib::Client client(config_.base_url);
            const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
            client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
            client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
            client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
            ++requests_sent_;
            auto res = client.Post(config_.path, headers, payload, "application/json");
            bool retryable = true;
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
            } else if (res->status == 200) {
                const auto j = nlohmann::json::parse(res->body, nullptr, false);
                if (j.is_discarded()) throw ScoringError("LLM endpoint returned invalid JSON", res->body);
                try {
                    return j.at("choices").at(0).at("message").at("content").get<std::string>();
                } catch (const std::exception&) {
                    throw ScoringError("LLM response has no message content", res->body);
                }
            } else {
                last_error = "HTTP " + std::to_string(res->status);
                retryable = res->status == 429 || res->status >= 500;
            }
            if (!retryable) break;
            if (attempt < config_.max_attempts) sleep_(std::chrono::milliseconds(config_.initial_backoff_ms << (attempt - 1)));
        }
        throw ProviderUnavailable("LLM endpoint unavailable for post '" + post.post_id + "': " + last_error);
    }

    std::string id_;
    LlmConfig config_;
    std::shared_ptr<ScoreCache> cache_;
    PromptTemplate prompt_;
    std::string prompt_hash_;
    mutable std::counting_semaphore<64> in_flight_;
    mutable std::atomic<std::size_t> requests_sent_{0};
    Sleeper sleep_;
};

}  // namespace forumfuse
