#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forumfuse/fusion.hpp"
#include "forumfuse/json_io.hpp"
#include "forumfuse/providers/provider.hpp"
#include "forumfuse/text.hpp"

namespace forumfuse {

inline constexpr int kLocalModelFormatVersion = 1;

struct LocalTrainConfig {
    bool chain_mode = false;
    double smoothing = 1.0;  // add-k
    std::size_t min_token_freq = 1;
    std::uint64_t seed = 0;
    // Replace a single-class dimension with a constant head instead of failing.
    bool allow_degenerate = false;
    std::array<Dimension, kDimensionCount> dimension_order = kAllDimensions;
    double prior_floor = 1e-6;
};

// One multinomial naive-Bayes head per dimension over a shared vocabulary.
// In chain mode each head also conditions on the labels of the dimensions
// that precede it in `dimension_order`: gold labels when training,
// predicted labels at inference.
struct LocalModel {
    struct Head {
        PriorVector prior;
        std::vector<std::vector<std::uint64_t>> token_counts;  // [class][token]
        std::vector<std::uint64_t> class_token_totals;
        std::vector<std::uint64_t> class_doc_counts;
        // Set when the head was forced to a constant prediction.
        std::optional<std::size_t> degenerate_class;
        // [upstream dimension][class][upstream label] document counts.
        std::map<std::size_t, std::vector<std::array<std::uint64_t, 2>>> chain_counts;

        friend bool operator==(const Head&, const Head&) = default;
    };

    std::map<std::string, std::size_t> vocabulary;
    std::array<Head, kDimensionCount> heads;
    bool chain_mode = false;
    double smoothing = 1.0;
    std::array<Dimension, kDimensionCount> dimension_order = kAllDimensions;

    friend bool operator==(const LocalModel&, const LocalModel&) = default;

    PerDimensionPriors priors() const {
        PerDimensionPriors p;
        for (std::size_t d = 0; d < kDimensionCount; ++d) p[d] = heads[d].prior;
        return p;
    }

    nlohmann::json to_json() const;
    static LocalModel from_json(const nlohmann::json& j);
};

namespace detail {

inline std::vector<std::size_t> token_ids(const LocalModel& m, const std::string& text) {
    std::vector<std::size_t> ids;
    for (const auto& t : text::tokenize(text)) {
        auto it = m.vocabulary.find(t);
        if (it != m.vocabulary.end()) ids.push_back(it->second);
    }
    return ids;
}

inline std::size_t position_in_order(const LocalModel& m, std::size_t d) {
    for (std::size_t i = 0; i < kDimensionCount; ++i)
        if (index_of(m.dimension_order[i]) == d) return i;
    return kDimensionCount;
}

inline void check_order(const std::array<Dimension, kDimensionCount>& order) {
    std::array<bool, kDimensionCount> seen{};
    for (Dimension d : order) {
        if (seen[index_of(d)]) throw ValidationError("dimension_order must be a permutation of the six dimensions");
        seen[index_of(d)] = true;
    }
}

}  // namespace detail

inline LocalModel train_local(const Corpus& corpus, const LocalTrainConfig& config = {}) {
    if (corpus.empty()) throw TrainingError("training corpus is empty");
    if (!(config.smoothing > 0.0)) throw TrainingError("smoothing must be positive");
    detail::check_order(config.dimension_order);
    for (const auto& p : corpus) {
        if (!p.gold) throw TrainingError("training post '" + p.post_id + "' has no gold labels");
    }

    LocalModel m;
    m.chain_mode = config.chain_mode;
    m.smoothing = config.smoothing;
    m.dimension_order = config.dimension_order;

    std::vector<std::vector<std::string>> docs;
    docs.reserve(corpus.size());
    std::map<std::string, std::size_t> freq;
    for (const auto& p : corpus) {
        docs.push_back(text::tokenize(p.text));
        for (const auto& t : docs.back()) ++freq[t];
    }
    for (const auto& [tok, n] : freq) {
        if (n >= config.min_token_freq) m.vocabulary.emplace(tok, m.vocabulary.size());
    }
    if (m.vocabulary.empty()) throw TrainingError("vocabulary is empty after applying min_token_freq");
    // Indices follow lexicographic token order so that the model does not
    // depend on corpus order.
    std::size_t next = 0;
    for (auto& [tok, idx] : m.vocabulary) idx = next++;

    const std::size_t v = m.vocabulary.size();
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        auto& h = m.heads[d];
        h.token_counts.assign(2, std::vector<std::uint64_t>(v, 0));
        h.class_token_totals.assign(2, 0);
        h.class_doc_counts.assign(2, 0);
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        std::vector<std::size_t> ids;
        for (const auto& t : docs[i]) {
            auto it = m.vocabulary.find(t);
            if (it != m.vocabulary.end()) ids.push_back(it->second);
        }
        const LabelVector& gold = *corpus[i].gold;
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            auto& h = m.heads[d];
            const std::size_t c = gold[d];
            ++h.class_doc_counts[c];
            for (std::size_t id : ids) ++h.token_counts[c][id];
            h.class_token_totals[c] += ids.size();
        }
    }

    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        auto& h = m.heads[d];
        const auto n = static_cast<double>(corpus.size());
        const bool single = h.class_doc_counts[0] == 0 || h.class_doc_counts[1] == 0;
        if (single) {
            if (!config.allow_degenerate)
                throw TrainingError("dimension '" + std::string(kDimensionNames[d]) + "' has single-class training data",
                                    std::string(kDimensionNames[d]));
            h.degenerate_class = h.class_doc_counts[0] == 0 ? 1 : 0;
        }
        std::vector<double> prior = {std::max(static_cast<double>(h.class_doc_counts[0]) / n, config.prior_floor),
                                     std::max(static_cast<double>(h.class_doc_counts[1]) / n, config.prior_floor)};
        h.prior = ScoreVector::normalized(std::move(prior));
    }

    if (m.chain_mode) {
        for (std::size_t pos = 1; pos < kDimensionCount; ++pos) {
            const std::size_t d = index_of(m.dimension_order[pos]);
            for (std::size_t up = 0; up < pos; ++up) {
                const std::size_t u = index_of(m.dimension_order[up]);
                auto& counts = m.heads[d].chain_counts[u];
                counts.assign(2, {0, 0});
                for (const auto& p : corpus) ++counts[(*p.gold)[d]][(*p.gold)[u]];
            }
        }
    }
    return m;
}

// Posterior per dimension; out-of-vocabulary text yields the class priors
// (in chain mode, combined with the upstream label factors).
inline ScoreBlock predict_local(const LocalModel& m, const Post& post, const std::string& provider_id = "local") {
    const auto ids = detail::token_ids(m, post.text);
    const auto v = static_cast<double>(m.vocabulary.size());
    const double k = m.smoothing;

    ScoreBlock out;
    out.provider_id = provider_id;
    std::array<std::size_t, kDimensionCount> predicted{};
    for (Dimension dim : m.dimension_order) {
        const std::size_t d = index_of(dim);
        const auto& h = m.heads[d];
        if (h.degenerate_class) {
            out.per_dimension[d] = h.prior;
            predicted[d] = *h.degenerate_class;
            continue;
        }
        std::vector<double> logp(2);
        for (std::size_t c = 0; c < 2; ++c) {
            double acc = std::log(h.prior[c]);
            const double denom = std::log(static_cast<double>(h.class_token_totals[c]) + k * v);
            for (std::size_t id : ids) acc += std::log(static_cast<double>(h.token_counts[c][id]) + k) - denom;
            if (m.chain_mode) {
                for (const auto& [u, counts] : h.chain_counts) {
                    const auto& row = counts[c];
                    const double n_c = static_cast<double>(row[0] + row[1]);
                    acc += std::log((static_cast<double>(row[predicted[u]]) + k) / (n_c + 2.0 * k));
                }
            }
            logp[c] = acc;
        }
        const double top = std::max(logp[0], logp[1]);
        out.per_dimension[d] = ScoreVector::normalized({std::exp(logp[0] - top), std::exp(logp[1] - top)});
        predicted[d] = out.per_dimension[d].argmax();
    }
    return out;
}

inline nlohmann::json LocalModel::to_json() const {
    nlohmann::json j;
    j["format"] = "forumfuse-local-model";
    j["format_version"] = kLocalModelFormatVersion;
    j["chain_mode"] = chain_mode;
    j["smoothing"] = smoothing;
    auto& order = j["dimension_order"] = nlohmann::json::array();
    for (Dimension d : dimension_order) order.push_back(std::string(to_string(d)));
    // Tokens listed by index.
    std::vector<std::string> tokens(vocabulary.size());
    for (const auto& [tok, idx] : vocabulary) tokens[idx] = tok;
    j["vocabulary"] = tokens;
    auto& heads_j = j["heads"] = nlohmann::json::object();
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const auto& h = heads[d];
        nlohmann::json hj;
        hj["prior"] = h.prior.probs();
        hj["token_counts"] = h.token_counts;
        hj["class_token_totals"] = h.class_token_totals;
        hj["class_doc_counts"] = h.class_doc_counts;
        hj["degenerate_class"] = h.degenerate_class ? nlohmann::json(*h.degenerate_class) : nlohmann::json(nullptr);
        auto& chain = hj["chain_counts"] = nlohmann::json::object();
        for (const auto& [u, counts] : h.chain_counts) chain[std::string(kDimensionNames[u])] = counts;
        heads_j[std::string(kDimensionNames[d])] = std::move(hj);
    }
    return j;
}

inline LocalModel LocalModel::from_json(const nlohmann::json& j) {
    if (j.value("format", std::string()) != "forumfuse-local-model") throw SchemaError("not a local model artifact");
    if (j.at("format_version").get<int>() != kLocalModelFormatVersion)
        throw SchemaError("unsupported local model format version");
    LocalModel m;
    m.chain_mode = j.at("chain_mode").get<bool>();
    m.smoothing = j.at("smoothing").get<double>();
    const auto& order = j.at("dimension_order");
    if (order.size() != kDimensionCount) throw SchemaError("dimension_order must list six dimensions");
    for (std::size_t i = 0; i < kDimensionCount; ++i) m.dimension_order[i] = parse_dimension(order[i].get<std::string>());
    detail::check_order(m.dimension_order);
    const auto tokens = j.at("vocabulary").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < tokens.size(); ++i) m.vocabulary.emplace(tokens[i], i);
    if (m.vocabulary.size() != tokens.size()) throw SchemaError("vocabulary has duplicate tokens");
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        const auto& hj = j.at("heads").at(std::string(kDimensionNames[d]));
        auto& h = m.heads[d];
        h.prior = ScoreVector(hj.at("prior").get<std::vector<double>>());
        h.token_counts = hj.at("token_counts").get<std::vector<std::vector<std::uint64_t>>>();
        h.class_token_totals = hj.at("class_token_totals").get<std::vector<std::uint64_t>>();
        h.class_doc_counts = hj.at("class_doc_counts").get<std::vector<std::uint64_t>>();
        if (!hj.at("degenerate_class").is_null()) h.degenerate_class = hj.at("degenerate_class").get<std::size_t>();
        for (auto& [name, counts] : hj.at("chain_counts").items())
            h.chain_counts[index_of(parse_dimension(name))] = counts.get<std::vector<std::array<std::uint64_t, 2>>>();
        if (!h.prior.is_valid() || h.token_counts.size() != 2 || h.token_counts[0].size() != tokens.size() ||
            h.token_counts[1].size() != tokens.size() || h.class_token_totals.size() != 2 || h.class_doc_counts.size() != 2)
            throw SchemaError("malformed head for dimension '" + std::string(kDimensionNames[d]) + "'");
    }
    return m;
}

inline void save_model(const LocalModel& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write model file " + path.string());
    out << m.to_json().dump() << '\n';
}

inline LocalModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot open model file " + path.string());
    return LocalModel::from_json(nlohmann::json::parse(in));
}

class LocalProvider final : public ScoreProvider {
public:
    LocalProvider(std::string id, std::shared_ptr<const LocalModel> model) : id_(std::move(id)), model_(std::move(model)) {}

    const std::string& id() const override { return id_; }
    ProviderKind kind() const override { return ProviderKind::LocalMDC; }
    ScoreBlock score(const Post& post) const override { return predict_local(*model_, post, id_); }

    const LocalModel& model() const { return *model_; }

private:
    std::string id_;
    std::shared_ptr<const LocalModel> model_;
};

}  // namespace forumfuse
