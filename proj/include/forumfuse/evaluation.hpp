#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forumfuse/core.hpp"
#include "forumfuse/fusion.hpp"
#include "forumfuse/providers/local_model.hpp"
#include "forumfuse/providers/provider.hpp"

namespace forumfuse {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }

    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Positive class is 1.
inline ConfusionCounts score_dimension(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold) {
    if (pred.size() != gold.size())
        throw ValidationError("prediction and gold sequences differ in length (" + std::to_string(pred.size()) + " vs " +
                              std::to_string(gold.size()) + ")");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gold[i] > 1) throw ValidationError("labels must be binary");
        if (pred[i] && gold[i]) ++c.tp;
        else if (pred[i]) ++c.fp;
        else if (gold[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

struct PrfScores {
    double precision = 0, recall = 0, f1 = 0;
    // A zero denominator forced the corresponding value to 0.
    bool degenerate = false;

    friend bool operator==(const PrfScores&, const PrfScores&) = default;
};

// 0/0 is taken as 0 for every ratio.
inline PrfScores prf(const ConfusionCounts& c) {
    PrfScores s;
    const auto tp = static_cast<double>(c.tp);
    const std::size_t p_den = c.tp + c.fp, r_den = c.tp + c.fn, f_den = 2 * c.tp + c.fp + c.fn;
    s.precision = p_den ? tp / static_cast<double>(p_den) : 0.0;
    s.recall = r_den ? tp / static_cast<double>(r_den) : 0.0;
    s.f1 = f_den ? 2.0 * tp / static_cast<double>(f_den) : 0.0;
    s.degenerate = p_den == 0 || r_den == 0 || f_den == 0;
    return s;
}

struct MetricsReport {
    std::string configuration;
    std::string system;
    std::string split;
    std::array<ConfusionCounts, kDimensionCount> counts{};
    std::array<PrfScores, kDimensionCount> per_dimension{};
    PrfScores macro;  // unweighted mean over dimensions
    PrfScores micro;  // from pooled counts
    std::size_t test_posts = 0;
    std::size_t evaluated_posts = 0;
    std::string error;

    double coverage() const {
        return test_posts ? static_cast<double>(evaluated_posts) / static_cast<double>(test_posts) : 0.0;
    }
    bool coverage_incomplete() const { return evaluated_posts < test_posts; }

    nlohmann::json to_json() const;
};

inline MetricsReport compute_metrics(const std::array<ConfusionCounts, kDimensionCount>& counts) {
    MetricsReport r;
    r.counts = counts;
    ConfusionCounts pooled;
    double p = 0, rc = 0, f = 0;
    bool degenerate = false;
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        r.per_dimension[d] = prf(counts[d]);
        p += r.per_dimension[d].precision;
        rc += r.per_dimension[d].recall;
        f += r.per_dimension[d].f1;
        degenerate = degenerate || r.per_dimension[d].degenerate;
        pooled += counts[d];
    }
    const auto n = static_cast<double>(kDimensionCount);
    r.macro = {p / n, rc / n, f / n, degenerate};
    r.micro = prf(pooled);
    r.evaluated_posts = r.test_posts = counts[0].total();
    return r;
}

namespace detail {

inline nlohmann::json prf_json(const PrfScores& s) {
    return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"degenerate", s.degenerate}};
}

}  // namespace detail

inline nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["configuration"] = configuration;
    j["system"] = system;
    j["split"] = split;
    auto& dims = j["per_dimension"] = nlohmann::json::object();
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        auto entry = detail::prf_json(per_dimension[d]);
        entry["counts"] = {{"tp", counts[d].tp}, {"fp", counts[d].fp}, {"fn", counts[d].fn}, {"tn", counts[d].tn}};
        dims[std::string(kDimensionNames[d])] = std::move(entry);
    }
    j["macro"] = detail::prf_json(macro);
    j["micro"] = detail::prf_json(micro);
    j["test_posts"] = test_posts;
    j["evaluated_posts"] = evaluated_posts;
    j["coverage"] = coverage();
    j["coverage_incomplete"] = coverage_incomplete();
    if (!error.empty()) j["error"] = error;
    return j;
}

// A single provider (argmax labels) or several providers combined by `rule`.
struct SystemSpec {
    std::string name;
    std::vector<std::string> providers;
    std::optional<FusionRule> rule;
    // "local", "llm" or "fusion": selects the published reference row.
    std::string reference_key;
};

struct ReferenceScores {
    double precision, recall, f1;
};

// Published macro P/R/F1 for context only; not reproducible without the
// original providers.
inline std::optional<ReferenceScores> reference_scores(Configuration c, std::string_view key) {
    struct Row {
        Configuration c;
        std::string_view key;
        ReferenceScores s;
    };
    static constexpr Row rows[] = {
        {Configuration::Intracourse, "local", {0.81, 0.80, 0.78}},
        {Configuration::Intracourse, "llm", {0.80, 0.78, 0.77}},
        {Configuration::Intracourse, "fusion", {0.81, 0.80, 0.78}},
        {Configuration::Intradomain, "local", {0.79, 0.79, 0.77}},
        {Configuration::Intradomain, "llm", {0.84, 0.78, 0.78}},
        {Configuration::Intradomain, "fusion", {0.84, 0.79, 0.78}},
        {Configuration::Crossdomain, "local", {0.73, 0.68, 0.67}},
        {Configuration::Crossdomain, "fusion", {0.73, 0.68, 0.67}},
    };
    for (const auto& r : rows)
        if (r.c == c && r.key == key) return r.s;
    return std::nullopt;
}

// Builds the provider `id` for one split; `train` holds the split's labeled
// training posts. Providers that do not learn ignore it.
using ProviderFactory = std::function<ProviderPtr(const std::string& id, const Corpus& train)>;

inline ProviderFactory static_providers(const ProviderRegistry& registry) {
    return [registry](const std::string& id, const Corpus&) { return registry.get(id); };
}

// Trains a fresh local model on every split's training posts for `local_id`
// and defers to `base` for every other id.
inline ProviderFactory with_local_training(ProviderFactory base, std::string local_id, LocalTrainConfig config = {}) {
    return [base = std::move(base), local_id = std::move(local_id), config](const std::string& id, const Corpus& train) {
        if (id != local_id) return base(id, train);
        return ProviderPtr(std::make_shared<LocalProvider>(id, std::make_shared<const LocalModel>(train_local(train, config))));
    };
}

struct ExperimentOptions {
    std::size_t workers = 1;
};

struct AggregateRow {
    Configuration configuration;
    std::string system;
    PrfScores macro;  // averaged over the configuration's splits
    std::size_t splits = 0;
    double min_coverage = 1.0;
    std::string reference_key;
    std::optional<ReferenceScores> reference;
};

struct ExperimentResult {
    std::vector<MetricsReport> reports;
    std::vector<AggregateRow> aggregates;
    std::vector<std::string> systems;

    nlohmann::json to_json() const {
        nlohmann::json j;
        auto& reps = j["reports"] = nlohmann::json::array();
        for (const auto& r : reports) reps.push_back(r.to_json());
        auto& agg = j["table"] = nlohmann::json::array();
        for (const auto& a : aggregates) {
            nlohmann::json row = {{"configuration", std::string(to_string(a.configuration))},
                                  {"system", a.system},
                                  {"macro", detail::prf_json(a.macro)},
                                  {"splits", a.splits},
                                  {"min_coverage", a.min_coverage}};
            if (a.reference_key.empty()) {
                row["reference"] = nullptr;
            } else if (a.reference) {
                row["reference"] = {{"precision", a.reference->precision},
                                    {"recall", a.reference->recall},
                                    {"f1", a.reference->f1}};
            } else {
                row["reference"] = "not published";
            }
            agg.push_back(std::move(row));
        }
        return j;
    }

    // Rows are configurations, column groups are systems, columns P/R/F1.
    std::string render_table() const {
        std::vector<Configuration> configs;
        for (const auto& a : aggregates)
            if (std::find(configs.begin(), configs.end(), a.configuration) == configs.end()) configs.push_back(a.configuration);
        std::sort(configs.begin(), configs.end());
        auto find = [&](Configuration c, const std::string& s) -> const AggregateRow* {
            for (const auto& a : aggregates)
                if (a.configuration == c && a.system == s) return &a;
            return nullptr;
        };
        auto fmt = [](double v) {
            std::ostringstream o;
            o << std::fixed << std::setprecision(2) << v;
            return o.str();
        };
        constexpr int first = 14, cell = 6;
        const int group = 3 * cell;
        std::ostringstream out;
        out << std::left << std::setw(first) << "";
        for (const auto& s : systems) out << " | " << std::left << std::setw(group) << s.substr(0, group);
        out << '\n' << std::left << std::setw(first) << "Configuration";
        for (std::size_t i = 0; i < systems.size(); ++i)
            out << " | " << std::left << std::setw(cell) << "P" << std::setw(cell) << "R" << std::setw(cell) << "F1";
        out << '\n' << std::string(first + systems.size() * (group + 3), '-') << '\n';
        bool flagged = false;
        for (Configuration c : configs) {
            out << std::left << std::setw(first) << to_string(c);
            for (const auto& s : systems) {
                const AggregateRow* a = find(c, s);
                out << " | ";
                if (!a) {
                    out << std::left << std::setw(group) << "-";
                    continue;
                }
                const std::string mark = a->min_coverage < 1.0 ? "*" : "";
                flagged = flagged || !mark.empty();
                out << std::left << std::setw(cell) << fmt(a->macro.precision) << std::setw(cell) << fmt(a->macro.recall)
                    << std::setw(cell) << fmt(a->macro.f1) + mark;
            }
            out << '\n';
        }
        if (flagged) out << "* some test posts could not be scored; see coverage in the JSON report\n";
        bool header = false;
        for (const auto& a : aggregates) {
            if (a.reference_key.empty()) continue;
            if (!header) out << "\nPublished reference (context only):\n";
            header = true;
            out << "  " << std::left << std::setw(first) << to_string(a.configuration) << std::setw(group) << a.system;
            if (a.reference)
                out << fmt(a.reference->precision) << ' ' << fmt(a.reference->recall) << ' ' << fmt(a.reference->f1) << '\n';
            else
                out << "not published\n";
        }
        return out.str();
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "configuration,system,split,macro_p,macro_r,macro_f1,micro_p,micro_r,micro_f1,coverage\n";
        out << std::setprecision(17);
        for (const auto& r : reports)
            out << r.configuration << ',' << r.system << ',' << r.split << ',' << r.macro.precision << ','
                << r.macro.recall << ',' << r.macro.f1 << ',' << r.micro.precision << ',' << r.micro.recall << ','
                << r.micro.f1 << ',' << r.coverage() << '\n';
        return out.str();
    }
};

namespace detail {

inline std::vector<MetricsReport> run_split(const Corpus& corpus, const DatasetSplit& split,
                                            const std::vector<SystemSpec>& systems, const ProviderFactory& factory) {
    Corpus train, test;
    for (const auto& p : corpus) {
        if (split.train.count(p.post_id) && p.gold) train.push_back(p);
        if (split.test.count(p.post_id) && p.gold) test.push_back(p);
    }

    std::set<std::string> needed;
    for (const auto& s : systems) needed.insert(s.providers.begin(), s.providers.end());

    std::map<std::string, std::vector<std::optional<ScoreBlock>>> scores;
    std::map<std::string, std::string> provider_errors;
    for (const auto& id : needed) {
        auto& column = scores[id];
        column.resize(test.size());
        ProviderPtr provider;
        try {
            provider = factory(id, train);
        } catch (const std::exception& e) {
            provider_errors[id] = e.what();
            continue;
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            try {
                column[i] = provider->score(test[i]);
            } catch (const Error&) {
                // counted through coverage
            }
        }
    }

    std::vector<MetricsReport> out;
    for (const auto& system : systems) {
        std::array<std::vector<std::uint8_t>, kDimensionCount> pred, gold;
        std::string error;
        for (const auto& id : system.providers)
            if (provider_errors.count(id)) error += (error.empty() ? "" : "; ") + id + ": " + provider_errors[id];
        for (std::size_t i = 0; i < test.size(); ++i) {
            std::vector<ScoreBlock> blocks;
            for (const auto& id : system.providers) {
                if (scores[id][i]) blocks.push_back(*scores[id][i]);
            }
            if (blocks.size() != system.providers.size() || blocks.empty()) continue;
            LabelVector labels;
            if (system.rule) {
                labels = fuse_measurement(blocks, *system.rule).labels();
            } else {
                labels = blocks.front().labels();
            }
            for (std::size_t d = 0; d < kDimensionCount; ++d) {
                pred[d].push_back(labels[d]);
                gold[d].push_back((*test[i].gold)[d]);
            }
        }
        std::array<ConfusionCounts, kDimensionCount> counts;
        for (std::size_t d = 0; d < kDimensionCount; ++d) counts[d] = score_dimension(pred[d], gold[d]);
        MetricsReport r = compute_metrics(counts);
        r.configuration = std::string(to_string(split.configuration));
        r.system = system.name;
        r.split = split.name;
        r.test_posts = test.size();
        r.evaluated_posts = pred[0].size();
        r.error = error;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace detail

// Scores every split's test posts with every system and aggregates the
// macro scores per (configuration, system).
inline ExperimentResult run_experiment(const Corpus& corpus, const std::vector<DatasetSplit>& splits,
                                       const std::vector<SystemSpec>& systems, const ProviderFactory& factory,
                                       const ExperimentOptions& options = {}) {
    if (systems.empty()) throw ValidationError("no systems to evaluate");
    for (const auto& s : systems) {
        if (s.providers.empty()) throw ValidationError("system '" + s.name + "' has no providers");
        if (!s.rule && s.providers.size() != 1)
            throw ValidationError("system '" + s.name + "' combines several providers but names no fusion rule");
    }
    for (const auto& split : splits) split.validate();

    std::vector<std::vector<MetricsReport>> per_split(splits.size());
    if (options.workers > 1 && splits.size() > 1) {
        std::atomic<std::size_t> next{0};
        const std::size_t n = std::min(options.workers, splits.size());
        std::vector<std::future<void>> workers;
        for (std::size_t w = 0; w < n; ++w) {
            workers.push_back(std::async(std::launch::async, [&] {
                for (std::size_t i = next++; i < splits.size(); i = next++)
                    per_split[i] = detail::run_split(corpus, splits[i], systems, factory);
            }));
        }
        for (auto& w : workers) w.get();
    } else {
        for (std::size_t i = 0; i < splits.size(); ++i) per_split[i] = detail::run_split(corpus, splits[i], systems, factory);
    }

    ExperimentResult result;
    for (const auto& s : systems) result.systems.push_back(s.name);
    for (auto& v : per_split)
        for (auto& r : v) result.reports.push_back(std::move(r));

    for (Configuration c : kAllConfigurations) {
        for (const auto& s : systems) {
            AggregateRow row{c, s.name, {}, 0, 1.0, s.reference_key, reference_scores(c, s.reference_key)};
            for (const auto& r : result.reports) {
                if (r.system != s.name || r.configuration != to_string(c)) continue;
                row.macro.precision += r.macro.precision;
                row.macro.recall += r.macro.recall;
                row.macro.f1 += r.macro.f1;
                row.macro.degenerate = row.macro.degenerate || r.macro.degenerate;
                row.min_coverage = std::min(row.min_coverage, r.coverage());
                ++row.splits;
            }
            if (row.splits == 0) continue;
            const auto n = static_cast<double>(row.splits);
            row.macro.precision /= n;
            row.macro.recall /= n;
            row.macro.f1 /= n;
            result.aggregates.push_back(row);
        }
    }
    return result;
}

}  // namespace forumfuse
