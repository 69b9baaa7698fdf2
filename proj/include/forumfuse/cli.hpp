#pragma once

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "forumfuse/core.hpp"
#include "forumfuse/engine.hpp"
#include "forumfuse/evaluation.hpp"
#include "forumfuse/fusion.hpp"
#include "forumfuse/ingest.hpp"
#include "forumfuse/json_io.hpp"
#include "forumfuse/providers/llm_client.hpp"
#include "forumfuse/providers/local_model.hpp"
#include "forumfuse/providers/mock.hpp"
#include "forumfuse/providers/replay.hpp"
#include "forumfuse/service.hpp"
#include "forumfuse/splits.hpp"

namespace forumfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Values shared by every subcommand. Flags override the --config file,
// which overrides the built-in defaults.
struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string schema_path;
    std::string profile = "default";
    std::string profiles_file;

    nlohmann::json config = nlohmann::json::object();

    void load() {
        if (!config_path.empty()) config = read_json(config_path);
        if (!config.is_object()) throw ValidationError("config file must hold a JSON object");
    }

    std::uint64_t effective_seed() const {
        if (seed) return *seed;
        if (config.contains("seed")) return config["seed"].get<std::uint64_t>();
        return 7;
    }

    DimensionSchema schema() const {
        DimensionSchema s;
        nlohmann::json j;
        if (!schema_path.empty()) j = read_json(schema_path);
        else if (config.contains("schema")) j = config["schema"];
        if (!j.is_null()) {
            if (!j.is_object()) throw SchemaError("schema must be a JSON object");
            for (const auto& [k, v] : j.items())
                if (k != "ordinal_threshold") throw SchemaError("unknown schema key '" + k + "'");
            if (j.contains("ordinal_threshold")) s.ordinal_threshold = j["ordinal_threshold"].get<double>();
        }
        s.validate();
        return s;
    }

    FormatProfile format_profile() const {
        ProfileRegistry reg;
        std::string file = profiles_file;
        if (file.empty() && config.contains("profiles_file")) file = config["profiles_file"].get<std::string>();
        if (!file.empty()) reg.load_file(file);
        std::string name = profile;
        if (name == "default" && config.contains("profile")) name = config["profile"].get<std::string>();
        return reg.get(name);
    }

    static nlohmann::json read_json(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("io_error", "cannot open " + path);
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(path + " is not valid JSON: " + e.what());
        }
    }
};

inline Corpus load_corpus(const Common& c, const std::string& path, std::ostream& err) {
    auto r = ingest_corpus(std::filesystem::path(path), c.format_profile(), c.schema());
    if (r.report.rejected_rows() > 0)
        err << "warning: " << r.report.rejected_rows() << " row(s) rejected while reading " << path << '\n';
    return std::move(r.corpus);
}

// ID=SPEC or SPEC. Specs:
//   local[:MODEL_JSON]  llm[:MODEL_NAME]  replay:FILE[:SOURCE_ID]
//   mock:oracle  mock:noisy:RATE  mock:fixed:P1  mock:failing
struct ProviderSpec {
    std::string id;
    std::string kind;
    std::vector<std::string> args;

    static ProviderSpec parse(const std::string& raw) {
        ProviderSpec s;
        std::string spec = raw;
        if (const auto eq = raw.find('='); eq != std::string::npos) {
            s.id = raw.substr(0, eq);
            spec = raw.substr(eq + 1);
        }
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.empty() || parts[0].empty()) throw ValidationError("empty provider spec '" + raw + "'");
        s.kind = parts[0];
        s.args.assign(parts.begin() + 1, parts.end());
        if (s.kind != "local" && s.kind != "llm" && s.kind != "replay" && s.kind != "mock")
            throw ValidationError("unknown provider kind '" + s.kind + "' in '" + raw + "'");
        if (s.id.empty()) s.id = s.kind == "mock" && !s.args.empty() ? "mock-" + s.args[0] : s.kind;
        return s;
    }
};

struct ProviderContext {
    const Common* common = nullptr;
    std::string cache_path;
};

inline LlmConfig llm_config(const Common& c) {
    LlmConfig cfg = LlmConfig::from_env();
    if (c.config.contains("llm")) cfg = LlmConfig::from_json(c.config["llm"], cfg);
    return cfg;
}

inline PromptTemplate prompt_template(const Common& c) {
    PromptTemplate t;
    if (c.config.contains("prompt")) {
        const auto& p = c.config["prompt"];
        if (p.contains("system")) t.system = p["system"].get<std::string>();
        if (p.contains("user")) t.user = p["user"].get<std::string>();
    }
    return t;
}

inline LocalTrainConfig local_config(const Common& c) {
    LocalTrainConfig cfg;
    cfg.seed = c.effective_seed();
    if (c.config.contains("local")) {
        const auto& j = c.config["local"];
        if (j.contains("chain_mode")) cfg.chain_mode = j["chain_mode"].get<bool>();
        if (j.contains("smoothing")) cfg.smoothing = j["smoothing"].get<double>();
        if (j.contains("min_token_freq")) cfg.min_token_freq = j["min_token_freq"].get<std::size_t>();
        if (j.contains("allow_degenerate")) cfg.allow_degenerate = j["allow_degenerate"].get<bool>();
    }
    return cfg;
}

// Builds a fixed provider. A bare "local" has no model and is only valid
// where per-split training applies.
inline ProviderPtr build_provider(const ProviderSpec& s, const ProviderContext& ctx) {
    const Common& c = *ctx.common;
    if (s.kind == "local") {
        if (s.args.empty()) throw ValidationError("provider '" + s.id + "' needs a model file (local:MODEL_JSON)");
        return std::make_shared<LocalProvider>(s.id, std::make_shared<const LocalModel>(load_model(s.args[0])));
    }
    if (s.kind == "llm") {
        LlmConfig cfg = llm_config(c);
        if (!s.args.empty()) cfg.model = s.args[0];
        auto cache = ctx.cache_path.empty() ? std::make_shared<ScoreCache>()
                                            : std::make_shared<ScoreCache>(std::filesystem::path(ctx.cache_path));
        return std::make_shared<LlmProvider>(s.id, cfg, cache, prompt_template(c));
    }
    if (s.kind == "replay") {
        if (s.args.empty()) throw ValidationError("provider '" + s.id + "' needs a score file (replay:FILE)");
        auto r = replay_scores(std::filesystem::path(s.args[0]));
        if (!r.report.rejected.empty())
            throw ValidationError("score file " + s.args[0] + " line " + std::to_string(r.report.rejected[0].line) +
                                  ": " + r.report.rejected[0].message);
        return std::make_shared<ReplayProvider>(s.id, r.scores, s.args.size() > 1 ? s.args[1] : s.id);
    }
    const std::string mode = s.args.empty() ? "" : s.args[0];
    if (mode == "oracle") return MockProvider::oracle(s.id);
    if (mode == "noisy") {
        if (s.args.size() < 2) throw ValidationError("mock:noisy needs a rate (mock:noisy:0.2)");
        return MockProvider::noisy(s.id, std::stod(s.args[1]), c.effective_seed() + fnv1a(s.id));
    }
    if (mode == "fixed") {
        if (s.args.size() < 2) throw ValidationError("mock:fixed needs a class-1 probability (mock:fixed:0.1)");
        const double p1 = std::stod(s.args[1]);
        if (!(p1 >= 0.0 && p1 <= 1.0)) throw ValidationError("mock:fixed probability must lie in [0, 1]");
        return MockProvider::fixed(s.id, ScoreVector::binary(p1));
    }
    if (mode == "failing") return MockProvider::failing(s.id);
    throw ValidationError("unknown mock mode '" + mode + "'");
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("io_error", "cannot write " + path);
    f << text;
    if (!f) throw Error("io_error", "write to " + path + " failed");
}

namespace detail {

inline httplib::Server* g_server = nullptr;

inline void stop_server(int) {
    if (g_server) g_server->stop();
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, sep);)
        if (!p.empty()) out.push_back(p);
    return out;
}

inline std::vector<std::string> rule_names() {
    std::vector<std::string> names;
    for (auto k : kAllRuleKinds) names.emplace_back(to_string(k));
    return names;
}

}  // namespace detail

inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"forumfuse: score, fuse and triage course forum posts", "forumfuse"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    Common common;
    app.add_option("--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "Random seed (splits, training, mock noise)");
    app.add_option("--schema", common.schema_path, "JSON dimension schema, e.g. {\"ordinal_threshold\": 4}")
        ->check(CLI::ExistingFile);
    app.add_option("--profile", common.profile, "Corpus format profile (default, stanford or a loaded one)");
    app.add_option("--profiles-file", common.profiles_file, "JSON file with extra format profiles")
        ->check(CLI::ExistingFile);

    const auto rules = detail::rule_names();

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Read a corpus and print the ingest report");
    std::string ingest_input, ingest_report, ingest_output;
    ingest->add_option("--input,-i", ingest_input, "Corpus file")->required()->check(CLI::ExistingFile);
    ingest->add_option("--report", ingest_report, "Write the report here instead of stdout");
    ingest->add_option("--output", ingest_output, "Also write the accepted posts in the default layout");

    // train
    auto* train = app.add_subcommand("train", "Train the local model");
    std::string train_input, train_model;
    bool train_chain = false, train_degenerate = false;
    std::optional<double> train_smoothing;
    std::optional<std::size_t> train_min_freq;
    train->add_option("--input,-i", train_input, "Labeled corpus file")->required()->check(CLI::ExistingFile);
    train->add_option("--model,-m", train_model, "Output model file")->required();
    train->add_flag("--chain", train_chain, "Chain mode");
    train->add_flag("--allow-degenerate", train_degenerate, "Allow single-class dimensions");
    train->add_option("--smoothing", train_smoothing, "Add-k smoothing constant");
    train->add_option("--min-freq", train_min_freq, "Minimum token frequency");

    // score
    auto* score = app.add_subcommand("score", "Score a corpus with one provider and write a score file");
    std::string score_input, score_provider, score_output, score_cache;
    std::size_t score_workers = 1;
    score->add_option("--input,-i", score_input, "Corpus file")->required()->check(CLI::ExistingFile);
    score->add_option("--provider,-p", score_provider, "Provider spec, e.g. local:model.json or llm")->required();
    score->add_option("--output,-o", score_output, "Score file (default stdout)");
    score->add_option("--cache", score_cache, "LLM response cache file");
    score->add_option("--workers", score_workers, "Parallel LLM requests")->check(CLI::PositiveNumber);

    // fuse
    auto* fuse = app.add_subcommand("fuse", "Fuse score files into verdicts");
    std::vector<std::string> fuse_inputs;
    std::string fuse_rule = "product", fuse_output, fuse_providers;
    double fuse_epsilon = 1e-6;
    bool fuse_require_all = false;
    fuse->add_option("--scores,-s", fuse_inputs, "Score file (repeatable)")->required()->check(CLI::ExistingFile);
    fuse->add_option("--rule,-r", fuse_rule, "Fusion rule")->check(CLI::IsMember(rules));
    fuse->add_option("--epsilon", fuse_epsilon, "Probability floor for product rules");
    fuse->add_option("--providers", fuse_providers, "Comma-separated provider ids to use (default all)");
    fuse->add_flag("--require-all", fuse_require_all, "Skip posts missing any selected provider");
    fuse->add_option("--output,-o", fuse_output, "Verdict file (default stdout)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Run the experiment grid and print the comparison table");
    std::string eval_input, eval_json, eval_csv, eval_rule = "product", eval_course, eval_test_course;
    std::vector<std::string> eval_configs, eval_providers, eval_systems;
    double eval_fraction = 0.8;
    std::size_t eval_workers = 1;
    evaluate->add_option("--input,-i", eval_input, "Labeled corpus file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--configuration,-c", eval_configs, "intracourse, intradomain, crossdomain (repeatable)")
        ->check(CLI::IsMember({"intracourse", "intradomain", "crossdomain"}, CLI::ignore_case));
    evaluate->add_option("--provider,-p", eval_providers, "ID=SPEC (repeatable); bare 'local' trains per split")
        ->required();
    evaluate->add_option("--system", eval_systems, "NAME=ID[+ID...][:RULE] (repeatable)");
    evaluate->add_option("--rule,-r", eval_rule, "Rule for the default fusion system")->check(CLI::IsMember(rules));
    evaluate->add_option("--train-fraction", eval_fraction, "Train share within a course");
    evaluate->add_option("--course", eval_course, "Restrict intracourse to one course");
    evaluate->add_option("--test-course", eval_test_course, "Held-out course for intradomain");
    evaluate->add_option("--workers", eval_workers, "Splits evaluated in parallel")->check(CLI::PositiveNumber);
    evaluate->add_option("--json", eval_json, "Write the full JSON report here");
    evaluate->add_option("--csv", eval_csv, "Write per-split metrics as CSV here");

    // serve
    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    std::string serve_kb, serve_data_dir, serve_host = "127.0.0.1", serve_token, serve_cors, serve_cache;
    std::string serve_rule, serve_policy;
    int serve_port = 8080;
    std::vector<std::string> serve_providers;
    std::optional<double> serve_threshold;
    serve->add_option("--kb", serve_kb, "Knowledge base JSON file")->check(CLI::ExistingFile);
    serve->add_option("--data-dir", serve_data_dir, "Directory for the event and feedback logs");
    serve->add_option("--host", serve_host, "Bind address");
    serve->add_option("--port", serve_port, "Port")->check(CLI::Range(0, 65535));
    serve->add_option("--provider,-p", serve_providers, "ID=SPEC (repeatable)")->required();
    serve->add_option("--threshold", serve_threshold, "Confidence threshold Th")->check(CLI::Range(0.0, 1.0));
    serve->add_option("--rule,-r", serve_rule, "Fusion rule")->check(CLI::IsMember(rules));
    serve->add_option("--policy", serve_policy, "Confidence policy")
        ->check(CLI::IsMember({"min-dim-max-prob", "mean-margin", "intervened-dim-only"}));
    serve->add_option("--token", serve_token, "Require this bearer token");
    serve->add_option("--cors-origin", serve_cors, "Access-Control-Allow-Origin value");
    serve->add_option("--cache", serve_cache, "LLM response cache file");

    // replay
    auto* replay = app.add_subcommand("replay", "Rebuild engine state from an event log and print it");
    std::string replay_events_path, replay_output;
    replay->add_option("--events,-e", replay_events_path, "Event log")->required()->check(CLI::ExistingFile);
    replay->add_option("--output,-o", replay_output, "Write the state snapshot here instead of stdout");

    // report
    auto* report = app.add_subcommand("report", "Print the curation report for an event log");
    std::string report_events_path, report_output;
    std::optional<double> report_goal;
    report->add_option("--events,-e", report_events_path, "Event log")->required()->check(CLI::ExistingFile);
    report->add_option("--goal", report_goal, "Referral-rate goal");
    report->add_option("--output,-o", report_output, "Write the report here instead of stdout");

    std::vector<std::string> reversed(argv.rbegin(), argv.rend() - (argv.empty() ? 0 : 1));
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        common.load();

        if (*ingest) {
            auto r = ingest_corpus(std::filesystem::path(ingest_input), common.format_profile(), common.schema());
            write_output(ingest_report, r.report.to_json().dump(2) + "\n", out);
            if (!ingest_output.empty()) {
                std::ostringstream buf;
                write_corpus(buf, r.corpus);
                write_output(ingest_output, buf.str(), out);
            }
            return kExitOk;
        }

        if (*train) {
            if (std::filesystem::file_size(train_input) == 0)
                throw TrainingError("training corpus is empty: " + train_input + " has no header and no rows");
            const Corpus corpus = load_corpus(common, train_input, err);
            LocalTrainConfig cfg = local_config(common);
            if (train_chain) cfg.chain_mode = true;
            if (train_degenerate) cfg.allow_degenerate = true;
            if (train_smoothing) cfg.smoothing = *train_smoothing;
            if (train_min_freq) cfg.min_token_freq = *train_min_freq;
            const LocalModel m = train_local(corpus, cfg);
            save_model(m, train_model);
            out << nlohmann::json{{"posts", corpus.size()},
                                  {"vocabulary", m.vocabulary.size()},
                                  {"chain_mode", m.chain_mode},
                                  {"model", train_model}}
                       .dump()
                << '\n';
            return kExitOk;
        }

        if (*score) {
            const Corpus corpus = load_corpus(common, score_input, err);
            const auto spec = ProviderSpec::parse(score_provider);
            ProviderContext ctx{&common, score_cache};
            const ProviderPtr provider = build_provider(spec, ctx);
            std::ostringstream buf;
            std::size_t failed = 0;
            auto report_failure = [&](const Post& p, const std::string& msg) {
                ++failed;
                err << "post " << p.post_id << ": " << msg << '\n';
            };
            if (const auto* llm = dynamic_cast<const LlmProvider*>(provider.get()); llm && score_workers > 1) {
                const auto results = llm->score_batch(corpus);
                for (std::size_t i = 0; i < corpus.size(); ++i) {
                    if (const auto* b = std::get_if<ScoreBlock>(&results[i])) write_scores(buf, corpus[i].post_id, *b);
                    else report_failure(corpus[i], std::get<std::string>(results[i]));
                }
            } else {
                for (const auto& p : corpus) {
                    try {
                        write_scores(buf, p.post_id, provider->score(p));
                    } catch (const Error& e) {
                        report_failure(p, e.what());
                    }
                }
            }
            write_output(score_output, buf.str(), out);
            if (failed) err << failed << " of " << corpus.size() << " post(s) could not be scored\n";
            return failed == corpus.size() && !corpus.empty() ? kExitFailure : kExitOk;
        }

        if (*fuse) {
            ScoreTable table;
            for (const auto& path : fuse_inputs) {
                auto r = replay_scores(std::filesystem::path(path));
                for (const auto& issue : r.report.rejected)
                    err << "warning: " << path << " line " << issue.line << ": " << issue.message << '\n';
                for (auto& [post, by] : r.scores)
                    for (auto& [pid, block] : by) table[post][pid] = std::move(block);
            }
            const auto wanted = detail::split_list(fuse_providers, ',');
            const FusionRule rule{parse_rule_kind(fuse_rule), fuse_epsilon};
            rule.validate();
            std::ostringstream buf;
            std::size_t skipped = 0;
            for (const auto& [post, by] : table) {
                std::vector<ScoreBlock> blocks;
                std::vector<std::string> ids;
                if (wanted.empty()) {
                    for (const auto& [pid, b] : by) {
                        blocks.push_back(b);
                        ids.push_back(pid);
                    }
                } else {
                    for (const auto& pid : wanted) {
                        if (auto it = by.find(pid); it != by.end()) {
                            blocks.push_back(it->second);
                            ids.push_back(pid);
                        }
                    }
                    if (fuse_require_all && blocks.size() != wanted.size()) {
                        ++skipped;
                        continue;
                    }
                }
                if (blocks.empty()) {
                    ++skipped;
                    continue;
                }
                const auto v = fuse_measurement(blocks, rule);
                buf << nlohmann::json{{"post_id", post},
                                      {"providers", ids},
                                      {"rule", std::string(to_string(rule.kind))},
                                      {"labels", label_vector_to_json(v.labels())},
                                      {"verdict", verdict_to_json(v)}}
                           .dump()
                    << '\n';
            }
            write_output(fuse_output, buf.str(), out);
            if (skipped) err << skipped << " post(s) skipped for missing scores\n";
            return kExitOk;
        }

        if (*evaluate) {
            const Corpus corpus = load_corpus(common, eval_input, err);
            ProviderRegistry fixed;
            std::vector<std::string> provider_ids;
            std::optional<std::string> trained_local;
            ProviderContext ctx{&common, {}};
            for (const auto& raw : eval_providers) {
                const auto spec = ProviderSpec::parse(raw);
                provider_ids.push_back(spec.id);
                if (spec.kind == "local" && spec.args.empty()) {
                    if (trained_local) throw ValidationError("only one per-split local provider is supported");
                    trained_local = spec.id;
                } else {
                    fixed.add(build_provider(spec, ctx));
                }
            }
            ProviderFactory factory = static_providers(fixed);
            if (trained_local) factory = with_local_training(factory, *trained_local, local_config(common));

            auto reference_key = [](const std::string& name) -> std::string {
                return name == "local" || name == "llm" || name == "fusion" ? name : "";
            };
            std::vector<SystemSpec> systems;
            for (const auto& raw : eval_systems) {
                const auto eq = raw.find('=');
                if (eq == std::string::npos || eq == 0) throw ValidationError("system must be NAME=ID[+ID...][:RULE]");
                SystemSpec s;
                s.name = raw.substr(0, eq);
                std::string rest = raw.substr(eq + 1);
                if (const auto colon = rest.find(':'); colon != std::string::npos) {
                    s.rule = FusionRule{parse_rule_kind(rest.substr(colon + 1))};
                    rest = rest.substr(0, colon);
                }
                s.providers = detail::split_list(rest, '+');
                for (const auto& id : s.providers)
                    if (std::find(provider_ids.begin(), provider_ids.end(), id) == provider_ids.end())
                        throw ValidationError("system '" + s.name + "' uses undeclared provider '" + id + "'");
                if (!s.rule && s.providers.size() > 1) s.rule = FusionRule{parse_rule_kind(eval_rule)};
                s.reference_key = reference_key(s.name);
                systems.push_back(std::move(s));
            }
            if (systems.empty()) {
                for (const auto& id : provider_ids) systems.push_back({id, {id}, std::nullopt, reference_key(id)});
                if (provider_ids.size() > 1)
                    systems.push_back({"fusion", provider_ids, FusionRule{parse_rule_kind(eval_rule)}, "fusion"});
            }

            std::vector<Configuration> configs;
            for (const auto& c : eval_configs) configs.push_back(parse_configuration(c));
            if (configs.empty()) configs.assign(kAllConfigurations.begin(), kAllConfigurations.end());
            SplitParams params;
            params.train_fraction = eval_fraction;
            params.seed = common.effective_seed();
            if (!eval_course.empty()) params.course = eval_course;
            if (!eval_test_course.empty()) params.test_course = eval_test_course;
            std::vector<DatasetSplit> splits;
            for (Configuration c : configs) {
                try {
                    auto s = make_splits(corpus, c, params);
                    splits.insert(splits.end(), s.begin(), s.end());
                } catch (const InfeasibleError& e) {
                    err << "warning: skipping " << to_string(c) << ": " << e.what() << '\n';
                }
            }
            if (splits.empty()) throw InfeasibleError("no configuration can be evaluated on this corpus");
            const auto result = run_experiment(corpus, splits, systems, factory, {eval_workers});
            out << result.render_table();
            if (!eval_json.empty()) write_output(eval_json, result.to_json().dump(2) + "\n", out);
            if (!eval_csv.empty()) write_output(eval_csv, result.to_csv(), out);
            return kExitOk;
        }

        if (*serve) {
            EngineConfig cfg;
            if (common.config.contains("engine")) cfg = EngineConfig::from_json(common.config["engine"]);
            if (serve_threshold) cfg.threshold = *serve_threshold;
            if (!serve_rule.empty()) cfg.rule.kind = parse_rule_kind(serve_rule);
            if (!serve_policy.empty()) cfg.confidence_policy = parse_confidence_policy(serve_policy);
            ProviderRegistry reg;
            ProviderContext ctx{&common, serve_cache};
            for (const auto& raw : serve_providers) reg.add(build_provider(ProviderSpec::parse(raw), ctx));
            const KnowledgeBase kb = serve_kb.empty() ? KnowledgeBase{} : KnowledgeBase::load(serve_kb);
            if (serve_data_dir.empty()) {
                const char* env = std::getenv("FORUMFUSE_DATA_DIR");
                serve_data_dir = env && *env ? env : "forumfuse-data";
            }
            std::filesystem::create_directories(serve_data_dir);
            EngineOptions eo;
            eo.event_log = std::filesystem::path(serve_data_dir) / "events.jsonl";
            eo.feedback_log = std::filesystem::path(serve_data_dir) / "feedback.jsonl";
            Engine engine(cfg, std::move(reg), kb, eo);
            if (engine.recovered_torn_tail()) err << "warning: dropped an incomplete trailing event\n";
            ServiceOptions so;
            if (serve_token.empty()) {
                if (const char* env = std::getenv("FORUMFUSE_API_TOKEN"); env && *env) serve_token = env;
            }
            if (!serve_token.empty()) so.bearer_token = serve_token;
            so.cors_origin = serve_cors;
            Service service(engine, so);
            httplib::Server server;
            service.install(server);
            detail::g_server = &server;
            std::signal(SIGINT, detail::stop_server);
            std::signal(SIGTERM, detail::stop_server);
            if (!server.bind_to_port(serve_host, serve_port))
                throw Error("io_error", "cannot listen on " + serve_host + ":" + std::to_string(serve_port));
            err << "listening on " << serve_host << ':' << serve_port << '\n';
            server.listen_after_bind();
            detail::g_server = nullptr;
            return kExitOk;
        }

        if (*replay || *report) {
            const std::string& path = *replay ? replay_events_path : report_events_path;
            EventLog log(path);
            auto loaded = log.load_and_compact();
            if (loaded.dropped_torn_tail) err << "warning: dropped an incomplete trailing event\n";
            const EngineState state = replay_events(loaded.events);
            if (*replay) {
                write_output(replay_output, state.snapshot().dump(2) + "\n", out);
            } else {
                double goal = EngineConfig{}.referral_goal;
                if (common.config.contains("engine")) goal = EngineConfig::from_json(common.config["engine"]).referral_goal;
                if (report_goal) goal = *report_goal;
                if (!(goal > 0.0 && goal < 1.0)) throw ValidationError("goal must lie in (0, 1)");
                auto j = state.report(goal).to_json();
                j["schema_version"] = kSchemaVersion;
                write_output(report_output, j.dump(2) + "\n", out);
            }
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error [" << e.code() << "]: " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace forumfuse::cli
