#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "forumfuse/core.hpp"

namespace forumfuse {

// Column mapping for one delimiter-separated export layout. Keys of
// `columns` are the canonical field names; values are header names.
struct FormatProfile {
    std::string name;
    char delimiter = ',';
    std::map<std::string, std::string> columns;
};

inline constexpr std::array<std::string_view, 4> kRequiredColumns = {"post_id", "course", "area", "text"};

inline FormatProfile default_profile() {
    FormatProfile p{"default", ',', {}};
    for (auto c : kRequiredColumns) p.columns[std::string(c)] = std::string(c);
    for (auto d : kDimensionNames) p.columns[std::string(d)] = std::string(d);
    return p;
}

// Header names of the public Stanford MOOCPosts export.
inline FormatProfile stanford_profile() {
    return FormatProfile{"stanford",
                         ',',
                         {{"post_id", "forum_post_id"},
                          {"course", "course_display_name"},
                          {"area", "CourseType"},
                          {"text", "Text"},
                          {"opinion", "Opinion(1/0)"},
                          {"question", "Question(1/0)"},
                          {"answer", "Answer(1/0)"},
                          {"sentiment", "Sentiment(1-7)"},
                          {"confusion", "Confusion(1-7)"},
                          {"urgency", "Urgency(1-7)"}}};
}

inline FormatProfile profile_from_json(const nlohmann::json& j) {
    FormatProfile p;
    p.name = j.at("name").get<std::string>();
    const std::string delim = j.value("delimiter", std::string(","));
    if (delim == "\\t" || delim == "tab") {
        p.delimiter = '\t';
    } else if (delim.size() == 1) {
        p.delimiter = delim[0];
    } else {
        throw SchemaError("profile delimiter must be a single character");
    }
    for (auto& [k, v] : j.at("columns").items()) p.columns[k] = v.get<std::string>();
    return p;
}

class ProfileRegistry {
public:
    ProfileRegistry() {
        add(default_profile());
        add(stanford_profile());
    }

    void add(FormatProfile profile) { profiles_[profile.name] = std::move(profile); }

    // Registers every profile in a JSON file holding one profile object or
    // an array of them.
    void load_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("io_error", "cannot open profile file " + path.string());
        const auto j = nlohmann::json::parse(in);
        if (j.is_array()) {
            for (const auto& item : j) add(profile_from_json(item));
        } else {
            add(profile_from_json(j));
        }
    }

    const FormatProfile& get(const std::string& name) const {
        auto it = profiles_.find(name);
        if (it == profiles_.end()) throw SchemaError("unknown format profile '" + name + "'");
        return it->second;
    }

private:
    std::map<std::string, FormatProfile> profiles_;
};

namespace csv {

struct Record {
    std::size_t line = 0;  // 1-based line where the record starts
    std::vector<std::string> fields;
};

// RFC 4180 reader: quoted fields may contain the delimiter, doubled quotes
// and newlines. CRLF record terminators are accepted.
class Reader {
public:
    Reader(std::istream& in, char delimiter) : in_(in), delimiter_(delimiter) {}

    bool next(Record& rec) {
        rec.fields.clear();
        rec.line = line_ + 1;
        if (in_.peek() == std::char_traits<char>::eof()) return false;
        std::string field;
        bool in_quotes = false;
        bool was_quoted = false;
        int ch;
        while ((ch = in_.get()) != std::char_traits<char>::eof()) {
            const char c = static_cast<char>(ch);
            if (in_quotes) {
                if (c == '"') {
                    if (in_.peek() == '"') {
                        field.push_back('"');
                        in_.get();
                    } else {
                        in_quotes = false;
                    }
                } else {
                    if (c == '\n') ++line_;
                    field.push_back(c);
                }
                continue;
            }
            if (c == '"' && field.empty() && !was_quoted) {
                in_quotes = true;
                was_quoted = true;
            } else if (c == delimiter_) {
                rec.fields.push_back(std::move(field));
                field.clear();
                was_quoted = false;
            } else if (c == '\r' && in_.peek() == '\n') {
                continue;
            } else if (c == '\n') {
                ++line_;
                rec.fields.push_back(std::move(field));
                return true;
            } else {
                field.push_back(c);
            }
        }
        ++line_;
        rec.fields.push_back(std::move(field));
        return true;
    }

private:
    std::istream& in_;
    char delimiter_;
    std::size_t line_ = 0;
};

inline std::string quote(const std::string& field, char delimiter) {
    if (field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) == std::string::npos &&
        (field.empty() || (field.front() != ' ' && field.back() != ' ')))
        return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace csv

struct YesNo {
    std::size_t no = 0;
    std::size_t yes = 0;
    friend bool operator==(const YesNo&, const YesNo&) = default;
};

using DimensionCounts = std::array<YesNo, kDimensionCount>;

struct Rejection {
    std::size_t line = 0;
    std::string reason;
    std::string detail;
};

// Counts keyed by group: "all", "area:<Area>" and "course:<course_id>".
struct IngestReport {
    std::size_t rows_read = 0;
    std::size_t total_posts = 0;
    std::size_t unlabeled_posts = 0;
    std::map<std::string, DimensionCounts> groups;
    std::map<std::string, std::size_t> rejection_reasons;
    std::vector<Rejection> rejections;

    std::size_t rejected_rows() const { return rejections.size(); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["rows_read"] = rows_read;
        j["total_posts"] = total_posts;
        j["unlabeled_posts"] = unlabeled_posts;
        j["rejected_rows"] = rejected_rows();
        j["rejection_reasons"] = rejection_reasons;
        auto& rej = j["rejections"] = nlohmann::json::array();
        for (const auto& r : rejections) rej.push_back({{"line", r.line}, {"reason", r.reason}, {"detail", r.detail}});
        auto& groups_j = j["groups"] = nlohmann::json::object();
        for (const auto& [group, counts] : groups) {
            auto& g = groups_j[group];
            for (std::size_t d = 0; d < kDimensionCount; ++d)
                g[std::string(kDimensionNames[d])] = {{"no", counts[d].no}, {"yes", counts[d].yes}};
        }
        return j;
    }
};

struct IngestResult {
    Corpus corpus;
    IngestReport report;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::optional<double> parse_number(std::string_view raw) {
    const std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline void tally(IngestReport& report, const Post& post) {
    if (!post.gold) {
        ++report.unlabeled_posts;
        return;
    }
    const std::array<std::string, 3> keys = {"all", "area:" + std::string(to_string(post.area)),
                                             "course:" + post.course_id};
    for (const auto& key : keys) {
        auto& counts = report.groups[key];
        for (std::size_t d = 0; d < kDimensionCount; ++d) {
            if ((*post.gold)[d]) {
                ++counts[d].yes;
            } else {
                ++counts[d].no;
            }
        }
    }
}

}  // namespace detail

// Reads every valid post. Bad rows are recorded in the report and skipped;
// only a header that lacks required columns aborts.
inline IngestResult ingest_corpus(std::istream& in, const FormatProfile& profile,
                                  const DimensionSchema& schema = DimensionSchema::standard()) {
    schema.validate();
    csv::Reader reader(in, profile.delimiter);
    csv::Record header;
    if (!reader.next(header)) throw SchemaError("corpus has no header row");
    if (!header.fields.empty() && header.fields[0].rfind("\xEF\xBB\xBF", 0) == 0) header.fields[0].erase(0, 3);

    std::map<std::string, std::size_t> header_index;
    for (std::size_t i = 0; i < header.fields.size(); ++i) header_index[detail::trim(header.fields[i])] = i;

    auto column = [&](std::string_view canonical) -> std::optional<std::size_t> {
        auto mapped = profile.columns.find(std::string(canonical));
        const std::string name = mapped == profile.columns.end() ? std::string(canonical) : mapped->second;
        auto it = header_index.find(name);
        if (it == header_index.end()) return std::nullopt;
        return it->second;
    };

    std::array<std::size_t, 4> required{};
    for (std::size_t i = 0; i < kRequiredColumns.size(); ++i) {
        auto idx = column(kRequiredColumns[i]);
        if (!idx) throw SchemaError("missing required column '" + std::string(kRequiredColumns[i]) + "'");
        required[i] = *idx;
    }
    std::array<std::optional<std::size_t>, kDimensionCount> label_cols;
    std::size_t present = 0;
    for (std::size_t d = 0; d < kDimensionCount; ++d) {
        label_cols[d] = column(kDimensionNames[d]);
        if (label_cols[d]) ++present;
    }
    if (present != 0 && present != kDimensionCount)
        throw SchemaError("label columns must be all present or all absent");
    const bool labeled = present == kDimensionCount;

    IngestResult result;
    auto& report = result.report;
    std::unordered_set<std::string> seen;
    auto reject = [&](std::size_t line, std::string reason, std::string detail) {
        ++report.rejection_reasons[reason];
        report.rejections.push_back({line, std::move(reason), std::move(detail)});
    };

    csv::Record rec;
    while (reader.next(rec)) {
        if (rec.fields.size() == 1 && detail::trim(rec.fields[0]).empty()) continue;
        ++report.rows_read;
        if (rec.fields.size() != header.fields.size()) {
            reject(rec.line, "field_count_mismatch",
                   "expected " + std::to_string(header.fields.size()) + " fields, got " + std::to_string(rec.fields.size()));
            continue;
        }
        Post post;
        post.post_id = detail::trim(rec.fields[required[0]]);
        post.course_id = detail::trim(rec.fields[required[1]]);
        post.text = rec.fields[required[3]];
        if (post.post_id.empty()) {
            reject(rec.line, "missing_post_id", "");
            continue;
        }
        if (post.course_id.empty()) {
            reject(rec.line, "missing_course", post.post_id);
            continue;
        }
        auto area = parse_area(rec.fields[required[2]]);
        if (!area) {
            reject(rec.line, "unknown_area", rec.fields[required[2]]);
            continue;
        }
        post.area = *area;
        if (is_blank(post.text)) {
            reject(rec.line, "empty_text", post.post_id);
            continue;
        }
        if (is_digits_only(post.text)) {
            reject(rec.line, "numeric_only_text", post.post_id);
            continue;
        }
        if (labeled) {
            std::array<double, kDimensionCount> values{};
            bool ok = true;
            for (std::size_t d = 0; d < kDimensionCount && ok; ++d) {
                auto v = detail::parse_number(rec.fields[*label_cols[d]]);
                if (!v) {
                    reject(rec.line, "invalid_label", std::string(kDimensionNames[d]) + ": '" + rec.fields[*label_cols[d]] + "'");
                    ok = false;
                } else {
                    values[d] = *v;
                }
            }
            if (!ok) continue;
            RawAnnotation raw;
            for (std::size_t d = 0; d < 3 && ok; ++d) {
                if (values[d] != 0.0 && values[d] != 1.0) {
                    reject(rec.line, "invalid_label", std::string(kDimensionNames[d]) + " must be 0 or 1");
                    ok = false;
                }
            }
            if (!ok) continue;
            raw.opinion = static_cast<int>(values[0]);
            raw.question = static_cast<int>(values[1]);
            raw.answer = static_cast<int>(values[2]);
            raw.sentiment = values[3];
            raw.confusion = values[4];
            raw.urgency = values[5];
            try {
                post.gold = binarize(raw, schema);
            } catch (const ValidationError& e) {
                reject(rec.line, "invalid_label", e.what());
                continue;
            }
            post.raw = raw;
        }
        if (!seen.insert(post.post_id).second) {
            reject(rec.line, "duplicate_post_id", post.post_id);
            continue;
        }
        detail::tally(report, post);
        result.corpus.push_back(std::move(post));
    }
    report.total_posts = result.corpus.size();
    return result;
}

inline IngestResult ingest_corpus(const std::filesystem::path& path, const FormatProfile& profile,
                                  const DimensionSchema& schema = DimensionSchema::standard()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot open corpus file " + path.string());
    return ingest_corpus(in, profile, schema);
}

// Writes the corpus in the given profile's layout. Posts without raw
// annotations are written with empty label cells, so a mixed corpus
// cannot be written.
inline void write_corpus(std::ostream& out, const Corpus& corpus, const FormatProfile& profile = default_profile()) {
    bool any_labels = false;
    for (const auto& p : corpus) any_labels = any_labels || p.raw.has_value();
    auto header_of = [&](std::string_view canonical) {
        auto it = profile.columns.find(std::string(canonical));
        return it == profile.columns.end() ? std::string(canonical) : it->second;
    };
    const char d = profile.delimiter;
    std::vector<std::string> header;
    for (auto c : kRequiredColumns) header.push_back(header_of(c));
    if (any_labels) {
        for (auto n : kDimensionNames) header.push_back(header_of(n));
    }
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? std::string(1, d) : "") << csv::quote(header[i], d);
    out << '\n';
    for (const auto& p : corpus) {
        if (any_labels && !p.raw) throw ValidationError("cannot write unlabeled post '" + p.post_id + "' into a labeled corpus");
        out << csv::quote(p.post_id, d) << d << csv::quote(p.course_id, d) << d << to_string(p.area) << d
            << csv::quote(p.text, d);
        if (any_labels) {
            const auto& r = *p.raw;
            out << d << r.opinion << d << r.question << d << r.answer << d << detail::format_number(r.sentiment) << d
                << detail::format_number(r.confusion) << d << detail::format_number(r.urgency);
        }
        out << '\n';
    }
}

}  // namespace forumfuse
