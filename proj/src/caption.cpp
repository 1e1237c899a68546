#include "tokgov/caption.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include <httplib.h>
#include <json.hpp>

namespace tokgov {

using nlohmann::json;

bool edit_distance_is_at_most_one(const std::string& a, const std::string& b) {
    const size_t la = a.size(), lb = b.size();
    if (la == lb) {
        int diff = 0;
        bool swap_ok = false;
        for (size_t i = 0; i < la; ++i)
            if (a[i] != b[i]) ++diff;
        if (diff <= 1) return true;
        // adjacent transposition counts as one edit for typo repair
        if (diff == 2) {
            for (size_t i = 0; i + 1 < la; ++i)
                if (a[i] != b[i]) {
                    swap_ok = a[i] == b[i + 1] && a[i + 1] == b[i] && a.compare(i + 2, la, b, i + 2, la) == 0;
                    break;
                }
        }
        return swap_ok;
    }
    if (la + 1 == lb) return edit_distance_is_at_most_one(b, a);
    if (la != lb + 1) return false;
    // a is longer by one: check single deletion
    size_t i = 0;
    while (i < lb && a[i] == b[i]) ++i;
    return a.compare(i + 1, la, b, i, lb) == 0;
}

namespace {

// trailing punctuation is kept aside so "onn." still matches "on"
void split_punct(const std::string& tok, std::string& core, std::string& tail) {
    size_t end = tok.size();
    while (end > 0 && std::ispunct(static_cast<unsigned char>(tok[end - 1]))) --end;
    core = tok.substr(0, end);
    tail = tok.substr(end);
}

}  // namespace

std::string denoise(const std::string& caption, const std::vector<std::string>& dictionary) {
    std::set<std::string> dict(dictionary.begin(), dictionary.end());
    std::vector<std::string> tokens = split_ws(caption);

    // repair out-of-dictionary tokens at edit distance one from a dict word
    for (auto& tok : tokens) {
        std::string core, tail;
        split_punct(tok, core, tail);
        if (core.empty()) continue;
        std::string low = to_lower(core);
        if (dict.count(low)) continue;
        for (const auto& w : dict) {
            if (edit_distance_is_at_most_one(low, w)) {
                tok = w + tail;
                break;
            }
        }
    }

    // collapse repeated adjacent words, case-insensitive, keep the first
    std::vector<std::string> out;
    for (const auto& tok : tokens) {
        if (!out.empty() && to_lower(tok) == to_lower(out.back())) continue;
        out.push_back(tok);
    }
    return join(out, " ");
}

std::string build_visual_prompt(const VisualEvidence& evidence, const PromptConfig& cfg) {
    if (evidence.items.empty()) return "";
    std::vector<std::string> names;
    for (const auto& e : evidence.items) names.push_back(e.name);
    std::string joined = join(names, ", ");
    std::string out = cfg.visual_template;
    size_t pos = out.find("{classes}");
    if (pos == std::string::npos) throw ConfigError("visual prompt template lacks a {classes} slot");
    out.replace(pos, 9, joined);
    return out;
}

PromptBundle make_prompts(const VisualEvidence& evidence, const PromptConfig& cfg) {
    PromptBundle b;
    b.correction = cfg.correction;
    b.visual = build_visual_prompt(evidence, cfg);
    b.evidence_used = evidence;
    return b;
}

RewriterMode parse_rewriter_mode(const std::string& name) {
    if (name == "none") return RewriterMode::none;
    if (name == "text_only") return RewriterMode::text_only;
    if (name == "concat") return RewriterMode::concat;
    if (name == "rewrite") return RewriterMode::rewrite;
    throw ConfigError("unknown rewriter mode: " + name);
}

const char* to_string(RewriterMode m) {
    switch (m) {
        case RewriterMode::none: return "none";
        case RewriterMode::text_only: return "text_only";
        case RewriterMode::concat: return "concat";
        case RewriterMode::rewrite: return "rewrite";
    }
    return "none";
}

namespace {

std::vector<std::string> parse_prompt_classes(const std::string& visual_prompt) {
    // canonical template: "... contain: a, b, c. Integrate ..."
    size_t colon = visual_prompt.find(": ");
    if (colon == std::string::npos) return {};
    size_t stop = visual_prompt.find('.', colon);
    std::string list = visual_prompt.substr(colon + 2, stop == std::string::npos ? std::string::npos : stop - colon - 2);
    std::vector<std::string> names;
    size_t start = 0;
    while (start <= list.size()) {
        size_t comma = list.find(", ", start);
        std::string piece = comma == std::string::npos ? list.substr(start) : list.substr(start, comma - start);
        piece = trim(piece);
        if (!piece.empty()) names.push_back(piece);
        if (comma == std::string::npos) break;
        start = comma + 2;
    }
    return names;
}

bool contains_ci(const std::string& haystack, const std::string& needle) {
    std::string h = to_lower(haystack), n = to_lower(needle);
    return h.find(n) != std::string::npos;
}

const std::vector<std::string>& generic_object_words() {
    static const std::vector<std::string> w = {"somethings", "something", "things", "thing",
                                               "objects",    "object",    "items",  "item", "stuff"};
    return w;
}

std::string concat_names(const std::string& base, const std::vector<std::string>& names) {
    if (names.empty()) return base;
    return base + ". objects: " + join(names, ", ");
}

}  // namespace

std::string TemplateRewriter::rewrite(const std::string& /*correction_prompt*/, const std::string& visual_prompt,
                                      const std::string& caption) {
    std::vector<std::string> names = parse_prompt_classes(visual_prompt);
    if (names.empty()) return caption;

    std::vector<std::string> missing;
    for (const auto& n : names)
        if (!contains_ci(caption, n)) missing.push_back(n);
    if (missing.empty()) return caption;
    std::string insert = join(missing, " and ");

    // prefer replacing a generic placeholder word over appending
    std::vector<std::string> tokens = split_ws(caption);
    for (auto& tok : tokens) {
        std::string low = to_lower(tok);
        std::string core, tail;
        split_punct(low, core, tail);
        for (const auto& g : generic_object_words()) {
            if (core == g) {
                tok = insert + tail;
                return join(tokens, " ");
            }
        }
    }
    std::string out = caption;
    while (!out.empty() && (out.back() == ' ' || out.back() == '.')) out.pop_back();
    return out + ", featuring " + insert;
}

HttpRewriterConfig HttpRewriterConfig::from_env() {
    HttpRewriterConfig cfg;
    if (const char* e = std::getenv("REWRITER_ENDPOINT")) cfg.endpoint = e;
    if (const char* k = std::getenv("REWRITER_KEY")) cfg.api_key = k;
    if (const char* m = std::getenv("REWRITER_MODEL")) cfg.model = m;
    return cfg;
}

std::string HttpRewriter::rewrite(const std::string& correction_prompt, const std::string& visual_prompt,
                                  const std::string& caption) {
    if (cfg_.endpoint.empty()) throw IOError("rewriter endpoint not configured (REWRITER_ENDPOINT)");

    // split "http://host:port" from the path
    std::string base = cfg_.endpoint, path = "/";
    size_t scheme = base.find("://");
    size_t slash = scheme == std::string::npos ? base.find('/') : base.find('/', scheme + 3);
    if (slash != std::string::npos) {
        path = base.substr(slash);
        base = base.substr(0, slash);
    }

    json req;
    req["model"] = cfg_.model;
    std::string system = correction_prompt;
    if (!visual_prompt.empty()) system += "\n" + visual_prompt;
    req["messages"] = json::array({json{{"role", "system"}, {"content", system}},
                                   json{{"role", "user"}, {"content", caption}}});

    httplib::Client client(base);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    auto res = client.Post(path, headers, req.dump(), "application/json");
    if (!res) throw IOError("rewriter transport failure: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IOError("rewriter HTTP status " + std::to_string(res->status));
    try {
        json body = json::parse(res->body);
        std::string text = body.at("choices").at(0).at("message").at("content").get<std::string>();
        if (trim(text).empty()) throw ParseError("rewriter returned an empty caption");
        return text;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed rewriter response: ") + e.what());
    }
}

EnhanceResult enhance(const std::string& caption, const PromptBundle& bundle, RewriterMode mode,
                      RewriterBackend* backend, const std::vector<std::string>& dictionary,
                      std::vector<std::string>* warnings) {
    std::vector<std::string> names;
    for (const auto& e : bundle.evidence_used.items) names.push_back(e.name);

    switch (mode) {
        case RewriterMode::none:
            return {caption, false};
        case RewriterMode::text_only:
            return {denoise(caption, dictionary), false};
        case RewriterMode::concat:
            return {concat_names(denoise(caption, dictionary), names), false};
        case RewriterMode::rewrite:
            break;
    }

    std::string base = denoise(caption, dictionary);
    if (backend == nullptr) throw ConfigError("rewrite mode requires a rewriter backend");

    auto covered = [&](const std::string& text) {
        for (const auto& n : names)
            if (!contains_ci(text, n)) return false;
        return true;
    };

    std::string last_error;
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            std::string out = backend->rewrite(bundle.correction, bundle.visual, base);
            if (!trim(out).empty() && covered(out)) return {out, false};
            last_error = "rewriter output dropped evidence";
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    if (warnings) warnings->push_back("rewrite fell back to concat: " + last_error);
    return {concat_names(base, names), true};
}

}  // namespace tokgov
