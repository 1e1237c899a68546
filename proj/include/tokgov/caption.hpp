#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tokgov/governor.hpp"

namespace tokgov {

// Collapses repeated adjacent words (case-insensitive), normalizes
// whitespace, and repairs out-of-dictionary tokens that sit at edit distance
// one from a dictionary word. Idempotent.
std::string denoise(const std::string& caption, const std::vector<std::string>& dictionary);

bool edit_distance_is_at_most_one(const std::string& a, const std::string& b);

struct PromptConfig {
    std::string correction =
        "Correct misspellings and remove repeated words in the caption; keep its meaning.";
    // {classes} expands to the comma-joined, confidence-ordered class names.
    std::string visual_template =
        "The image is verified to contain: {classes}. Integrate these into the caption naturally.";
};

struct PromptBundle {
    std::string correction;  // P_M
    std::string visual;      // P_O, empty when there is no evidence
    VisualEvidence evidence_used;
};

std::string build_visual_prompt(const VisualEvidence& evidence, const PromptConfig& cfg = {});
PromptBundle make_prompts(const VisualEvidence& evidence, const PromptConfig& cfg = {});

enum class RewriterMode { none, text_only, concat, rewrite };
RewriterMode parse_rewriter_mode(const std::string& name);
const char* to_string(RewriterMode m);

class RewriterBackend {
public:
    virtual ~RewriterBackend() = default;
    virtual std::string rewrite(const std::string& correction_prompt, const std::string& visual_prompt,
                                const std::string& caption) = 0;
};

// Deterministic offline rewriter. Substitutes generic object words
// ("something", "things", ...) with the evidence class names parsed from the
// visual prompt, or appends a "featuring ..." clause when none are present.
class TemplateRewriter : public RewriterBackend {
public:
    std::string rewrite(const std::string& correction_prompt, const std::string& visual_prompt,
                        const std::string& caption) override;
};

struct HttpRewriterConfig {
    std::string endpoint;  // http://host:port/path
    std::string api_key;
    std::string model;
    int timeout_seconds = 30;

    // Reads REWRITER_ENDPOINT, REWRITER_KEY, REWRITER_MODEL.
    static HttpRewriterConfig from_env();
};

// Single-turn chat completion client. System message is P_M + P_O, user
// message is the caption; the first choice's message text comes back.
class HttpRewriter : public RewriterBackend {
public:
    explicit HttpRewriter(HttpRewriterConfig cfg) : cfg_(std::move(cfg)) {}
    std::string rewrite(const std::string& correction_prompt, const std::string& visual_prompt,
                        const std::string& caption) override;

private:
    HttpRewriterConfig cfg_;
};

struct EnhanceResult {
    std::string caption;
    bool fell_back = false;
};

// Eq-style caption enhancement. none: identity. text_only: denoise. concat:
// denoise + ". objects: " + names. rewrite: backend output, which must
// contain every evidence class name; one retry, then concat fallback with a
// warning pushed to `warnings`.
EnhanceResult enhance(const std::string& caption, const PromptBundle& bundle, RewriterMode mode,
                      RewriterBackend* backend, const std::vector<std::string>& dictionary,
                      std::vector<std::string>* warnings = nullptr);

}  // namespace tokgov
