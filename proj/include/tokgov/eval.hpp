#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokgov/backbone.hpp"
#include "tokgov/caption.hpp"
#include "tokgov/encoder.hpp"
#include "tokgov/governor.hpp"
#include "tokgov/sieve.hpp"
#include "tokgov/trainer.hpp"

namespace tokgov {

struct EvalReport {
    std::string task;
    std::map<std::string, double> metrics;  // all values in [0, 1]
    std::string config_digest;
    double encode_seconds_per_image = 0.0;
};

// Pre-extracted feature rows for the evaluation set.
struct EvalSet {
    std::vector<std::string> ids;
    std::vector<std::string> captions;
    std::vector<std::string> labels;
    std::vector<DualEncoder::ImageItem> items;  // full-patch by default
    std::vector<Image> images;
    GridSpec grid;
};

EvalSet load_eval_set(const Manifest& manifest, const DualEncoder& model);

// Cosine ranking helpers shared by the metrics; ties resolve to the lower id.
nn::Mat embed_eval_images(DualEncoder& model, const std::vector<DualEncoder::ImageItem>& items);
nn::Mat embed_eval_texts(DualEncoder& model, const std::vector<std::string>& captions);

// Nearest class-name text embedding; template "{c}" expands to the class.
EvalReport zero_shot_classify(DualEncoder& model, const EvalSet& eval_set,
                              const std::vector<std::string>& class_names,
                              const std::string& prompt_template = "a photo of a {c}");

// Scoring core: argmax over cosine(image, class text); equal scores go to
// the lower class index. Unlabeled rows (empty string) are skipped.
EvalReport zero_shot_from_embeddings(const nn::Mat& img, const nn::Mat& class_txt,
                                     const std::vector<std::string>& labels,
                                     const std::vector<std::string>& class_names);

// Bidirectional retrieval; headline metric is image-to-text R@1.
EvalReport retrieval_eval(DualEncoder& model, const EvalSet& eval_set);
EvalReport retrieval_from_embeddings(const nn::Mat& img, const nn::Mat& txt);

struct SweepPoint {
    double r = 0.0;
    int tokens_per_image = 0;       // retained patches, summary slot excluded
    double median_encode_seconds = 0.0;
    EvalReport retrieval;
};

// Re-governs the evaluation images with topk at each r, measures wall-clock
// (median of `timing_runs` warm passes) and retrieval quality.
std::vector<SweepPoint> retention_sweep(DualEncoder& model, const VisionBackbone& backbone, const EvalSet& eval_set,
                                        const std::vector<double>& r_values, int timing_runs = 5);

// One comparison arm: an optional sample-level sieve, then token governance.
struct GovernorSpec {
    std::string name;
    std::optional<SieveConfig> sieve;
    SelectionConfig selection;          // r = 1 + mode none = full-data arm
    RewriterMode mode = RewriterMode::none;
    double epsilon = 0.7;
    bool keep_scores = false;
};

struct CompareRow {
    std::string governor;
    uint64_t seed = 0;
    double r_at_1 = 0.0;
    double top1 = 0.0;
    double overhead_seconds = 0.0;  // governance wall-clock
    uint64_t tokens = 0;            // sampled tokens actually consumed
};

struct CompareReport {
    std::vector<CompareRow> rows;
    std::vector<std::string> skipped;  // "<name>: <reason>"
    std::map<std::string, double> mean_r1;
    std::map<std::string, double> std_r1;
};

struct CompareSettings {
    uint64_t token_budget = 0;  // shared training budget, required
    std::vector<uint64_t> seeds = {1, 2, 3};
    EncoderConfig encoder;
    TrainConfig train;
    int patch_size = 4;
    double epsilon = 0.7;
    std::vector<std::string> class_vocab;
    PromptConfig prompts;
    // embedder for cluster/clip-score sieve arms; class-code fallback if null
    const SampleEmbedder* embedder = nullptr;
};

CompareReport compare_governors(const Manifest& raw, const EvalSet& eval_set,
                                const std::vector<GovernorSpec>& specs, const VisionBackbone& backbone,
                                const CompareSettings& settings);

std::string compare_report_csv(const CompareReport& report);
std::string compare_report_table(const CompareReport& report);

// Applies one governor spec to a raw manifest: sieve (optional), vision
// branch, then caption enhancement. Deterministic per (spec, seed).
Manifest apply_governor(const Manifest& raw, const GovernorSpec& spec, const VisionBackbone& backbone,
                        const CompareSettings& settings, uint64_t seed, int workers = 1,
                        std::vector<std::string>* warnings = nullptr, RewriterBackend* backend = nullptr);

// Sieve embedder backed by a trained dual encoder (full-patch image inputs).
class EncoderEmbedder : public SampleEmbedder {
public:
    explicit EncoderEmbedder(DualEncoder& model) : model_(model) {}
    std::vector<double> embed_image(const Manifest& manifest, size_t index) const override;
    std::vector<double> embed_text(const std::string& caption) const override;

private:
    DualEncoder& model_;
};

// Default scoring embedder: the reference dual encoder trained briefly on a
// held-out shard (every 10th record) of the raw corpus.
DualEncoder train_brief_embedder(const Manifest& raw, const EncoderConfig& cfg, uint64_t seed);

}  // namespace tokgov
