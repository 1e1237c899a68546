#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tokgov/backbone.hpp"
#include "tokgov/manifest.hpp"

namespace tokgov {

struct PatchScores {
    std::vector<double> s;
};

enum class SelectionStrategy { topk, uniform, stratified, mix, cluster };

SelectionStrategy parse_strategy(const std::string& name);
const char* to_string(SelectionStrategy s);

struct SelectionConfig {
    SelectionStrategy strategy = SelectionStrategy::topk;
    double r = 0.5;   // retention ratio in (0, 1]
    int strata = 4;   // stratified/mix only
    uint64_t seed = 0;
};

// k = ceil(r * m), always >= 1 for valid r.
int retained_count(double r, int m);

// Scaled query-key dot products of the summary token against every patch
// token. No normalization; selection only needs the ordering.
PatchScores score_patches(const TokenSet& tokens, const AttentionProjection& proj);

// Head-averaged scores.
PatchScores score_patches(const TokenSet& tokens, const std::vector<AttentionProjection>& projections);

// Sorted retained indices. Ties always resolve to the lower index. The
// cluster strategy requires the backbone's patch tokens.
std::vector<int> select_patches(const PatchScores& scores, const SelectionConfig& cfg,
                                const nn::Mat* tokens = nullptr);

ClassProbabilities predict_classes(const std::vector<double>& cls, const VisionBackbone& backbone);

struct VisualEvidence {
    std::vector<EvidenceItem> items;  // confidence-descending, ties by vocabulary order
};

// Exactly the classes with p > epsilon.
VisualEvidence extract_evidence(const ClassProbabilities& p, double epsilon);

// Vision branch composite: patchify, embed, score, select, predict, extract.
// The caption is copied through untouched.
GovernedRecord govern_image(const RawRecord& sample, const Image& image, int patch_size,
                            const VisionBackbone& backbone, const SelectionConfig& sel, double epsilon,
                            bool keep_scores = false);

}  // namespace tokgov
