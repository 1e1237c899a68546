#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tokgov/encoder.hpp"
#include "tokgov/manifest.hpp"

namespace tokgov {

struct TrainConfig {
    int batch = 64;
    int epochs = 20;
    double base_lr = 3e-3;
    int warmup_epochs = 2;
    double weight_decay = 0.05;
    std::string schedule = "cosine";
    double full_patch_fraction = 0.0;  // trailing steps that feed all m patches
    uint64_t token_budget = 0;         // total sampled tokens; 0 = unlimited
    uint64_t seed = 1;

    void validate() const;
};

struct TrainSample {
    nn::Mat all_feats;          // m x (P*P*3), every patch
    std::vector<int> retained;  // sorted subset used on regular steps
    int m = 0;
    std::vector<int> tokens;    // text ids, truncated, BOS included
};

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    uint64_t tokens_cum = 0;
    bool full_patch = false;
};

struct TrainResult {
    std::vector<StepRecord> log;
    uint64_t total_tokens = 0;
    int steps = 0;
};

// Loads pixel features and token ids for every record. Raw manifests pass
// through with all patches retained (r = 1).
std::vector<TrainSample> load_train_samples(const Manifest& manifest, const DualEncoder& model);

// Tokens sampled by one batch: sum of (patches + 1 + text tokens).
uint64_t batch_token_cost(const std::vector<const TrainSample*>& batch, bool full_patch);

// AdamW + linear warmup + cosine decay. Fully seeded and single-threaded, so
// identical configs produce identical parameters.
TrainResult train(DualEncoder& model, const std::vector<TrainSample>& data, const TrainConfig& cfg,
                  const std::function<void(const StepRecord&)>& on_step = {});

// CSV columns: step,loss,lr,tokens_cum,full_patch_flag. Returns the digest.
std::string write_train_log(const TrainResult& result, const std::string& path);

}  // namespace tokgov
