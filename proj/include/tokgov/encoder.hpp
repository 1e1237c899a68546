#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokgov/manifest.hpp"
#include "tokgov/nn.hpp"

namespace tokgov {

struct TowerConfig {
    int layers = 2;
    int width = 64;
    int heads = 4;
};

struct EncoderConfig {
    int embed_dim = 64;  // shared embedding dimension d
    TowerConfig vision{4, 64, 4};
    TowerConfig text{2, 64, 2};
    int patch_size = 4;
    int max_patches = 64;    // positional table size for original grid indices
    int max_text_len = 16;   // includes the BOS summary slot
    std::vector<std::string> text_vocab;
    double temperature_init = 0.07;
    bool temperature_learnable = true;
    uint64_t seed = 1;

    void validate() const;
};

// Whitespace word tokenizer over a configured word list; unknown words fall
// back to per-character tokens. Id 0 is the BOS summary slot.
class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(const std::vector<std::string>& words);

    // BOS + content ids, truncated to max_len. InputError when the caption
    // has no content tokens at all.
    std::vector<int> encode(const std::string& caption, int max_len) const;
    int vocab_size() const { return vocab_size_; }

    static constexpr int kBos = 0;
    static constexpr int kCharBase = 1;   // printable ASCII 32..126
    static constexpr int kUnknown = 96;
    static constexpr int kWordBase = 97;

private:
    std::unordered_map<std::string, int> word_ids_;
    int vocab_size_ = kWordBase;
};

// Two transformer towers with a shared contrastive embedding space. Images
// enter as subsets of patches; every retained patch keeps the positional
// embedding of its original grid index. Sequences in a batch are padded to
// the batch maximum and masked, so padding never changes an embedding.
class DualEncoder {
public:
    explicit DualEncoder(EncoderConfig cfg);

    struct ImageItem {
        nn::Mat feats;             // k x (P*P*3), rows follow `indices`
        std::vector<int> indices;  // original grid indices, sorted
    };

    nn::Node encode_images(nn::Graph& g, const std::vector<ImageItem>& batch);
    nn::Node encode_texts(nn::Graph& g, const std::vector<std::vector<int>>& token_rows);
    nn::Node logit_scale(nn::Graph& g);  // exp(s), clamped to 100

    // Single-sample inference helpers.
    std::vector<double> embed_image(const ImageItem& item);
    std::vector<double> embed_text(const std::string& caption);

    std::vector<nn::Param*> params();
    const EncoderConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    double temperature() const;

    // Builds the feature rows for a retained subset. Unsorted index lists are
    // canonicalized; out-of-range indices raise IntegrityError.
    ImageItem make_image_item(const Image& image, const GridSpec& grid, std::vector<int> retained) const;

    void save(const std::string& path, const std::string& meta_json) const;
    static DualEncoder load(const std::string& path);
    std::string meta(const std::string& path);  // sidecar contents

    // Analytic per-image transformer cost for a given sequence length.
    static uint64_t attention_flops(int seq_len, int width, int layers);

private:
    struct Tower {
        std::vector<nn::Param*> blocks;  // 13 params per layer, then final ln g/b
    };

    nn::Param* add_param(const std::string& name, nn::Mat init);
    nn::Node run_tower(nn::Graph& g, nn::Node x, const std::vector<uint8_t>& key_mask, const Tower& tower,
                       const TowerConfig& tc);

    EncoderConfig cfg_;
    Tokenizer tokenizer_;
    std::deque<nn::Param> storage_;
    std::vector<nn::Param*> params_;

    // vision side
    nn::Param* patch_w_ = nullptr;
    nn::Param* patch_b_ = nullptr;
    nn::Param* vis_pos_ = nullptr;
    nn::Param* vis_cls_ = nullptr;
    nn::Param* vis_proj_ = nullptr;
    Tower vis_tower_;
    // text side
    nn::Param* tok_embed_ = nullptr;
    nn::Param* txt_pos_ = nullptr;
    nn::Param* txt_proj_ = nullptr;
    Tower txt_tower_;
    nn::Param* logit_scale_param_ = nullptr;
};

// Functional contrastive loss with report, as used by the trainer.
struct LossReport {
    double loss = 0.0;
    nn::Mat p_i2t;
    nn::Mat p_t2i;
};
LossReport itc_loss(const nn::Mat& img_embs, const nn::Mat& txt_embs, double tau);

}  // namespace tokgov
