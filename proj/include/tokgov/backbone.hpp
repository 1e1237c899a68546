#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tokgov/image.hpp"
#include "tokgov/nn.hpp"

namespace tokgov {

// Row-major patch decomposition; m = rows * cols, each patch P x P x 3.
struct ImageGrid {
    int rows = 0;
    int cols = 0;
    int patch = 0;
    std::vector<std::vector<uint8_t>> patches;

    int count() const { return rows * cols; }
};

ImageGrid patchify(const Image& image, int patch_size);
Image unpatchify(const ImageGrid& grid);

// Last-layer inputs: one row per patch token plus the summary token.
struct TokenSet {
    nn::Mat tokens;           // m x d_tok
    std::vector<double> cls;  // d_tok
};

struct AttentionProjection {
    nn::Mat wq;  // d_tok x d_k
    nn::Mat wk;  // d_tok x d_k
    int d_k = 0;
};

struct ClassProbabilities {
    std::vector<double> p;  // in [0, 1], parallel to vocabulary
    std::vector<std::string> vocabulary;
};

class VisionBackbone {
public:
    virtual ~VisionBackbone() = default;
    virtual TokenSet embed(const ImageGrid& grid) const = 0;
    // One projection per attention head; scores are averaged across heads.
    virtual const std::vector<AttentionProjection>& projections() const = 0;
    virtual ClassProbabilities class_head(const std::vector<double>& cls) const = 0;
    virtual int token_width() const = 0;
};

struct VitConfig {
    int layers = 4;
    int width = 64;
    int heads = 4;
    int patch_size = 16;
    int max_patches = 196;
    std::vector<std::string> vocabulary;  // class head labels
    uint64_t seed = 7;
};

// Small seeded-random transformer. embed() runs every block except the last
// and returns that block's normalized input tokens; projections() hands out
// the last block's per-head query/key matrices.
class ReferenceVit : public VisionBackbone {
public:
    explicit ReferenceVit(const VitConfig& cfg);

    TokenSet embed(const ImageGrid& grid) const override;
    const std::vector<AttentionProjection>& projections() const override;
    ClassProbabilities class_head(const std::vector<double>& cls) const override;
    int token_width() const override { return cfg_.width; }

    const VitConfig& config() const { return cfg_; }
    void save_weights(const std::string& path) const;
    static std::unique_ptr<ReferenceVit> load_weights(const std::string& path,
                                                      std::vector<std::string> vocabulary);

private:
    struct Block {
        nn::Mat ln1_g, ln1_b;
        nn::Mat wq, wk, wv, wo;  // width x width
        nn::Mat bo;
        nn::Mat ln2_g, ln2_b;
        nn::Mat w1, b1, w2, b2;  // MLP, 4x hidden
    };

    nn::Mat run_blocks(const ImageGrid& grid) const;  // tokens after layers 0..L-2, ln applied

    VitConfig cfg_;
    nn::Mat patch_embed_w, patch_embed_b;
    nn::Mat pos;        // (max_patches + 1) x width, row 0 is the summary slot
    nn::Mat cls_token;  // 1 x width
    std::vector<Block> blocks_;
    nn::Mat head_w, head_b;  // width x |vocab|
    std::vector<AttentionProjection> proj_;
};

// Analytic backbone for the synthetic corpus: token feature 0 is the patch's
// deviation from the image's median color, features 1..L are per-class color
// match scores; the class head is a calibrated sigmoid over the match.
class SyntheticSaliencyBackbone : public VisionBackbone {
public:
    explicit SyntheticSaliencyBackbone(std::vector<std::string> vocabulary);

    TokenSet embed(const ImageGrid& grid) const override;
    const std::vector<AttentionProjection>& projections() const override;
    ClassProbabilities class_head(const std::vector<double>& cls) const override;
    int token_width() const override { return 1 + static_cast<int>(vocab_.size()); }

private:
    std::vector<std::string> vocab_;
    std::vector<std::array<double, 3>> codes_;
    std::vector<AttentionProjection> proj_;
};

struct BackboneConfig {
    std::string kind = "synthetic_saliency";  // reference_vit | synthetic_saliency | external
    VitConfig vit;
    std::string weights_path;
    std::vector<std::string> vocabulary;
};

std::unique_ptr<VisionBackbone> make_backbone(const BackboneConfig& cfg);

}  // namespace tokgov
