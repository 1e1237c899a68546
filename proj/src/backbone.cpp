#include "tokgov/backbone.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tokgov/common.hpp"
#include "tokgov/synthetic.hpp"

namespace tokgov {

using nn::Mat;

ImageGrid patchify(const Image& image, int patch_size) {
    if (patch_size <= 0) throw ShapeError("patch size must be positive");
    if (image.width % patch_size != 0 || image.height % patch_size != 0)
        throw ShapeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " not divisible by patch size " + std::to_string(patch_size));
    ImageGrid grid;
    grid.patch = patch_size;
    grid.rows = image.height / patch_size;
    grid.cols = image.width / patch_size;
    grid.patches.resize(static_cast<size_t>(grid.count()));
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            auto& block = grid.patches[static_cast<size_t>(r * grid.cols + c)];
            block.resize(static_cast<size_t>(patch_size) * patch_size * 3);
            size_t o = 0;
            for (int y = r * patch_size; y < (r + 1) * patch_size; ++y)
                for (int x = c * patch_size; x < (c + 1) * patch_size; ++x)
                    for (int ch = 0; ch < 3; ++ch) block[o++] = image.at(x, y, ch);
        }
    return grid;
}

Image unpatchify(const ImageGrid& grid) {
    Image img(grid.cols * grid.patch, grid.rows * grid.patch);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const auto& block = grid.patches[static_cast<size_t>(r * grid.cols + c)];
            size_t o = 0;
            for (int y = r * grid.patch; y < (r + 1) * grid.patch; ++y)
                for (int x = c * grid.patch; x < (c + 1) * grid.patch; ++x)
                    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = block[o++];
        }
    return img;
}

namespace {

void layer_norm_rows(Mat& x, const Mat& g, const Mat& b) {
    constexpr double eps = 1e-5;
    for (int i = 0; i < x.rows; ++i) {
        double* row = x.row_ptr(i);
        double mean = 0.0;
        for (int j = 0; j < x.cols; ++j) mean += row[j];
        mean /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= x.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < x.cols; ++j) row[j] = (row[j] - mean) * inv * g(0, j) + b(0, j);
    }
}

void softmax_rows(Mat& x) {
    for (int i = 0; i < x.rows; ++i) {
        double* row = x.row_ptr(i);
        double mx = row[0];
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (int j = 0; j < x.cols; ++j) row[j] /= denom;
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat patch_features(const ImageGrid& grid) {
    const int din = grid.patch * grid.patch * 3;
    Mat f(grid.count(), din);
    for (int t = 0; t < grid.count(); ++t) {
        const auto& block = grid.patches[static_cast<size_t>(t)];
        for (int j = 0; j < din; ++j) f(t, j) = block[static_cast<size_t>(j)] / 127.5 - 1.0;
    }
    return f;
}

}  // namespace

ReferenceVit::ReferenceVit(const VitConfig& cfg) : cfg_(cfg) {
    if (cfg_.width % cfg_.heads != 0) throw ConfigError("backbone width must divide by head count");
    if (cfg_.layers < 1) throw ConfigError("backbone needs at least one layer");
    Rng rng(cfg_.seed);
    const int w = cfg_.width;
    const int din = cfg_.patch_size * cfg_.patch_size * 3;
    const double s = 0.02;
    patch_embed_w = Mat::randn(din, w, s, rng);
    patch_embed_b = Mat(1, w);
    pos = Mat::randn(cfg_.max_patches + 1, w, s, rng);
    cls_token = Mat::randn(1, w, s, rng);
    blocks_.resize(static_cast<size_t>(cfg_.layers));
    for (auto& blk : blocks_) {
        blk.ln1_g = Mat(1, w);
        blk.ln1_g.fill(1.0);
        blk.ln1_b = Mat(1, w);
        blk.wq = Mat::randn(w, w, s, rng);
        blk.wk = Mat::randn(w, w, s, rng);
        blk.wv = Mat::randn(w, w, s, rng);
        blk.wo = Mat::randn(w, w, s, rng);
        blk.bo = Mat(1, w);
        blk.ln2_g = Mat(1, w);
        blk.ln2_g.fill(1.0);
        blk.ln2_b = Mat(1, w);
        blk.w1 = Mat::randn(w, 4 * w, s, rng);
        blk.b1 = Mat(1, 4 * w);
        blk.w2 = Mat::randn(4 * w, w, s, rng);
        blk.b2 = Mat(1, w);
    }
    int vocab_n = std::max<int>(1, static_cast<int>(cfg_.vocabulary.size()));
    head_w = Mat::randn(w, vocab_n, s, rng);
    head_b = Mat(1, vocab_n);

    const auto& last = blocks_.back();
    const int dh = w / cfg_.heads;
    proj_.resize(static_cast<size_t>(cfg_.heads));
    for (int h = 0; h < cfg_.heads; ++h) {
        auto& p = proj_[static_cast<size_t>(h)];
        p.d_k = dh;
        p.wq = Mat(w, dh);
        p.wk = Mat(w, dh);
        for (int i = 0; i < w; ++i)
            for (int j = 0; j < dh; ++j) {
                p.wq(i, j) = last.wq(i, h * dh + j);
                p.wk(i, j) = last.wk(i, h * dh + j);
            }
    }
}

Mat ReferenceVit::run_blocks(const ImageGrid& grid) const {
    const int m = grid.count();
    if (m > cfg_.max_patches)
        throw ShapeError("grid has " + std::to_string(m) + " patches, backbone supports " +
                         std::to_string(cfg_.max_patches));
    const int w = cfg_.width;
    const int dh = w / cfg_.heads;

    Mat feats = patch_features(grid);
    if (feats.cols != patch_embed_w.rows)
        throw ShapeError("patch size does not match backbone patch embedding");
    Mat x(m + 1, w);
    Mat emb(m, w);
    nn::gemm_nn(feats, patch_embed_w, emb, false);
    for (int j = 0; j < w; ++j) x(0, j) = cls_token(0, j) + pos(0, j);
    for (int t = 0; t < m; ++t)
        for (int j = 0; j < w; ++j) x(t + 1, j) = emb(t, j) + patch_embed_b(0, j) + pos(t + 1, j);

    // every block except the last runs fully; the last contributes only its
    // pre-attention normalization (embed output) and q/k (projections()).
    for (size_t bi = 0; bi + 1 < blocks_.size(); ++bi) {
        const auto& blk = blocks_[bi];
        Mat h = x;
        layer_norm_rows(h, blk.ln1_g, blk.ln1_b);
        Mat q(m + 1, w), k(m + 1, w), v(m + 1, w);
        nn::gemm_nn(h, blk.wq, q, false);
        nn::gemm_nn(h, blk.wk, k, false);
        nn::gemm_nn(h, blk.wv, v, false);
        Mat attn_out(m + 1, w);
        for (int head = 0; head < cfg_.heads; ++head) {
            int c0 = head * dh;
            Mat qs(m + 1, dh), ks(m + 1, dh), vs(m + 1, dh);
            for (int i = 0; i <= m; ++i)
                for (int j = 0; j < dh; ++j) {
                    qs(i, j) = q(i, c0 + j);
                    ks(i, j) = k(i, c0 + j);
                    vs(i, j) = v(i, c0 + j);
                }
            Mat scores(m + 1, m + 1);
            nn::gemm_nt(qs, ks, scores, false);
            double scale = 1.0 / std::sqrt(static_cast<double>(dh));
            for (auto& val : scores.a) val *= scale;
            softmax_rows(scores);
            Mat ctx(m + 1, dh);
            nn::gemm_nn(scores, vs, ctx, false);
            for (int i = 0; i <= m; ++i)
                for (int j = 0; j < dh; ++j) attn_out(i, c0 + j) = ctx(i, j);
        }
        Mat proj(m + 1, w);
        nn::gemm_nn(attn_out, blk.wo, proj, false);
        for (int i = 0; i <= m; ++i)
            for (int j = 0; j < w; ++j) x(i, j) += proj(i, j) + blk.bo(0, j);

        Mat h2 = x;
        layer_norm_rows(h2, blk.ln2_g, blk.ln2_b);
        Mat mid(m + 1, 4 * w);
        nn::gemm_nn(h2, blk.w1, mid, false);
        for (int i = 0; i <= m; ++i)
            for (int j = 0; j < 4 * w; ++j) {
                double val = mid(i, j) + blk.b1(0, j);
                double t = std::tanh(0.7978845608028654 * (val + 0.044715 * val * val * val));
                mid(i, j) = 0.5 * val * (1.0 + t);
            }
        Mat out(m + 1, w);
        nn::gemm_nn(mid, blk.w2, out, false);
        for (int i = 0; i <= m; ++i)
            for (int j = 0; j < w; ++j) x(i, j) += out(i, j) + blk.b2(0, j);
    }
    layer_norm_rows(x, blocks_.back().ln1_g, blocks_.back().ln1_b);
    return x;
}

TokenSet ReferenceVit::embed(const ImageGrid& grid) const {
    Mat x = run_blocks(grid);
    TokenSet ts;
    ts.cls.assign(x.row_ptr(0), x.row_ptr(0) + cfg_.width);
    ts.tokens = Mat(grid.count(), cfg_.width);
    for (int t = 0; t < grid.count(); ++t)
        std::copy(x.row_ptr(t + 1), x.row_ptr(t + 1) + cfg_.width, ts.tokens.row_ptr(t));
    return ts;
}

const std::vector<AttentionProjection>& ReferenceVit::projections() const { return proj_; }

ClassProbabilities ReferenceVit::class_head(const std::vector<double>& cls) const {
    if (static_cast<int>(cls.size()) != cfg_.width)
        throw ShapeError("summary vector width " + std::to_string(cls.size()) + " does not match head input " +
                         std::to_string(cfg_.width));
    ClassProbabilities out;
    out.vocabulary = cfg_.vocabulary;
    out.p.resize(out.vocabulary.size());
    for (size_t j = 0; j < out.vocabulary.size(); ++j) {
        double logit = head_b(0, static_cast<int>(j));
        for (int i = 0; i < cfg_.width; ++i) logit += cls[static_cast<size_t>(i)] * head_w(i, static_cast<int>(j));
        out.p[j] = sigmoid(logit);
    }
    return out;
}

namespace {

constexpr uint32_t kVitMagic = 0x57564754;  // "TGVW"

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void put_mat(std::string& out, const Mat& m) {
    put_u32(out, static_cast<uint32_t>(m.rows));
    put_u32(out, static_cast<uint32_t>(m.cols));
    for (double d : m.a) {
        float f = static_cast<float>(d);
        out.append(reinterpret_cast<const char*>(&f), 4);
    }
}

struct Reader {
    const std::string& buf;
    size_t off = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    uint32_t u32() {
        if (off + 4 > buf.size()) throw ParseError("truncated weight file");
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    }
    Mat mat() {
        uint32_t r = u32(), c = u32();
        Mat m(static_cast<int>(r), static_cast<int>(c));
        if (off + m.size() * 4 > buf.size()) throw ParseError("truncated weight file payload");
        for (size_t i = 0; i < m.size(); ++i) {
            float f;
            std::memcpy(&f, buf.data() + off, 4);
            off += 4;
            m.a[i] = f;
        }
        return m;
    }
};

}  // namespace

void ReferenceVit::save_weights(const std::string& path) const {
    std::string out;
    put_u32(out, kVitMagic);
    put_u32(out, 1);  // version
    put_u32(out, static_cast<uint32_t>(cfg_.layers));
    put_u32(out, static_cast<uint32_t>(cfg_.width));
    put_u32(out, static_cast<uint32_t>(cfg_.heads));
    put_u32(out, static_cast<uint32_t>(cfg_.patch_size));
    put_u32(out, static_cast<uint32_t>(cfg_.max_patches));
    put_mat(out, patch_embed_w);
    put_mat(out, patch_embed_b);
    put_mat(out, pos);
    put_mat(out, cls_token);
    for (const auto& blk : blocks_) {
        put_mat(out, blk.ln1_g);
        put_mat(out, blk.ln1_b);
        put_mat(out, blk.wq);
        put_mat(out, blk.wk);
        put_mat(out, blk.wv);
        put_mat(out, blk.wo);
        put_mat(out, blk.bo);
        put_mat(out, blk.ln2_g);
        put_mat(out, blk.ln2_b);
        put_mat(out, blk.w1);
        put_mat(out, blk.b1);
        put_mat(out, blk.w2);
        put_mat(out, blk.b2);
    }
    put_mat(out, head_w);
    put_mat(out, head_b);
    write_file_atomic(path, out);
}

std::unique_ptr<ReferenceVit> ReferenceVit::load_weights(const std::string& path,
                                                         std::vector<std::string> vocabulary) {
    std::string buf = read_file(path);
    Reader rd(buf);
    if (rd.u32() != kVitMagic) throw ParseError("not a backbone weight file: " + path);
    if (rd.u32() != 1) throw ParseError("unsupported weight file version: " + path);
    VitConfig cfg;
    cfg.layers = static_cast<int>(rd.u32());
    cfg.width = static_cast<int>(rd.u32());
    cfg.heads = static_cast<int>(rd.u32());
    cfg.patch_size = static_cast<int>(rd.u32());
    cfg.max_patches = static_cast<int>(rd.u32());
    cfg.vocabulary = std::move(vocabulary);
    auto vit = std::make_unique<ReferenceVit>(cfg);
    vit->patch_embed_w = rd.mat();
    vit->patch_embed_b = rd.mat();
    vit->pos = rd.mat();
    vit->cls_token = rd.mat();
    for (auto& blk : vit->blocks_) {
        blk.ln1_g = rd.mat();
        blk.ln1_b = rd.mat();
        blk.wq = rd.mat();
        blk.wk = rd.mat();
        blk.wv = rd.mat();
        blk.wo = rd.mat();
        blk.bo = rd.mat();
        blk.ln2_g = rd.mat();
        blk.ln2_b = rd.mat();
        blk.w1 = rd.mat();
        blk.b1 = rd.mat();
        blk.w2 = rd.mat();
        blk.b2 = rd.mat();
    }
    vit->head_w = rd.mat();
    vit->head_b = rd.mat();
    if (static_cast<int>(vit->head_w.cols) < static_cast<int>(vit->cfg_.vocabulary.size()))
        throw ConfigError("weight file class head smaller than requested vocabulary");
    // rebuild per-head projections from the loaded last block
    const auto& last = vit->blocks_.back();
    const int dh = cfg.width / cfg.heads;
    for (int h = 0; h < cfg.heads; ++h) {
        auto& p = vit->proj_[static_cast<size_t>(h)];
        for (int i = 0; i < cfg.width; ++i)
            for (int j = 0; j < dh; ++j) {
                p.wq(i, j) = last.wq(i, h * dh + j);
                p.wk(i, j) = last.wk(i, h * dh + j);
            }
    }
    return vit;
}

SyntheticSaliencyBackbone::SyntheticSaliencyBackbone(std::vector<std::string> vocabulary)
    : vocab_(std::move(vocabulary)) {
    if (vocab_.empty()) throw ConfigError("saliency backbone needs a class vocabulary");
    codes_.resize(vocab_.size());
    for (size_t j = 0; j < vocab_.size(); ++j) {
        uint8_t rgb[3];
        class_color(static_cast<int>(j), static_cast<int>(vocab_.size()), rgb);
        codes_[j] = {static_cast<double>(rgb[0]), static_cast<double>(rgb[1]), static_cast<double>(rgb[2])};
    }
    AttentionProjection p;
    p.d_k = token_width();
    p.wq = Mat::identity(token_width());
    p.wk = Mat::identity(token_width());
    proj_.push_back(std::move(p));
}

TokenSet SyntheticSaliencyBackbone::embed(const ImageGrid& grid) const {
    const int m = grid.count();
    const int L = static_cast<int>(vocab_.size());
    std::vector<std::array<double, 3>> means(static_cast<size_t>(m));
    for (int t = 0; t < m; ++t) {
        const auto& block = grid.patches[static_cast<size_t>(t)];
        double acc[3] = {0, 0, 0};
        for (size_t i = 0; i < block.size(); i += 3)
            for (int c = 0; c < 3; ++c) acc[c] += block[i + static_cast<size_t>(c)];
        double npx = static_cast<double>(block.size()) / 3.0;
        means[static_cast<size_t>(t)] = {acc[0] / npx, acc[1] / npx, acc[2] / npx};
    }
    // channel-wise median of patch means approximates the background color
    std::array<double, 3> med{};
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ch(static_cast<size_t>(m));
        for (int t = 0; t < m; ++t) ch[static_cast<size_t>(t)] = means[static_cast<size_t>(t)][static_cast<size_t>(c)];
        std::nth_element(ch.begin(), ch.begin() + m / 2, ch.end());
        med[static_cast<size_t>(c)] = ch[static_cast<size_t>(m / 2)];
    }

    TokenSet ts;
    ts.tokens = Mat(m, 1 + L);
    constexpr double kMaxDist = 441.6729559300637;  // sqrt(3 * 255^2)
    constexpr double kSigma = 60.0;
    for (int t = 0; t < m; ++t) {
        const auto& mu = means[static_cast<size_t>(t)];
        double dev = 0.0;
        for (int c = 0; c < 3; ++c) dev += (mu[static_cast<size_t>(c)] - med[static_cast<size_t>(c)]) *
                                           (mu[static_cast<size_t>(c)] - med[static_cast<size_t>(c)]);
        ts.tokens(t, 0) = std::sqrt(dev) / kMaxDist;
        for (int j = 0; j < L; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                double diff = mu[static_cast<size_t>(c)] - codes_[static_cast<size_t>(j)][static_cast<size_t>(c)];
                d2 += diff * diff;
            }
            ts.tokens(t, 1 + j) = std::exp(-d2 / (kSigma * kSigma));
        }
    }
    ts.cls.assign(static_cast<size_t>(1 + L), 0.0);
    ts.cls[0] = 1.0;
    for (int j = 0; j < L; ++j) {
        double mx = 0.0;
        for (int t = 0; t < m; ++t) mx = std::max(mx, ts.tokens(t, 1 + j));
        ts.cls[static_cast<size_t>(1 + j)] = mx;
    }
    return ts;
}

const std::vector<AttentionProjection>& SyntheticSaliencyBackbone::projections() const { return proj_; }

ClassProbabilities SyntheticSaliencyBackbone::class_head(const std::vector<double>& cls) const {
    if (cls.size() != static_cast<size_t>(token_width()))
        throw ShapeError("summary vector width does not match saliency head");
    ClassProbabilities out;
    out.vocabulary = vocab_;
    out.p.resize(vocab_.size());
    for (size_t j = 0; j < vocab_.size(); ++j) out.p[j] = sigmoid(10.0 * (cls[1 + j] - 0.55));
    return out;
}

std::unique_ptr<VisionBackbone> make_backbone(const BackboneConfig& cfg) {
    if (cfg.kind == "synthetic_saliency") return std::make_unique<SyntheticSaliencyBackbone>(cfg.vocabulary);
    if (cfg.kind == "reference_vit") {
        VitConfig vc = cfg.vit;
        vc.vocabulary = cfg.vocabulary;
        return std::make_unique<ReferenceVit>(vc);
    }
    if (cfg.kind == "external") {
        if (cfg.weights_path.empty()) throw ConfigError("external backbone requires a weights path");
        return ReferenceVit::load_weights(cfg.weights_path, cfg.vocabulary);
    }
    throw ConfigError("unknown backbone kind: " + cfg.kind);
}

}  // namespace tokgov
