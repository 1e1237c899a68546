#include "tokgov/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include <json.hpp>

namespace tokgov {

using nn::Graph;
using nn::Mat;
using nn::Node;
using nn::Param;
using nlohmann::json;

void EncoderConfig::validate() const {
    if (embed_dim < 8) throw ConfigError("embedding dimension must be at least 8");
    if (vision.width % vision.heads != 0 || text.width % text.heads != 0)
        throw ConfigError("tower width must be divisible by its head count");
    if (vision.layers < 1 || text.layers < 1) throw ConfigError("towers need at least one layer");
    if (temperature_init <= 0.0) throw ConfigError("temperature must be positive");
    if (max_text_len < 2) throw ConfigError("max text length must allow BOS plus one token");
    if (max_patches < 1) throw ConfigError("max_patches must be positive");
}

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
    int next = kWordBase;
    for (const auto& w : words) {
        auto lw = to_lower(w);
        if (word_ids_.emplace(lw, next).second) ++next;
    }
    vocab_size_ = next;
}

std::vector<int> Tokenizer::encode(const std::string& caption, int max_len) const {
    std::vector<int> ids;
    ids.push_back(kBos);
    for (const auto& word : split_ws(to_lower(caption))) {
        auto it = word_ids_.find(word);
        if (it != word_ids_.end()) {
            ids.push_back(it->second);
        } else {
            for (char c : word) {
                int v = static_cast<unsigned char>(c);
                ids.push_back(v >= 32 && v <= 126 ? kCharBase + (v - 32) : kUnknown);
            }
        }
        if (static_cast<int>(ids.size()) >= max_len) break;
    }
    if (ids.size() == 1) throw InputError("caption is empty after tokenization");
    if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<size_t>(max_len));
    return ids;
}

namespace {
constexpr int kParamsPerBlock = 13;
}

Param* DualEncoder::add_param(const std::string& name, Mat init) {
    storage_.emplace_back(name, std::move(init));
    params_.push_back(&storage_.back());
    return &storage_.back();
}

DualEncoder::DualEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)), tokenizer_(cfg_.text_vocab) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const double s = 0.02;
    const int din = cfg_.patch_size * cfg_.patch_size * 3;

    auto build_tower = [&](const std::string& prefix, const TowerConfig& tc, Tower& tower) {
        const int w = tc.width;
        for (int l = 0; l < tc.layers; ++l) {
            std::string p = prefix + ".block" + std::to_string(l) + ".";
            Mat ones(1, w);
            ones.fill(1.0);
            tower.blocks.push_back(add_param(p + "ln1_g", ones));
            tower.blocks.push_back(add_param(p + "ln1_b", Mat(1, w)));
            tower.blocks.push_back(add_param(p + "wq", Mat::randn(w, w, s, rng)));
            tower.blocks.push_back(add_param(p + "wk", Mat::randn(w, w, s, rng)));
            tower.blocks.push_back(add_param(p + "wv", Mat::randn(w, w, s, rng)));
            tower.blocks.push_back(add_param(p + "wo", Mat::randn(w, w, s, rng)));
            tower.blocks.push_back(add_param(p + "bo", Mat(1, w)));
            Mat ones2(1, w);
            ones2.fill(1.0);
            tower.blocks.push_back(add_param(p + "ln2_g", ones2));
            tower.blocks.push_back(add_param(p + "ln2_b", Mat(1, w)));
            tower.blocks.push_back(add_param(p + "w1", Mat::randn(w, 4 * w, s, rng)));
            tower.blocks.push_back(add_param(p + "b1", Mat(1, 4 * w)));
            tower.blocks.push_back(add_param(p + "w2", Mat::randn(4 * w, w, s, rng)));
            tower.blocks.push_back(add_param(p + "b2", Mat(1, w)));
        }
        Mat onesf(1, w);
        onesf.fill(1.0);
        tower.blocks.push_back(add_param(prefix + ".lnf_g", onesf));
        tower.blocks.push_back(add_param(prefix + ".lnf_b", Mat(1, w)));
    };

    patch_w_ = add_param("vision.patch_w", Mat::randn(din, cfg_.vision.width, s, rng));
    patch_b_ = add_param("vision.patch_b", Mat(1, cfg_.vision.width));
    vis_pos_ = add_param("vision.pos", Mat::randn(cfg_.max_patches, cfg_.vision.width, s, rng));
    vis_cls_ = add_param("vision.cls", Mat::randn(1, cfg_.vision.width, s, rng));
    build_tower("vision", cfg_.vision, vis_tower_);
    vis_proj_ = add_param("vision.proj", Mat::randn(cfg_.vision.width, cfg_.embed_dim, s, rng));

    tok_embed_ = add_param("text.tok_embed", Mat::randn(tokenizer_.vocab_size(), cfg_.text.width, s, rng));
    txt_pos_ = add_param("text.pos", Mat::randn(cfg_.max_text_len, cfg_.text.width, s, rng));
    build_tower("text", cfg_.text, txt_tower_);
    txt_proj_ = add_param("text.proj", Mat::randn(cfg_.text.width, cfg_.embed_dim, s, rng));

    Mat ls(1, 1);
    ls(0, 0) = std::log(1.0 / cfg_.temperature_init);
    logit_scale_param_ = add_param("logit_scale", ls);
    logit_scale_param_->t.needs_grad = cfg_.temperature_learnable;
}

Node DualEncoder::run_tower(Graph& g, Node x, const std::vector<uint8_t>& key_mask, const Tower& tower,
                            const TowerConfig& tc) {
    const int w = tc.width;
    const int dh = w / tc.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    size_t pi = 0;
    for (int l = 0; l < tc.layers; ++l) {
        Node ln1_g = g.use(*tower.blocks[pi + 0]);
        Node ln1_b = g.use(*tower.blocks[pi + 1]);
        Node wq = g.use(*tower.blocks[pi + 2]);
        Node wk = g.use(*tower.blocks[pi + 3]);
        Node wv = g.use(*tower.blocks[pi + 4]);
        Node wo = g.use(*tower.blocks[pi + 5]);
        Node bo = g.use(*tower.blocks[pi + 6]);
        Node ln2_g = g.use(*tower.blocks[pi + 7]);
        Node ln2_b = g.use(*tower.blocks[pi + 8]);
        Node w1 = g.use(*tower.blocks[pi + 9]);
        Node b1 = g.use(*tower.blocks[pi + 10]);
        Node w2 = g.use(*tower.blocks[pi + 11]);
        Node b2 = g.use(*tower.blocks[pi + 12]);
        pi += kParamsPerBlock;

        Node h = g.layer_norm(x, ln1_g, ln1_b);
        Node q = g.matmul(h, wq);
        Node k = g.matmul(h, wk);
        Node v = g.matmul(h, wv);
        std::vector<Node> head_outs;
        for (int head = 0; head < tc.heads; ++head) {
            Node qs = g.col_slice(q, head * dh, dh);
            Node ks = g.col_slice(k, head * dh, dh);
            Node vs = g.col_slice(v, head * dh, dh);
            Node att = g.scale(g.matmul_nt(qs, ks), scale);
            Node p = g.masked_softmax_rows(att, key_mask);
            head_outs.push_back(g.matmul(p, vs));
        }
        Node ctx = g.concat_cols(head_outs);
        Node attn = g.add_row(g.matmul(ctx, wo), bo);
        x = g.add(x, attn);

        Node h2 = g.layer_norm(x, ln2_g, ln2_b);
        Node mid = g.gelu(g.add_row(g.matmul(h2, w1), b1));
        Node mlp = g.add_row(g.matmul(mid, w2), b2);
        x = g.add(x, mlp);
    }
    Node lnf_g = g.use(*tower.blocks[pi + 0]);
    Node lnf_b = g.use(*tower.blocks[pi + 1]);
    return g.layer_norm(x, lnf_g, lnf_b);
}

Node DualEncoder::encode_images(Graph& g, const std::vector<ImageItem>& batch) {
    if (batch.empty()) throw InputError("empty image batch");
    const int din = cfg_.patch_size * cfg_.patch_size * 3;
    int kmax = 0;
    for (const auto& item : batch) {
        if (item.feats.cols != din) throw ShapeError("patch feature width does not match encoder patch size");
        if (item.feats.rows != static_cast<int>(item.indices.size()))
            throw ShapeError("feature rows differ from index count");
        kmax = std::max(kmax, item.feats.rows);
    }

    std::vector<Node> rows;
    rows.reserve(batch.size());
    for (const auto& item : batch) {
        const int k = item.feats.rows;
        Mat feats(kmax, din);
        for (int i = 0; i < k; ++i)
            std::copy(item.feats.row_ptr(i), item.feats.row_ptr(i) + din, feats.row_ptr(i));
        std::vector<int> idx(static_cast<size_t>(kmax), 0);
        for (int i = 0; i < k; ++i) {
            int t = item.indices[static_cast<size_t>(i)];
            if (t < 0 || t >= cfg_.max_patches)
                throw IntegrityError("patch index " + std::to_string(t) + " outside positional table");
            idx[static_cast<size_t>(i)] = t;
        }
        Node f = g.constant(std::move(feats));
        Node emb = g.add_row(g.matmul(f, g.use(*patch_w_)), g.use(*patch_b_));
        Node pos = g.gather_rows(g.use(*vis_pos_), idx);
        Node toks = g.add(emb, pos);
        std::array<Node, 2> seq_parts{g.use(*vis_cls_), toks};
        Node seq = g.concat_rows(seq_parts);

        std::vector<uint8_t> mask(static_cast<size_t>(kmax + 1), 0);
        for (int i = 0; i <= k; ++i) mask[static_cast<size_t>(i)] = 1;
        Node out = run_tower(g, seq, mask, vis_tower_, cfg_.vision);
        rows.push_back(g.gather_rows(out, {0}));
    }
    Node stacked = g.concat_rows(rows);
    Node emb = g.matmul(stacked, g.use(*vis_proj_));
    return g.l2_normalize_rows(emb);
}

Node DualEncoder::encode_texts(Graph& g, const std::vector<std::vector<int>>& token_rows) {
    if (token_rows.empty()) throw InputError("empty text batch");
    int lmax = 0;
    for (const auto& row : token_rows) {
        if (row.empty() || row.size() > static_cast<size_t>(cfg_.max_text_len))
            throw ShapeError("token row empty or beyond max length");
        lmax = std::max(lmax, static_cast<int>(row.size()));
    }
    std::vector<Node> rows;
    rows.reserve(token_rows.size());
    for (const auto& row : token_rows) {
        const int len = static_cast<int>(row.size());
        std::vector<int> ids(static_cast<size_t>(lmax), 0);
        std::vector<int> posi(static_cast<size_t>(lmax), 0);
        for (int i = 0; i < len; ++i) {
            ids[static_cast<size_t>(i)] = row[static_cast<size_t>(i)];
            posi[static_cast<size_t>(i)] = i;
        }
        Node emb = g.gather_rows(g.use(*tok_embed_), ids);
        Node pos = g.gather_rows(g.use(*txt_pos_), posi);
        Node seq = g.add(emb, pos);
        std::vector<uint8_t> mask(static_cast<size_t>(lmax), 0);
        for (int i = 0; i < len; ++i) mask[static_cast<size_t>(i)] = 1;
        Node out = run_tower(g, seq, mask, txt_tower_, cfg_.text);
        rows.push_back(g.gather_rows(out, {0}));
    }
    Node stacked = g.concat_rows(rows);
    Node emb = g.matmul(stacked, g.use(*txt_proj_));
    return g.l2_normalize_rows(emb);
}

Node DualEncoder::logit_scale(Graph& g) { return g.exp_scalar_clamped(g.use(*logit_scale_param_), 100.0); }

double DualEncoder::temperature() const { return std::exp(-logit_scale_param_->t.val(0, 0)); }

std::vector<double> DualEncoder::embed_image(const ImageItem& item) {
    Graph g;
    Node out = encode_images(g, {item});
    return {out->val.row_ptr(0), out->val.row_ptr(0) + cfg_.embed_dim};
}

std::vector<double> DualEncoder::embed_text(const std::string& caption) {
    Graph g;
    Node out = encode_texts(g, {tokenizer_.encode(caption, cfg_.max_text_len)});
    return {out->val.row_ptr(0), out->val.row_ptr(0) + cfg_.embed_dim};
}

std::vector<Param*> DualEncoder::params() {
    std::vector<Param*> out;
    for (Param* p : params_)
        if (p->t.needs_grad) out.push_back(p);
    return out;
}

DualEncoder::ImageItem DualEncoder::make_image_item(const Image& image, const GridSpec& grid,
                                                    std::vector<int> retained) const {
    if (grid.patch != cfg_.patch_size)
        throw ConfigError("grid patch size " + std::to_string(grid.patch) + " differs from encoder patch size " +
                          std::to_string(cfg_.patch_size));
    const int m = grid.patches();
    std::sort(retained.begin(), retained.end());
    retained.erase(std::unique(retained.begin(), retained.end()), retained.end());
    for (int t : retained)
        if (t < 0 || t >= m) throw IntegrityError("retained index " + std::to_string(t) + " out of range");
    if (retained.empty()) throw IntegrityError("retained set is empty");
    if (grid.cols * grid.patch != image.width || grid.rows * grid.patch != image.height)
        throw IntegrityError("grid does not match image dimensions");

    const int din = cfg_.patch_size * cfg_.patch_size * 3;
    ImageItem item;
    item.indices = retained;
    item.feats = Mat(static_cast<int>(retained.size()), din);
    for (size_t i = 0; i < retained.size(); ++i) {
        int t = retained[i];
        int r0 = (t / grid.cols) * grid.patch;
        int c0 = (t % grid.cols) * grid.patch;
        int o = 0;
        for (int y = r0; y < r0 + grid.patch; ++y)
            for (int x = c0; x < c0 + grid.patch; ++x)
                for (int c = 0; c < 3; ++c) item.feats(static_cast<int>(i), o++) = image.at(x, y, c) / 127.5 - 1.0;
    }
    return item;
}

uint64_t DualEncoder::attention_flops(int seq_len, int width, int layers) {
    // per block: qkv/output projections + score and context matmuls + 4x MLP
    uint64_t s = static_cast<uint64_t>(seq_len);
    uint64_t w = static_cast<uint64_t>(width);
    return static_cast<uint64_t>(layers) * (24 * s * w * w + 4 * s * s * w);
}

namespace {
constexpr uint32_t kCkptMagic = 0x4B434754;  // "TGCK"
void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
}  // namespace

void DualEncoder::save(const std::string& path, const std::string& meta_json) const {
    std::string out;
    put_u32(out, kCkptMagic);
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(params_.size()));
    for (const Param* p : params_) {
        put_u32(out, static_cast<uint32_t>(p->name.size()));
        out.append(p->name);
        put_u32(out, static_cast<uint32_t>(p->t.val.rows));
        put_u32(out, static_cast<uint32_t>(p->t.val.cols));
        for (double d : p->t.val.a) {
            float f = static_cast<float>(d);
            out.append(reinterpret_cast<const char*>(&f), 4);
        }
    }
    write_file_atomic(path, out);
    write_file_atomic(path + ".meta.json", meta_json);
}

DualEncoder DualEncoder::load(const std::string& path) {
    json meta = json::parse(read_file(path + ".meta.json"));
    EncoderConfig cfg;
    const auto& e = meta.at("encoder");
    cfg.embed_dim = e.at("embed_dim").get<int>();
    cfg.vision = {e.at("vision_layers").get<int>(), e.at("vision_width").get<int>(), e.at("vision_heads").get<int>()};
    cfg.text = {e.at("text_layers").get<int>(), e.at("text_width").get<int>(), e.at("text_heads").get<int>()};
    cfg.patch_size = e.at("patch_size").get<int>();
    cfg.max_patches = e.at("max_patches").get<int>();
    cfg.max_text_len = e.at("max_text_len").get<int>();
    cfg.text_vocab = e.at("text_vocab").get<std::vector<std::string>>();
    cfg.temperature_init = e.at("temperature_init").get<double>();
    cfg.temperature_learnable = e.at("temperature_learnable").get<bool>();
    cfg.seed = e.at("seed").get<uint64_t>();

    DualEncoder model(cfg);
    std::string buf = read_file(path);
    size_t off = 0;
    auto u32 = [&]() {
        if (off + 4 > buf.size()) throw ParseError("truncated checkpoint: " + path);
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    };
    if (u32() != kCkptMagic) throw ParseError("not a checkpoint file: " + path);
    if (u32() != 1) throw ParseError("unsupported checkpoint version");
    uint32_t count = u32();
    if (count != model.params_.size()) throw IntegrityError("checkpoint parameter count mismatch");
    for (Param* p : model.params_) {
        uint32_t nlen = u32();
        if (off + nlen > buf.size()) throw ParseError("truncated checkpoint name");
        std::string name = buf.substr(off, nlen);
        off += nlen;
        if (name != p->name) throw IntegrityError("checkpoint parameter order mismatch at " + name);
        uint32_t r = u32(), c = u32();
        if (static_cast<int>(r) != p->t.val.rows || static_cast<int>(c) != p->t.val.cols)
            throw IntegrityError("checkpoint shape mismatch at " + name);
        for (size_t i = 0; i < p->t.val.size(); ++i) {
            float f;
            if (off + 4 > buf.size()) throw ParseError("truncated checkpoint payload");
            std::memcpy(&f, buf.data() + off, 4);
            off += 4;
            p->t.val.a[i] = f;
        }
    }
    return model;
}

std::string DualEncoder::meta(const std::string& path) { return read_file(path + ".meta.json"); }

LossReport itc_loss(const nn::Mat& img_embs, const nn::Mat& txt_embs, double tau) {
    if (tau <= 0.0) throw ConfigError("temperature must be positive");
    if (img_embs.rows != txt_embs.rows || img_embs.cols != txt_embs.cols)
        throw ShapeError("embedding matrices must share shape");
    Graph g;
    Node a = g.leaf(img_embs);
    Node b = g.leaf(txt_embs);
    Node logits = g.scale(g.matmul_nt(a, b), 1.0 / tau);
    auto rep = g.itc_from_logits(logits);
    LossReport out;
    out.loss = rep.loss->val(0, 0);
    out.p_i2t = std::move(rep.p_i2t);
    out.p_t2i = std::move(rep.p_t2i);
    return out;
}

}  // namespace tokgov
