#include "tokgov/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace tokgov {

using nn::Graph;
using nn::Mat;
using nn::Node;

void TrainConfig::validate() const {
    if (batch < 1) throw ConfigError("batch size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (base_lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (warmup_epochs < 0) throw ConfigError("warmup epochs must be non-negative");
    if (schedule != "cosine") throw ConfigError("unknown schedule: " + schedule);
    if (full_patch_fraction < 0.0 || full_patch_fraction > 0.2)
        throw ConfigError("full_patch_fraction must lie in [0, 0.2]");
}

std::vector<TrainSample> load_train_samples(const Manifest& manifest, const DualEncoder& model) {
    if (manifest.count() == 0) throw InputError("manifest is empty");
    const auto& cfg = model.config();
    std::vector<TrainSample> out;
    out.reserve(manifest.count());
    for (size_t i = 0; i < manifest.count(); ++i) {
        Image img = read_ppm(manifest.image_path(i));
        GridSpec grid;
        std::vector<int> retained;
        if (manifest.kind == ManifestKind::governed) {
            const auto& g = manifest.governed[i];
            grid = g.grid;
            retained = g.retained;
        } else {
            grid.patch = cfg.patch_size;
            if (img.width % grid.patch != 0 || img.height % grid.patch != 0)
                throw ShapeError("image not divisible by encoder patch size");
            grid.rows = img.height / grid.patch;
            grid.cols = img.width / grid.patch;
            retained.resize(static_cast<size_t>(grid.patches()));
            std::iota(retained.begin(), retained.end(), 0);
        }
        const int m = grid.patches();
        if (m > cfg.max_patches) throw ConfigError("grid exceeds encoder max_patches");

        TrainSample s;
        s.m = m;
        s.retained = std::move(retained);
        std::vector<int> all(static_cast<size_t>(m));
        std::iota(all.begin(), all.end(), 0);
        s.all_feats = model.make_image_item(img, grid, all).feats;
        s.tokens = model.tokenizer().encode(manifest.records[i].caption, cfg.max_text_len);
        out.push_back(std::move(s));
    }
    return out;
}

uint64_t batch_token_cost(const std::vector<const TrainSample*>& batch, bool full_patch) {
    uint64_t total = 0;
    for (const TrainSample* s : batch) {
        uint64_t k = full_patch ? static_cast<uint64_t>(s->m) : s->retained.size();
        total += k + 1 + s->tokens.size();
    }
    return total;
}

namespace {

double lr_at(const TrainConfig& cfg, int step, int total_steps, int warmup_steps) {
    if (warmup_steps > 0 && step < warmup_steps)
        return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    int decay_steps = std::max(1, total_steps - warmup_steps);
    double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps);
    progress = std::clamp(progress, 0.0, 1.0);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

DualEncoder::ImageItem as_item(const TrainSample& s, bool full_patch, int patch_dim) {
    DualEncoder::ImageItem item;
    if (full_patch) {
        item.indices.resize(static_cast<size_t>(s.m));
        std::iota(item.indices.begin(), item.indices.end(), 0);
        item.feats = s.all_feats;
    } else {
        item.indices = s.retained;
        item.feats = Mat(static_cast<int>(s.retained.size()), patch_dim);
        for (size_t i = 0; i < s.retained.size(); ++i)
            std::copy(s.all_feats.row_ptr(s.retained[i]), s.all_feats.row_ptr(s.retained[i]) + patch_dim,
                      item.feats.row_ptr(static_cast<int>(i)));
    }
    return item;
}

}  // namespace

TrainResult train(DualEncoder& model, const std::vector<TrainSample>& data, const TrainConfig& cfg,
                  const std::function<void(const StepRecord&)>& on_step) {
    cfg.validate();
    if (data.empty()) throw InputError("no training samples");
    const int n = static_cast<int>(data.size());
    const int b = std::min(cfg.batch, n);
    const int steps_per_epoch = std::max(1, n / b);
    const int total_steps = steps_per_epoch * cfg.epochs;
    const int warmup_steps = std::min(total_steps, cfg.warmup_epochs * steps_per_epoch);
    const int full_patch_steps = static_cast<int>(std::ceil(cfg.full_patch_fraction * total_steps));
    const int patch_dim = model.config().patch_size * model.config().patch_size * 3;

    auto params = model.params();
    nn::AdamW opt;
    TrainResult res;
    uint64_t tokens_cum = 0;
    int step = 0;

    for (int epoch = 0; epoch < cfg.epochs && step < total_steps; ++epoch) {
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(fold_seed(cfg.seed, "epoch" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        for (int bi = 0; bi < steps_per_epoch && step < total_steps; ++bi) {
            bool full_patch = step >= total_steps - full_patch_steps;
            std::vector<const TrainSample*> batch;
            batch.reserve(static_cast<size_t>(b));
            for (int j = 0; j < b; ++j) batch.push_back(&data[static_cast<size_t>(order[static_cast<size_t>(bi * b + j)])]);

            uint64_t step_tokens = batch_token_cost(batch, full_patch);
            if (cfg.token_budget > 0 && tokens_cum + step_tokens > cfg.token_budget) {
                res.total_tokens = tokens_cum;
                res.steps = step;
                return res;
            }

            Graph g;
            std::vector<DualEncoder::ImageItem> items;
            std::vector<std::vector<int>> token_rows;
            items.reserve(batch.size());
            token_rows.reserve(batch.size());
            for (const TrainSample* s : batch) {
                items.push_back(as_item(*s, full_patch, patch_dim));
                token_rows.push_back(s->tokens);
            }
            Node img = model.encode_images(g, items);
            Node txt = model.encode_texts(g, token_rows);
            Node logits = g.mul_scalar_node(g.matmul_nt(img, txt), model.logit_scale(g));
            auto rep = g.itc_from_logits(logits);

            opt.zero_grad(params);
            g.backward(rep.loss);
            nn::clip_grad_norm(params, 1.0);
            double lr = lr_at(cfg, step, total_steps, warmup_steps);
            opt.step(params, lr, cfg.weight_decay);

            tokens_cum += step_tokens;
            ++step;
            StepRecord rec{step, rep.loss->val(0, 0), lr, tokens_cum, full_patch};
            res.log.push_back(rec);
            if (on_step) on_step(rec);
        }
    }
    res.total_tokens = tokens_cum;
    res.steps = step;
    return res;
}

std::string write_train_log(const TrainResult& result, const std::string& path) {
    std::ostringstream out;
    out << "step,loss,lr,tokens_cum,full_patch_flag\n";
    for (const auto& r : result.log) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.8f,%llu,%d\n", r.step, r.loss, r.lr,
                      static_cast<unsigned long long>(r.tokens_cum), r.full_patch ? 1 : 0);
        out << buf;
    }
    std::string bytes = out.str();
    write_file_atomic(path, bytes);
    return digest_string(bytes);
}

}  // namespace tokgov
