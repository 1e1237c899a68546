#include "tokgov/governor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace tokgov {

SelectionStrategy parse_strategy(const std::string& name) {
    if (name == "topk") return SelectionStrategy::topk;
    if (name == "uniform") return SelectionStrategy::uniform;
    if (name == "stratified") return SelectionStrategy::stratified;
    if (name == "mix") return SelectionStrategy::mix;
    if (name == "cluster") return SelectionStrategy::cluster;
    throw ConfigError("unknown selection strategy: " + name);
}

const char* to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::topk: return "topk";
        case SelectionStrategy::uniform: return "uniform";
        case SelectionStrategy::stratified: return "stratified";
        case SelectionStrategy::mix: return "mix";
        case SelectionStrategy::cluster: return "cluster";
    }
    return "topk";
}

int retained_count(double r, int m) {
    if (r <= 0.0 || r > 1.0) throw ConfigError("retention ratio must be in (0, 1]");
    int k = static_cast<int>(std::ceil(r * m));
    return std::max(1, std::min(k, m));
}

PatchScores score_patches(const TokenSet& tokens, const AttentionProjection& proj) {
    const int m = tokens.tokens.rows;
    const int d_tok = tokens.tokens.cols;
    if (static_cast<int>(tokens.cls.size()) != d_tok)
        throw ShapeError("summary token width differs from patch token width");
    if (proj.wq.rows != d_tok || proj.wk.rows != d_tok || proj.wq.cols != proj.d_k || proj.wk.cols != proj.d_k)
        throw ShapeError("projection shapes inconsistent with token width");
    for (double v : tokens.cls)
        if (!std::isfinite(v)) throw NumericError("non-finite summary token");
    for (double v : tokens.tokens.a)
        if (!std::isfinite(v)) throw NumericError("non-finite patch token");

    std::vector<double> q(static_cast<size_t>(proj.d_k), 0.0);
    for (int j = 0; j < proj.d_k; ++j)
        for (int i = 0; i < d_tok; ++i) q[static_cast<size_t>(j)] += tokens.cls[static_cast<size_t>(i)] * proj.wq(i, j);

    PatchScores out;
    out.s.resize(static_cast<size_t>(m));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(proj.d_k));
    for (int t = 0; t < m; ++t) {
        double acc = 0.0;
        for (int j = 0; j < proj.d_k; ++j) {
            double kj = 0.0;
            for (int i = 0; i < d_tok; ++i) kj += tokens.tokens(t, i) * proj.wk(i, j);
            acc += q[static_cast<size_t>(j)] * kj;
        }
        out.s[static_cast<size_t>(t)] = acc * inv_sqrt;
    }
    return out;
}

PatchScores score_patches(const TokenSet& tokens, const std::vector<AttentionProjection>& projections) {
    if (projections.empty()) throw ConfigError("no attention projections supplied");
    PatchScores mean;
    mean.s.assign(static_cast<size_t>(tokens.tokens.rows), 0.0);
    for (const auto& p : projections) {
        PatchScores one = score_patches(tokens, p);
        for (size_t t = 0; t < mean.s.size(); ++t) mean.s[t] += one.s[t];
    }
    for (auto& v : mean.s) v /= static_cast<double>(projections.size());
    return mean;
}

namespace {

// indices ordered best-first: higher score wins, lower index breaks ties
std::vector<int> by_score_desc(const std::vector<double>& s) {
    std::vector<int> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (s[static_cast<size_t>(a)] != s[static_cast<size_t>(b)]) return s[static_cast<size_t>(a)] > s[static_cast<size_t>(b)];
        return a < b;
    });
    return idx;
}

std::vector<int> select_topk(const std::vector<double>& s, int k) {
    auto order = by_score_desc(s);
    order.resize(static_cast<size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<int> select_stratified(const std::vector<double>& s, int k, int q) {
    const int m = static_cast<int>(s.size());
    q = std::max(1, std::min(q, m));
    auto order = by_score_desc(s);
    // contiguous score-quantile strata over the sorted order, best stratum first
    std::vector<std::vector<int>> strata(static_cast<size_t>(q));
    for (int i = 0; i < m; ++i) {
        int stratum = static_cast<int>(static_cast<long long>(i) * q / m);
        strata[static_cast<size_t>(stratum)].push_back(order[static_cast<size_t>(i)]);
    }
    int quota = (k + q - 1) / q;
    std::vector<int> chosen;
    std::set<int> used;
    for (const auto& st : strata) {
        for (int i = 0; i < static_cast<int>(st.size()) && i < quota && static_cast<int>(chosen.size()) < k; ++i) {
            chosen.push_back(st[static_cast<size_t>(i)]);
            used.insert(st[static_cast<size_t>(i)]);
        }
        if (static_cast<int>(chosen.size()) >= k) break;
    }
    // uneven strata can leave a shortfall; fill with the best unchosen
    for (int i : order) {
        if (static_cast<int>(chosen.size()) >= k) break;
        if (!used.count(i)) chosen.push_back(i);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

std::vector<int> select_cluster(const nn::Mat& tokens, int k, uint64_t seed) {
    auto km = nn::kmeans(tokens, k, 50, seed);
    std::vector<int> chosen;
    std::set<int> used;
    for (int c = 0; c < km.centroids.rows; ++c) {
        int best = -1;
        double bd = 0.0;
        for (int t = 0; t < tokens.rows; ++t) {
            if (used.count(t)) continue;
            double d2 = 0.0;
            for (int j = 0; j < tokens.cols; ++j) {
                double diff = tokens(t, j) - km.centroids(c, j);
                d2 += diff * diff;
            }
            if (best < 0 || d2 < bd) {
                best = t;
                bd = d2;
            }
        }
        if (best >= 0) {
            chosen.push_back(best);
            used.insert(best);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace

std::vector<int> select_patches(const PatchScores& scores, const SelectionConfig& cfg, const nn::Mat* tokens) {
    const int m = static_cast<int>(scores.s.size());
    if (m == 0) throw ShapeError("cannot select from an empty score vector");
    const int k = retained_count(cfg.r, m);

    switch (cfg.strategy) {
        case SelectionStrategy::topk:
            return select_topk(scores.s, k);
        case SelectionStrategy::uniform: {
            Rng rng(cfg.seed);
            return rng.sample_without_replacement(m, k);
        }
        case SelectionStrategy::stratified:
            return select_stratified(scores.s, k, cfg.strata);
        case SelectionStrategy::mix: {
            int k_top = k / 2;
            auto top = select_topk(scores.s, k_top);
            std::set<int> used(top.begin(), top.end());
            std::vector<int> rest;
            for (int i = 0; i < m; ++i)
                if (!used.count(i)) rest.push_back(i);
            Rng rng(cfg.seed);
            auto pick = rng.sample_without_replacement(static_cast<int>(rest.size()), k - k_top);
            for (int p : pick) top.push_back(rest[static_cast<size_t>(p)]);
            std::sort(top.begin(), top.end());
            return top;
        }
        case SelectionStrategy::cluster: {
            if (tokens == nullptr) throw ConfigError("cluster selection requires backbone patch tokens");
            if (tokens->rows != m) throw ShapeError("token count differs from score count");
            return select_cluster(*tokens, k, cfg.seed);
        }
    }
    throw ConfigError("unhandled selection strategy");
}

ClassProbabilities predict_classes(const std::vector<double>& cls, const VisionBackbone& backbone) {
    ClassProbabilities p = backbone.class_head(cls);
    for (double v : p.p)
        if (!(v >= 0.0 && v <= 1.0)) throw NumericError("class probability outside [0, 1]");
    return p;
}

VisualEvidence extract_evidence(const ClassProbabilities& p, double epsilon) {
    if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("evidence threshold must be in [0, 1]");
    std::vector<int> idx;
    for (int j = 0; j < static_cast<int>(p.p.size()); ++j)
        if (p.p[static_cast<size_t>(j)] > epsilon) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (p.p[static_cast<size_t>(a)] != p.p[static_cast<size_t>(b)]) return p.p[static_cast<size_t>(a)] > p.p[static_cast<size_t>(b)];
        return a < b;
    });
    VisualEvidence out;
    for (int j : idx) out.items.push_back({p.vocabulary[static_cast<size_t>(j)], p.p[static_cast<size_t>(j)]});
    return out;
}

GovernedRecord govern_image(const RawRecord& sample, const Image& image, int patch_size,
                            const VisionBackbone& backbone, const SelectionConfig& sel, double epsilon,
                            bool keep_scores) {
    ImageGrid grid = patchify(image, patch_size);
    TokenSet tokens = backbone.embed(grid);
    PatchScores scores = score_patches(tokens, backbone.projections());
    const nn::Mat* tok_ptr = sel.strategy == SelectionStrategy::cluster ? &tokens.tokens : nullptr;
    std::vector<int> retained = select_patches(scores, sel, tok_ptr);
    ClassProbabilities probs = predict_classes(tokens.cls, backbone);
    VisualEvidence evidence = extract_evidence(probs, epsilon);

    GovernedRecord out;
    out.id = sample.id;
    out.image = sample.image;
    out.grid = GridSpec{grid.rows, grid.cols, grid.patch};
    out.retained = std::move(retained);
    if (keep_scores) out.scores = scores.s;
    out.caption_in = sample.caption;
    out.caption_out = sample.caption;
    out.evidence = std::move(evidence.items);
    out.label = sample.label;
    return out;
}

}  // namespace tokgov
