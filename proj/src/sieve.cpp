#include "tokgov/sieve.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "tokgov/backbone.hpp"
#include "tokgov/synthetic.hpp"

namespace tokgov {

using nn::Mat;

ClassCodeEmbedder::ClassCodeEmbedder(std::vector<std::string> vocabulary) : vocab_(std::move(vocabulary)) {
    if (vocab_.empty()) throw ConfigError("class-code embedder needs a vocabulary");
    codes_.resize(vocab_.size());
    for (size_t j = 0; j < vocab_.size(); ++j) {
        uint8_t rgb[3];
        class_color(static_cast<int>(j), static_cast<int>(vocab_.size()), rgb);
        codes_[j] = {static_cast<double>(rgb[0]), static_cast<double>(rgb[1]), static_cast<double>(rgb[2])};
    }
}

std::vector<double> ClassCodeEmbedder::embed_image(const Manifest& manifest, size_t index) const {
    Image img = read_ppm(manifest.image_path(index));
    // strongest class-code response over 4x4-pixel cells
    std::vector<double> out(vocab_.size(), 0.0);
    constexpr int cell = 4;
    constexpr double kSigma = 60.0;
    for (int y0 = 0; y0 + cell <= img.height; y0 += cell)
        for (int x0 = 0; x0 + cell <= img.width; x0 += cell) {
            double mean[3] = {0, 0, 0};
            for (int y = y0; y < y0 + cell; ++y)
                for (int x = x0; x < x0 + cell; ++x)
                    for (int c = 0; c < 3; ++c) mean[c] += img.at(x, y, c);
            for (double& v : mean) v /= cell * cell;
            for (size_t j = 0; j < vocab_.size(); ++j) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    double diff = mean[c] - codes_[j][static_cast<size_t>(c)];
                    d2 += diff * diff;
                }
                out[j] = std::max(out[j], std::exp(-d2 / (kSigma * kSigma)));
            }
        }
    return out;
}

std::vector<double> ClassCodeEmbedder::embed_text(const std::string& caption) const {
    std::string low = to_lower(caption);
    std::vector<double> out(vocab_.size(), 0.0);
    for (size_t j = 0; j < vocab_.size(); ++j)
        if (low.find(to_lower(vocab_[j])) != std::string::npos) out[j] = 1.0;
    return out;
}

SieveMethod parse_sieve_method(const std::string& name) {
    if (name == "random") return SieveMethod::random;
    if (name == "cluster") return SieveMethod::cluster;
    if (name == "clip_score") return SieveMethod::clip_score;
    throw ConfigError("unknown sieve method: " + name);
}

const char* to_string(SieveMethod m) {
    switch (m) {
        case SieveMethod::random: return "random";
        case SieveMethod::cluster: return "cluster";
        case SieveMethod::clip_score: return "clip_score";
    }
    return "random";
}

int kept_count(double keep_fraction, int n) {
    if (keep_fraction <= 0.0 || keep_fraction > 1.0) throw ConfigError("keep fraction must be in (0, 1]");
    return std::max(1, std::min(n, static_cast<int>(std::ceil(keep_fraction * n))));
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Manifest subset(const Manifest& src, const std::vector<int>& keep_sorted) {
    Manifest out;
    out.kind = ManifestKind::sieved;
    out.base_dir = src.base_dir;
    for (int i : keep_sorted) out.records.push_back(src.records[static_cast<size_t>(i)]);
    return out;
}

}  // namespace

Manifest sieve(const Manifest& manifest, const SampleEmbedder* embedder, const SieveConfig& cfg) {
    const int n = static_cast<int>(manifest.count());
    if (n == 0) throw InputError("cannot sieve an empty manifest");
    const int keep = kept_count(cfg.keep_fraction, n);

    std::vector<int> chosen;
    switch (cfg.method) {
        case SieveMethod::random: {
            Rng rng(cfg.seed);
            chosen = rng.sample_without_replacement(n, keep);
            break;
        }
        case SieveMethod::cluster: {
            if (embedder == nullptr) throw ConfigError("cluster sieve requires an embedder");
            std::vector<std::vector<double>> embs(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) embs[static_cast<size_t>(i)] = embedder->embed_image(manifest, static_cast<size_t>(i));
            const int d = static_cast<int>(embs[0].size());
            Mat points(n, d);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) points(i, j) = embs[static_cast<size_t>(i)][static_cast<size_t>(j)];
            const int c = std::max(1, std::min(cfg.clusters, n));
            auto km = nn::kmeans(points, c, 50, cfg.seed);

            const int quota = (keep + c - 1) / c;
            std::vector<std::vector<std::pair<double, int>>> by_cluster(static_cast<size_t>(c));
            for (int i = 0; i < n; ++i) {
                double d2 = 0.0;
                for (int j = 0; j < d; ++j) {
                    double diff = points(i, j) - km.centroids(km.assignment[static_cast<size_t>(i)], j);
                    d2 += diff * diff;
                }
                by_cluster[static_cast<size_t>(km.assignment[static_cast<size_t>(i)])].push_back({d2, i});
            }
            std::vector<int> picked;
            Rng rng(cfg.seed + 1);
            for (auto& members : by_cluster) {
                if (members.empty()) continue;
                if (cfg.far_from_centroid) {
                    // deduplication reading: centroid-proximal samples are the
                    // redundant ones, keep the farthest
                    std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                    });
                    for (int i = 0; i < quota && i < static_cast<int>(members.size()); ++i)
                        picked.push_back(members[static_cast<size_t>(i)].second);
                } else {
                    std::vector<int> ids;
                    for (auto& [dist, idx] : members) ids.push_back(idx);
                    std::sort(ids.begin(), ids.end());
                    auto take = rng.sample_without_replacement(static_cast<int>(ids.size()),
                                                               std::min<int>(quota, static_cast<int>(ids.size())));
                    for (int t : take) picked.push_back(ids[static_cast<size_t>(t)]);
                }
            }
            std::sort(picked.begin(), picked.end());
            // per-cluster quotas can overshoot ceil(f*N); truncate in id order
            if (static_cast<int>(picked.size()) > keep) picked.resize(static_cast<size_t>(keep));
            // and undershoot when clusters run dry; backfill in id order
            if (static_cast<int>(picked.size()) < keep) {
                std::set<int> used(picked.begin(), picked.end());
                for (int i = 0; i < n && static_cast<int>(picked.size()) < keep; ++i)
                    if (!used.count(i)) picked.push_back(i);
                std::sort(picked.begin(), picked.end());
            }
            chosen = std::move(picked);
            break;
        }
        case SieveMethod::clip_score: {
            if (embedder == nullptr) throw ConfigError("clip_score sieve requires an embedder");
            std::vector<std::pair<double, int>> scored(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                auto vi = embedder->embed_image(manifest, static_cast<size_t>(i));
                auto vt = embedder->embed_text(manifest.records[static_cast<size_t>(i)].caption);
                scored[static_cast<size_t>(i)] = {cosine(vi, vt), i};
            }
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;  // ties by id order
            });
            for (int i = 0; i < keep; ++i) chosen.push_back(scored[static_cast<size_t>(i)].second);
            std::sort(chosen.begin(), chosen.end());
            break;
        }
    }
    return subset(manifest, chosen);
}

std::string write_sieved(const Manifest& sieved, const SieveConfig& cfg, const std::string& out_path) {
    std::string digest = write_raw_manifest(sieved, out_path);
    nlohmann::json side;
    side["method"] = to_string(cfg.method);
    side["keep_fraction"] = cfg.keep_fraction;
    side["clusters"] = cfg.clusters;
    side["far_from_centroid"] = cfg.far_from_centroid;
    side["seed"] = cfg.seed;
    write_file_atomic(out_path + ".sieve.json", side.dump(2) + "\n");
    return digest;
}

}  // namespace tokgov
