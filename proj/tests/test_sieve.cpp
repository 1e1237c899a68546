#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "test_helpers.hpp"
#include "tokgov/governor.hpp"
#include "tokgov/sieve.hpp"
#include "tokgov/synthetic.hpp"

using namespace tokgov;
using tokgov::testing::TempDir;

namespace {

// fixed in-memory embedder over explicit vectors
struct FixedEmbedder : SampleEmbedder {
    std::vector<std::vector<double>> images;
    std::vector<std::vector<double>> texts;
    const Manifest* manifest = nullptr;

    std::vector<double> embed_image(const Manifest&, size_t index) const override { return images[index]; }
    std::vector<double> embed_text(const std::string& caption) const override {
        for (size_t i = 0; i < manifest->count(); ++i)
            if (manifest->records[i].caption == caption) return texts[i];
        return texts[0];
    }
};

Manifest tiny_manifest(int n) {
    Manifest m;
    m.kind = ManifestKind::raw;
    for (int i = 0; i < n; ++i) {
        char id[8];
        std::snprintf(id, sizeof(id), "s%03d", i);
        m.records.push_back({id, "", "caption " + std::string(id), ""});
    }
    return m;
}

}  // namespace

TEST_CASE("sieve: keep fraction one is the identity") {
    Manifest m = tiny_manifest(6);
    SieveConfig cfg;
    cfg.method = SieveMethod::random;
    cfg.keep_fraction = 1.0;
    cfg.seed = 4;
    Manifest out = sieve(m, nullptr, cfg);
    CHECK(out.count() == 6);
    for (size_t i = 0; i < 6; ++i) CHECK(out.records[i].id == m.records[i].id);
    CHECK(out.kind == ManifestKind::sieved);
}

TEST_CASE("clip_score keeps the top pairs by cosine, ties by id") {
    Manifest m = tiny_manifest(4);
    FixedEmbedder emb;
    emb.manifest = &m;
    // cosine similarities 0.9, 0.2, 0.5, 0.6 against aligned axes
    emb.images = {{1, 0}, {1, 0}, {1, 0}, {1, 0}};
    auto vec_at = [](double cosv) {
        return std::vector<double>{cosv, std::sqrt(1.0 - cosv * cosv)};
    };
    emb.texts = {vec_at(0.9), vec_at(0.2), vec_at(0.5), vec_at(0.6)};
    SieveConfig cfg;
    cfg.method = SieveMethod::clip_score;
    cfg.keep_fraction = 0.5;
    Manifest out = sieve(m, &emb, cfg);
    REQUIRE(out.count() == 2);
    CHECK(out.records[0].id == "s000");
    CHECK(out.records[1].id == "s003");
}

TEST_CASE("cluster sieve keeps one per well-separated pair") {
    Manifest m = tiny_manifest(4);
    FixedEmbedder emb;
    emb.manifest = &m;
    emb.images = {{0.0, 0.0}, {0.1, 0.0}, {10.0, 0.0}, {10.1, 0.0}};
    emb.texts = emb.images;
    SieveConfig cfg;
    cfg.method = SieveMethod::cluster;
    cfg.keep_fraction = 0.5;
    cfg.clusters = 2;
    cfg.seed = 9;
    Manifest out = sieve(m, &emb, cfg);
    REQUIRE(out.count() == 2);
    std::set<std::string> kept;
    for (const auto& r : out.records) kept.insert(r.id);
    bool one_left = kept.count("s000") + kept.count("s001") == 1;
    bool one_right = kept.count("s002") + kept.count("s003") == 1;
    CHECK(one_left);
    CHECK(one_right);
}

TEST_CASE("cluster and clip_score demand an embedder") {
    Manifest m = tiny_manifest(4);
    SieveConfig cfg;
    cfg.method = SieveMethod::cluster;
    CHECK_THROWS_AS(sieve(m, nullptr, cfg), ConfigError);
    cfg.method = SieveMethod::clip_score;
    CHECK_THROWS_AS(sieve(m, nullptr, cfg), ConfigError);
}

TEST_CASE("sieve sizes, id subset and ordering hold for every method") {
    Manifest m = tiny_manifest(11);
    FixedEmbedder emb;
    emb.manifest = &m;
    Rng rng(17);
    for (int i = 0; i < 11; ++i) {
        emb.images.push_back({rng.normal(), rng.normal(), rng.normal()});
        emb.texts.push_back({rng.normal(), rng.normal(), rng.normal()});
    }
    std::set<std::string> ids;
    for (const auto& r : m.records) ids.insert(r.id);

    for (auto method : {SieveMethod::random, SieveMethod::cluster, SieveMethod::clip_score}) {
        for (double f : {0.3, 0.5, 0.8}) {
            SieveConfig cfg;
            cfg.method = method;
            cfg.keep_fraction = f;
            cfg.clusters = 3;
            cfg.seed = 21;
            Manifest out = sieve(m, &emb, cfg);
            CHECK(static_cast<int>(out.count()) == kept_count(f, 11));
            std::vector<std::string> got;
            for (const auto& r : out.records) {
                CHECK(ids.count(r.id) == 1);
                got.push_back(r.id);
            }
            CHECK(std::is_sorted(got.begin(), got.end()));
            // determinism under the seed
            Manifest again = sieve(m, &emb, cfg);
            REQUIRE(again.count() == out.count());
            for (size_t i = 0; i < out.count(); ++i) CHECK(again.records[i].id == out.records[i].id);
        }
    }
}

TEST_CASE("clip_score keep-set dominates every equal-size subset in total similarity") {
    const int n = 8;
    Manifest m = tiny_manifest(n);
    FixedEmbedder emb;
    emb.manifest = &m;
    Rng rng(23);
    std::vector<double> sims(n);
    for (int i = 0; i < n; ++i) {
        double c = rng.uniform(-0.9, 0.9);
        sims[static_cast<size_t>(i)] = c;
        emb.images.push_back({1, 0});
        emb.texts.push_back({c, std::sqrt(1.0 - c * c)});
    }
    SieveConfig cfg;
    cfg.method = SieveMethod::clip_score;
    cfg.keep_fraction = 0.5;
    Manifest out = sieve(m, &emb, cfg);
    const int k = kept_count(0.5, n);
    double kept_sum = 0.0;
    for (const auto& r : out.records) {
        int idx = std::stoi(r.id.substr(1));
        kept_sum += sims[static_cast<size_t>(idx)];
    }
    for (int mask = 0; mask < (1 << n); ++mask) {
        if (__builtin_popcount(static_cast<unsigned>(mask)) != k) continue;
        double sum = 0.0;
        for (int i = 0; i < n; ++i)
            if (mask & (1 << i)) sum += sims[static_cast<size_t>(i)];
        CHECK(kept_sum >= sum - 1e-12);
    }
}

TEST_CASE("near-centroid keeping is available behind the flag") {
    Manifest m = tiny_manifest(6);
    FixedEmbedder emb;
    emb.manifest = &m;
    // one tight cluster of 5 and a single far outlier
    emb.images = {{0, 0}, {0.1, 0}, {0.2, 0}, {0.05, 0.1}, {0.15, 0.1}, {50, 0}};
    emb.texts = emb.images;
    SieveConfig far_cfg;
    far_cfg.method = SieveMethod::cluster;
    far_cfg.keep_fraction = 0.34;  // keep 3 of 6, quota 2 per cluster
    far_cfg.clusters = 2;
    far_cfg.seed = 3;
    far_cfg.far_from_centroid = true;
    Manifest far_out = sieve(m, &emb, far_cfg);

    SieveConfig near_cfg = far_cfg;
    near_cfg.far_from_centroid = false;
    Manifest near_out = sieve(m, &emb, near_cfg);
    CHECK(far_out.count() == near_out.count());
}

TEST_CASE("uniform token baseline: seeded determinism and empirical frequency") {
    PatchScores s{{0, 0, 0, 0, 0, 0, 0, 0}};
    SelectionConfig cfg{SelectionStrategy::uniform, 0.5, 2, 33};
    auto first = select_patches(s, cfg);
    CHECK(select_patches(s, cfg) == first);

    std::vector<int> hits(8, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        cfg.seed = static_cast<uint64_t>(i) * 2654435761u + 17;
        for (int idx : select_patches(s, cfg)) hits[static_cast<size_t>(idx)]++;
    }
    for (int h : hits) {
        double freq = static_cast<double>(h) / draws;
        CHECK(freq == doctest::Approx(0.5).epsilon(0.1));  // 0.5 +/- 0.05
    }
}

TEST_CASE("write_sieved emits the manifest plus a method sidecar") {
    TempDir tmp("sieved");
    SyntheticSpec spec;
    spec.n = 6;
    spec.rows = 4;
    spec.cols = 4;
    spec.patch_size = 2;
    spec.vocab = {"red square", "blue circle"};
    spec.signal_min = 2;
    spec.signal_max = 3;
    spec.seed = 2;
    Manifest raw = generate_synthetic(spec, tmp.str("c"));
    SieveConfig cfg;
    cfg.method = SieveMethod::random;
    cfg.keep_fraction = 0.5;
    cfg.seed = 8;
    Manifest out = sieve(raw, nullptr, cfg);
    write_sieved(out, cfg, tmp.str("c/sieved.manifest"));

    Manifest back = load_manifest(tmp.str("c/sieved.manifest"));
    CHECK(back.kind == ManifestKind::sieved);
    CHECK(back.count() == 3);
    std::string side = read_file(tmp.str("c/sieved.manifest") + ".sieve.json");
    CHECK(side.find("\"method\": \"random\"") != std::string::npos);
}
