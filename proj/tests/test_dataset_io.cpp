#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_helpers.hpp"
#include "tokgov/manifest.hpp"
#include "tokgov/synthetic.hpp"

using namespace tokgov;
using tokgov::testing::TempDir;

namespace {

SyntheticSpec small_spec(uint64_t seed = 1) {
    SyntheticSpec spec;
    spec.n = 4;
    spec.rows = 4;
    spec.cols = 4;
    spec.patch_size = 4;
    spec.vocab = {"red square", "blue circle"};
    spec.signal_min = 2;
    spec.signal_max = 4;
    spec.noise_level = 0.1;
    spec.seed = seed;
    return spec;
}

std::string corpus_digest(const std::string& dir) {
    Digest d;
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        d.update(std::filesystem::relative(f, dir).string());
        d.update(read_file(f));
    }
    return d.hex();
}

}  // namespace

TEST_CASE("load_manifest counts records and infers raw kind") {
    TempDir tmp("manifest_count");
    write_file(tmp.str("m.manifest"),
               "{\"id\":\"a\",\"image\":\"a.ppm\",\"caption\":\"one\"}\n"
               "{\"id\":\"b\",\"image\":\"b.ppm\",\"caption\":\"two\"}\n");
    Manifest m = load_manifest(tmp.str("m.manifest"));
    CHECK(m.count() == 2);
    CHECK(m.kind == ManifestKind::raw);
    CHECK(m.records[0].id == "a");
}

TEST_CASE("empty manifest loads with zero count") {
    TempDir tmp("manifest_empty");
    write_file(tmp.str("m.manifest"), "");
    Manifest m = load_manifest(tmp.str("m.manifest"));
    CHECK(m.count() == 0);
    CHECK(m.kind == ManifestKind::raw);
}

TEST_CASE("duplicate id raises IntegrityError") {
    TempDir tmp("manifest_dup");
    write_file(tmp.str("m.manifest"),
               "{\"id\":\"a\",\"image\":\"a.ppm\",\"caption\":\"one\"}\n"
               "{\"id\":\"a\",\"image\":\"b.ppm\",\"caption\":\"two\"}\n");
    CHECK_THROWS_AS(load_manifest(tmp.str("m.manifest")), IntegrityError);
}

TEST_CASE("missing file raises IOError, malformed line names its number") {
    CHECK_THROWS_AS(load_manifest("no_such_manifest_anywhere"), IOError);
    TempDir tmp("manifest_bad");
    write_file(tmp.str("m.manifest"), "{\"id\":\"a\",\"image\":\"a\",\"caption\":\"x\"}\nnot json\n");
    try {
        load_manifest(tmp.str("m.manifest"));
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("records are sorted by id on load") {
    TempDir tmp("manifest_sort");
    write_file(tmp.str("m.manifest"),
               "{\"id\":\"b\",\"image\":\"b.ppm\",\"caption\":\"two\"}\n"
               "{\"id\":\"a\",\"image\":\"a.ppm\",\"caption\":\"one\"}\n");
    Manifest m = load_manifest(tmp.str("m.manifest"));
    CHECK(m.records[0].id == "a");
    CHECK(m.records[1].id == "b");
}

TEST_CASE("write_governed is deterministic and echoes retained lists") {
    TempDir tmp("governed_write");
    Manifest m;
    m.kind = ManifestKind::raw;
    m.records = {{"a", "a.ppm", "cap a", ""}};
    GovernedRecord g;
    g.id = "a";
    g.image = "a.ppm";
    g.grid = {2, 2, 4};
    g.retained = {0, 3};
    g.caption_out = "cap a plus";
    g.caption_in = "cap a";
    g.evidence = {{"red square", 0.9}};
    std::string d1 = write_governed(m, {g}, tmp.str("g1.manifest"));
    std::string d2 = write_governed(m, {g}, tmp.str("g2.manifest"));
    CHECK(d1 == d2);
    std::string line = read_file(tmp.str("g1.manifest"));
    CHECK(line.find("\"retained\":[0,3]") != std::string::npos);
}

TEST_CASE("write_governed checks id coverage") {
    TempDir tmp("governed_missing");
    Manifest m;
    m.records = {{"a", "a.ppm", "x", ""}, {"b", "b.ppm", "y", ""}};
    GovernedRecord g;
    g.id = "a";
    g.grid = {1, 1, 4};
    g.retained = {0};
    g.caption_out = "x";
    g.caption_in = "x";
    CHECK_THROWS_AS(write_governed(m, {g}, tmp.str("g.manifest")), IntegrityError);
}

TEST_CASE("governed round-trip is bit-exact for ids, retained, captions, evidence") {
    TempDir tmp("governed_roundtrip");
    Manifest m;
    m.records = {{"a", "a.ppm", "in a", ""}, {"b", "b.ppm", "in b", ""}};
    std::vector<GovernedRecord> gs(2);
    gs[0] = {"a", "a.ppm", {2, 2, 4}, {0, 2}, {0.5, -0.25, 0.125, 3.0}, "out a", "in a",
             {{"red square", 0.875}, {"blue circle", 0.75}}, ""};
    gs[1] = {"b", "b.ppm", {2, 2, 4}, {1}, {}, "out b", "in b", {}, ""};
    write_governed(m, gs, tmp.str("g.manifest"));

    Manifest back = load_manifest(tmp.str("g.manifest"));
    REQUIRE(back.kind == ManifestKind::governed);
    REQUIRE(back.count() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(back.governed[i].id == gs[i].id);
        CHECK(back.governed[i].retained == gs[i].retained);
        CHECK(back.governed[i].scores == gs[i].scores);
        CHECK(back.governed[i].caption_out == gs[i].caption_out);
        CHECK(back.governed[i].caption_in == gs[i].caption_in);
        REQUIRE(back.governed[i].evidence.size() == gs[i].evidence.size());
        for (size_t j = 0; j < gs[i].evidence.size(); ++j) {
            CHECK(back.governed[i].evidence[j].name == gs[i].evidence[j].name);
            CHECK(back.governed[i].evidence[j].confidence == gs[i].evidence[j].confidence);
        }
    }

    // second write reproduces the byte stream
    std::string d1 = digest_file(tmp.str("g.manifest"));
    std::string d2 = write_governed(back, back.governed, tmp.str("g_again.manifest"));
    CHECK(d1 == d2);
}

TEST_CASE("synthetic generator: captions carry class words, determinism, corruption") {
    TempDir tmp("synth");
    SyntheticSpec spec = small_spec();
    Manifest m = generate_synthetic(spec, tmp.str("c1"));
    CHECK(m.count() == 4);
    for (size_t i = 0; i < m.count(); ++i) {
        CHECK_FALSE(m.records[i].label.empty());
        CHECK(to_lower(m.records[i].caption).find(to_lower(m.records[i].label)) != std::string::npos);
        CHECK(std::filesystem::exists(m.image_path(i)));
    }

    generate_synthetic(spec, tmp.str("c2"));
    CHECK(corpus_digest(tmp.str("c1")) == corpus_digest(tmp.str("c2")));

    SyntheticSpec other = small_spec(2);
    generate_synthetic(other, tmp.str("c3"));
    CHECK(corpus_digest(tmp.str("c1")) != corpus_digest(tmp.str("c3")));
}

TEST_CASE("repeats corruption duplicates an adjacent word somewhere in a seeded run") {
    TempDir tmp("synth_repeat");
    SyntheticSpec spec = small_spec(9);
    spec.n = 40;
    spec.rows = 8;
    spec.cols = 8;
    spec.corruption.repeats = true;
    Manifest m = generate_synthetic(spec, tmp.str("c"));
    bool found = false;
    for (const auto& r : m.records) {
        auto words = split_ws(r.caption);
        for (size_t i = 0; i + 1 < words.size(); ++i)
            if (words[i] == words[i + 1]) found = true;
    }
    CHECK(found);
}

TEST_CASE("empty vocab is a ConfigError") {
    SyntheticSpec spec = small_spec();
    spec.vocab.clear();
    CHECK_THROWS_AS(generate_synthetic(spec, "unused"), ConfigError);
}

TEST_CASE("masked preview: identity at full retention, gray when empty, tier sidecar") {
    TempDir tmp("preview");
    Image img(8, 8);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<uint8_t>(i % 251);
    GovernedRecord g;
    g.id = "p";
    g.grid = {2, 2, 4};
    g.caption_out = g.caption_in = "x";
    g.evidence = {{"cat", 0.82}, {"dog", 0.44}, {"car", 0.07}};

    g.retained = {0, 1, 2, 3};
    export_masked_preview(g, img, tmp.str("full.ppm"));
    Image full = read_ppm(tmp.str("full.ppm"));
    CHECK(full.pixels == img.pixels);

    g.retained = {};
    export_masked_preview(g, img, tmp.str("none.ppm"));
    Image none = read_ppm(tmp.str("none.ppm"));
    for (uint8_t px : none.pixels) CHECK(px == 128);

    std::string sidecar = read_file(tmp.str("full.ppm") + ".evidence.txt");
    CHECK(sidecar.find("cat\t82.0\thigh") != std::string::npos);
    CHECK(sidecar.find("dog\t44.0\tmid") != std::string::npos);
    CHECK(sidecar.find("car\t7.0\tlow") != std::string::npos);
}

TEST_CASE("preview rejects mismatched dimensions") {
    Image img(8, 8);
    GovernedRecord g;
    g.id = "p";
    g.grid = {3, 3, 4};
    g.retained = {0};
    g.caption_out = g.caption_in = "x";
    CHECK_THROWS_AS(export_masked_preview(g, img, "unused.ppm"), IntegrityError);
}

TEST_CASE("confidence tiers split at 30 and 60 on the 0-100 scale") {
    CHECK(confidence_tier(0.82) == "high");
    CHECK(confidence_tier(0.61) == "high");
    CHECK(confidence_tier(0.60) == "mid");
    CHECK(confidence_tier(0.30) == "mid");
    CHECK(confidence_tier(0.29) == "low");
}

TEST_CASE("ppm round-trip") {
    TempDir tmp("ppm");
    Image img(5, 3);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<uint8_t>((i * 37) % 256);
    write_ppm(img, tmp.str("x.ppm"));
    Image back = read_ppm(tmp.str("x.ppm"));
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("rebase keeps image paths resolvable") {
    TempDir tmp("rebase");
    SyntheticSpec spec = small_spec();
    Manifest m = generate_synthetic(spec, tmp.str("corpus"));
    std::filesystem::create_directories(tmp.str("out"));
    rebase_image_paths(m, tmp.str("out"));
    for (size_t i = 0; i < m.count(); ++i) CHECK(std::filesystem::exists(m.image_path(i)));
}
