#include "tokgov/manifest.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tokgov {

using nlohmann::json;

const char* to_string(ManifestKind k) {
    switch (k) {
        case ManifestKind::raw: return "raw";
        case ManifestKind::governed: return "governed";
        case ManifestKind::sieved: return "sieved";
    }
    return "raw";
}

std::string Manifest::image_path(size_t i) const {
    std::filesystem::path p(base_dir);
    return (p / records[i].image).string();
}

namespace {

json governed_to_json(const GovernedRecord& g) {
    json j;
    j["id"] = g.id;
    j["image"] = g.image;
    j["caption"] = g.caption_out;
    j["grid"] = {g.grid.rows, g.grid.cols, g.grid.patch};
    j["retained"] = g.retained;
    j["caption_out"] = g.caption_out;
    j["caption_in"] = g.caption_in;
    json ev = json::array();
    for (const auto& e : g.evidence) ev.push_back({e.name, e.confidence});
    j["evidence"] = ev;
    if (!g.scores.empty()) j["scores"] = g.scores;
    if (!g.label.empty()) j["label"] = g.label;
    return j;
}

GovernedRecord governed_from_json(const json& j) {
    GovernedRecord g;
    g.id = j.at("id").get<std::string>();
    g.image = j.value("image", "");
    auto grid = j.at("grid");
    g.grid = GridSpec{grid.at(0).get<int>(), grid.at(1).get<int>(), grid.at(2).get<int>()};
    g.retained = j.at("retained").get<std::vector<int>>();
    g.caption_out = j.at("caption_out").get<std::string>();
    g.caption_in = j.at("caption_in").get<std::string>();
    for (const auto& e : j.at("evidence"))
        g.evidence.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
    if (j.contains("scores")) g.scores = j.at("scores").get<std::vector<double>>();
    g.label = j.value("label", "");
    return g;
}

void check_governed_invariants(const GovernedRecord& g) {
    const int m = g.grid.patches();
    std::set<int> seen;
    for (int t : g.retained) {
        if (t < 0 || t >= m)
            throw IntegrityError("record " + g.id + ": retained index " + std::to_string(t) + " outside [0, " +
                                 std::to_string(m) + ")");
        if (!seen.insert(t).second) throw IntegrityError("record " + g.id + ": duplicate retained index");
    }
    if (!std::is_sorted(g.retained.begin(), g.retained.end()))
        throw IntegrityError("record " + g.id + ": retained indices not sorted");
}

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("missing manifest: " + path);
    Manifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();

    std::string line;
    size_t line_no = 0;
    bool any_governed = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
            if (!j.is_object() || !j.contains("id")) throw ParseError("record is not an object with an id");
        } catch (const std::exception& e) {
            throw ParseError("manifest " + path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            RawRecord r;
            r.id = j.at("id").get<std::string>();
            r.image = j.value("image", "");
            r.caption = j.value("caption", "");
            r.label = j.value("label", "");
            if (trim(r.caption).empty())
                throw ParseError("manifest " + path + " line " + std::to_string(line_no) + ": empty caption");
            m.records.push_back(r);
            if (j.contains("retained")) {
                any_governed = true;
                m.governed.push_back(governed_from_json(j));
            } else {
                m.governed.emplace_back();
            }
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError("manifest " + path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }

    // sort by id, keep the governed rows parallel
    std::vector<size_t> order(m.records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return m.records[a].id < m.records[b].id; });
    std::vector<RawRecord> recs;
    std::vector<GovernedRecord> govs;
    recs.reserve(order.size());
    govs.reserve(order.size());
    for (size_t i : order) {
        recs.push_back(std::move(m.records[i]));
        govs.push_back(std::move(m.governed[i]));
    }
    m.records = std::move(recs);
    m.governed = std::move(govs);

    for (size_t i = 1; i < m.records.size(); ++i)
        if (m.records[i].id == m.records[i - 1].id)
            throw IntegrityError("duplicate id in manifest: " + m.records[i].id);

    if (any_governed) {
        m.kind = ManifestKind::governed;
        for (const auto& g : m.governed)
            if (!g.id.empty()) check_governed_invariants(g);
    } else if (std::filesystem::exists(path + ".sieve.json")) {
        m.kind = ManifestKind::sieved;
        m.governed.clear();
    } else {
        m.kind = ManifestKind::raw;
        m.governed.clear();
    }
    return m;
}

void rebase_image_paths(Manifest& manifest, const std::string& new_base_dir) {
    namespace fs = std::filesystem;
    fs::path from = manifest.base_dir.empty() ? fs::path(".") : fs::path(manifest.base_dir);
    fs::path to = new_base_dir.empty() ? fs::path(".") : fs::path(new_base_dir);
    auto rebase = [&](std::string& image) {
        if (image.empty() || fs::path(image).is_absolute()) return;
        image = fs::proximate(from / image, to).lexically_normal().string();
    };
    for (auto& r : manifest.records) rebase(r.image);
    for (auto& g : manifest.governed) rebase(g.image);
    manifest.base_dir = new_base_dir;
}

std::string write_raw_manifest(const Manifest& manifest, const std::string& out_path) {
    auto order = manifest.records;
    std::sort(order.begin(), order.end(), [](const RawRecord& a, const RawRecord& b) { return a.id < b.id; });
    std::ostringstream out;
    for (const auto& r : order) {
        json j;
        j["id"] = r.id;
        j["image"] = r.image;
        j["caption"] = r.caption;
        if (!r.label.empty()) j["label"] = r.label;
        out << j.dump() << "\n";
    }
    std::string bytes = out.str();
    write_file_atomic(out_path, bytes);
    return digest_string(bytes);
}

std::string write_governed(const Manifest& manifest, const std::vector<GovernedRecord>& samples,
                           const std::string& out_path) {
    std::map<std::string, const GovernedRecord*> by_id;
    for (const auto& s : samples) {
        if (!by_id.emplace(s.id, &s).second) throw IntegrityError("duplicate governed sample id: " + s.id);
    }
    if (by_id.size() != manifest.count())
        throw IntegrityError("governed sample count does not match manifest");
    std::ostringstream out;
    std::vector<std::string> ids;
    ids.reserve(manifest.count());
    for (const auto& r : manifest.records) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw IntegrityError("governed samples missing manifest id: " + id);
        check_governed_invariants(*it->second);
        out << governed_to_json(*it->second).dump() << "\n";
    }
    std::string bytes = out.str();
    write_file_atomic(out_path, bytes);
    return digest_string(bytes);
}

std::string confidence_tier(double confidence01) {
    double v = confidence01 * 100.0;
    if (v > 60.0) return "high";
    if (v >= 30.0) return "mid";
    return "low";
}

void export_masked_preview(const GovernedRecord& sample, const Image& image, const std::string& out_path) {
    const auto& g = sample.grid;
    if (g.rows * g.patch != image.height || g.cols * g.patch != image.width)
        throw IntegrityError("preview: grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) + " patch " +
                             std::to_string(g.patch) + " does not match image " + std::to_string(image.width) + "x" +
                             std::to_string(image.height));
    check_governed_invariants(sample);

    std::vector<uint8_t> keep(static_cast<size_t>(g.patches()), 0);
    for (int t : sample.retained) keep[static_cast<size_t>(t)] = 1;

    Image out = image;
    constexpr uint8_t kGray = 128;
    for (int t = 0; t < g.patches(); ++t) {
        if (keep[static_cast<size_t>(t)]) continue;
        int r0 = (t / g.cols) * g.patch;
        int c0 = (t % g.cols) * g.patch;
        for (int y = r0; y < r0 + g.patch; ++y)
            for (int x = c0; x < c0 + g.patch; ++x)
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = kGray;
    }
    write_ppm(out, out_path);

    std::ostringstream sidecar;
    for (const auto& e : sample.evidence) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.1f", e.confidence * 100.0);
        sidecar << e.name << "\t" << buf << "\t" << confidence_tier(e.confidence) << "\n";
    }
    write_file_atomic(out_path + ".evidence.txt", sidecar.str());
}

}  // namespace tokgov
