#pragma once

#include <string>
#include <vector>

#include "tokgov/common.hpp"
#include "tokgov/image.hpp"

namespace tokgov {

struct EvidenceItem {
    std::string name;
    double confidence = 0.0;  // in [0, 1]
};

struct GridSpec {
    int rows = 0;
    int cols = 0;
    int patch = 0;  // patch edge in pixels
    int patches() const { return rows * cols; }
};

struct RawRecord {
    std::string id;
    std::string image;    // path relative to the manifest directory
    std::string caption;
    std::string label;    // optional ground-truth class, synthetic corpora only
};

struct GovernedRecord {
    std::string id;
    std::string image;
    GridSpec grid;
    std::vector<int> retained;      // sorted, unique, in [0, m)
    std::vector<double> scores;     // optional per-patch scores, empty = absent
    std::string caption_out;
    std::string caption_in;
    std::vector<EvidenceItem> evidence;  // confidence-descending
    std::string label;
};

enum class ManifestKind { raw, governed, sieved };

const char* to_string(ManifestKind k);

struct Manifest {
    ManifestKind kind = ManifestKind::raw;
    std::string base_dir;  // directory image paths resolve against
    std::vector<RawRecord> records;
    // Parallel to records when kind == governed.
    std::vector<GovernedRecord> governed;

    size_t count() const { return records.size(); }
    std::string image_path(size_t i) const;
};

// One JSON object per line. Records come back sorted by id; duplicate ids are
// an IntegrityError, unparseable lines a ParseError carrying the line number.
Manifest load_manifest(const std::string& path);

// Re-anchors relative image paths so the manifest can be written under
// `new_base_dir` and still resolve the same files.
void rebase_image_paths(Manifest& manifest, const std::string& new_base_dir);

// Returns the digest of the emitted bytes. Records are written in id order.
std::string write_raw_manifest(const Manifest& manifest, const std::string& out_path);

// Governed lines keep {id, image, caption} readable by raw-schema consumers
// (caption = caption_out) and add the governance fields. `samples` must cover
// exactly the manifest ids.
std::string write_governed(const Manifest& manifest, const std::vector<GovernedRecord>& samples,
                           const std::string& out_path);

// Gray-fills the discarded patch cells and writes the evidence sidecar
// (<out>.evidence.txt, "name\tconfidence\ttier" per item, 0-100 scale).
void export_masked_preview(const GovernedRecord& sample, const Image& image, const std::string& out_path);

// Confidence tier on the 0-100 scale: above 60 high, 30-60 mid, below 30 low.
std::string confidence_tier(double confidence01);

}  // namespace tokgov
