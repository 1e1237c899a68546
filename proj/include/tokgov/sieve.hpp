#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tokgov/manifest.hpp"
#include "tokgov/nn.hpp"

namespace tokgov {

// Per-sample embedding provider for the cluster and clip-score sieves.
class SampleEmbedder {
public:
    virtual ~SampleEmbedder() = default;
    virtual std::vector<double> embed_image(const Manifest& manifest, size_t index) const = 0;
    virtual std::vector<double> embed_text(const std::string& caption) const = 0;
};

// Unit-test embedder: images map to their class-code color response, captions
// to a bag of class-word hits, so cosine is high for aligned pairs.
class ClassCodeEmbedder : public SampleEmbedder {
public:
    explicit ClassCodeEmbedder(std::vector<std::string> vocabulary);
    std::vector<double> embed_image(const Manifest& manifest, size_t index) const override;
    std::vector<double> embed_text(const std::string& caption) const override;

private:
    std::vector<std::string> vocab_;
    std::vector<std::array<double, 3>> codes_;
};

enum class SieveMethod { random, cluster, clip_score };
SieveMethod parse_sieve_method(const std::string& name);
const char* to_string(SieveMethod m);

struct SieveConfig {
    SieveMethod method = SieveMethod::random;
    double keep_fraction = 0.5;  // f in (0, 1]
    int clusters = 8;            // cluster method only
    bool far_from_centroid = true;  // duplicate-pruning reading; false = seeded per-cluster sample
    uint64_t seed = 0;
};

int kept_count(double keep_fraction, int n);

// Whole-sample baseline governors. Output keeps the manifest schema with
// kind = sieved; callers persist the method sidecar via write_sieved.
Manifest sieve(const Manifest& manifest, const SampleEmbedder* embedder, const SieveConfig& cfg);

std::string write_sieved(const Manifest& sieved, const SieveConfig& cfg, const std::string& out_path);

}  // namespace tokgov
