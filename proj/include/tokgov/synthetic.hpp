#pragma once

#include <string>
#include <vector>

#include "tokgov/common.hpp"
#include "tokgov/image.hpp"
#include "tokgov/manifest.hpp"

namespace tokgov {

struct CorruptionFlags {
    bool typos = false;
    bool repeats = false;
    bool omit_class_words = false;
};

struct SyntheticSpec {
    int n = 256;
    int rows = 8;
    int cols = 8;
    int patch_size = 4;
    std::vector<std::string> vocab;       // class names, e.g. "red square"
    int signal_min = 2;
    int signal_max = 6;
    double noise_level = 0.15;            // background jitter amplitude in [0, 1]
    CorruptionFlags corruption;
    uint64_t seed = 1;
};

// Desk-scale stand-in for a web corpus: solid class-coded cells planted in
// one quadrant of a noisy tinted background, captions that name the count,
// class, quadrant and background tone, plus optional caption corruptions.
// Per-sample seeds derive from hash(seed, id), so the worker count never
// changes the output. Writes images under <out_dir>/images/ and returns the
// manifest in memory.
Manifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir, int workers = 1);

// RGB code used for class index j of L; the saliency backbone matches on it.
void class_color(int index, int total, uint8_t rgb[3]);

// Every word the generator can emit (class, count, position, template words).
// Feeds the denoiser dictionary and the default text vocabulary.
std::vector<std::string> synthetic_wordlist(const std::vector<std::string>& vocab);

// 16 default class names used by the bundled benchmark configs.
std::vector<std::string> default_class_vocab();

}  // namespace tokgov
