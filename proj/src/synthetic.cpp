#include "tokgov/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

namespace tokgov {

namespace {

const char* kCountWords[] = {"zero",     "one",      "two",    "three",    "four",  "five",
                             "six",      "seven",    "eight",  "nine",     "ten",   "eleven",
                             "twelve",   "thirteen", "fourteen", "fifteen", "sixteen"};

const char* kPositions[] = {"top left", "top right", "bottom left", "bottom right"};

// background palette; every patch carries this tone, so it survives any
// patch selection and widens the caption combination space
struct Background {
    const char* word;
    uint8_t rgb[3];
};
const Background kBackgrounds[] = {
    {"plain", {128, 128, 128}},
    {"light", {176, 176, 176}},
    {"dark", {84, 84, 84}},
    {"warm", {160, 128, 96}},
};

const std::vector<std::vector<std::string>>& caption_templates() {
    // one canonical phrasing; count, class, quadrant and background tone
    // carry all the signal
    static const std::vector<std::vector<std::string>> t = {
        {"a", "photo", "of", "{count}", "{class}", "near", "the", "{pos}", "on", "a", "{bg}", "background"},
    };
    return t;
}

void hsv_to_rgb(double h, double s, double v, uint8_t rgb[3]) {
    double c = v * s;
    double hp = h / 60.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    rgb[0] = static_cast<uint8_t>(std::lround((r + m) * 255.0));
    rgb[1] = static_cast<uint8_t>(std::lround((g + m) * 255.0));
    rgb[2] = static_cast<uint8_t>(std::lround((b + m) * 255.0));
}

std::string apply_typo(const std::string& word, Rng& rng) {
    if (word.size() < 3) return word;
    switch (rng.uniform_int(0, 2)) {
        case 0: {  // double a character
            int i = rng.uniform_int(0, static_cast<int>(word.size()) - 1);
            return word.substr(0, i + 1) + word[i] + word.substr(i + 1);
        }
        case 1: {  // drop a character
            int i = rng.uniform_int(1, static_cast<int>(word.size()) - 2);
            return word.substr(0, i) + word.substr(i + 1);
        }
        default: {  // swap adjacent characters
            int i = rng.uniform_int(0, static_cast<int>(word.size()) - 2);
            std::string w = word;
            std::swap(w[i], w[i + 1]);
            return w;
        }
    }
}

}  // namespace

void class_color(int index, int total, uint8_t rgb[3]) {
    double hue = 360.0 * index / std::max(1, total);
    // alternate value levels so neighboring hues stay separable
    double v = (index % 2 == 0) ? 0.95 : 0.72;
    hsv_to_rgb(hue, 0.9, v, rgb);
}

std::vector<std::string> default_class_vocab() {
    return {"red square",    "blue circle",  "green triangle", "yellow star",  "purple cross",  "orange ring",
            "teal diamond",  "pink arrow",   "brown ladder",   "gray anchor",  "lime spiral",   "navy wedge",
            "gold crescent", "violet comb",  "coral knot",     "olive fan"};
}

std::vector<std::string> synthetic_wordlist(const std::vector<std::string>& vocab) {
    std::set<std::string> words;
    for (const auto& cls : vocab)
        for (const auto& w : split_ws(to_lower(cls))) words.insert(w);
    for (const auto* w : kCountWords) words.insert(w);
    for (const auto* p : kPositions)
        for (const auto& w : split_ws(p)) words.insert(w);
    for (const auto& b : kBackgrounds) words.insert(b.word);
    for (const auto& tmpl : caption_templates())
        for (const auto& w : tmpl)
            if (w.front() != '{') words.insert(w);
    words.insert("something");
    words.insert("corner");
    return {words.begin(), words.end()};
}

Manifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir, int workers) {
    if (spec.vocab.empty()) throw ConfigError("synthetic vocab must not be empty");
    const int m = spec.rows * spec.cols;
    const int quad_cells = (spec.rows / 2) * (spec.cols / 2);
    if (spec.rows < 2 || spec.cols < 2) throw ConfigError("grid must be at least 2x2");
    if (spec.signal_min < 1 || spec.signal_max < spec.signal_min || spec.signal_max > m)
        throw ConfigError("signal patch range must satisfy 1 <= min <= max <= m");
    if (spec.signal_max > quad_cells)
        throw ConfigError("signal_max exceeds the smallest quadrant (" + std::to_string(quad_cells) + " cells)");
    if (spec.signal_max > 16) throw ConfigError("signal_max above 16 has no count word");
    if (spec.n < 0) throw ConfigError("negative sample count");

    // up to three log-spaced count levels keep the counts visually separable
    // even when a selection strategy drops half the cells
    std::vector<int> count_levels;
    for (int j = 0; j < 3; ++j) {
        double t = j / 2.0;
        double v = std::exp(std::log(static_cast<double>(spec.signal_min)) +
                            t * (std::log(static_cast<double>(spec.signal_max)) -
                                 std::log(static_cast<double>(spec.signal_min))));
        int c = static_cast<int>(std::lround(v));
        c = std::clamp(c, spec.signal_min, spec.signal_max);
        if (count_levels.empty() || count_levels.back() != c) count_levels.push_back(c);
    }

    std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");

    Manifest man;
    man.kind = ManifestKind::raw;
    man.base_dir = out_dir;
    man.records.resize(static_cast<size_t>(spec.n));

    const int W = spec.cols * spec.patch_size;
    const int H = spec.rows * spec.patch_size;
    const int L = static_cast<int>(spec.vocab.size());

    parallel_for(static_cast<size_t>(spec.n), workers, [&](size_t sample_idx) {
        const int i = static_cast<int>(sample_idx);
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "s%06d", i);
        std::string id(idbuf);
        Rng rng(fold_seed(spec.seed, id));

        // long-tailed class draw: web corpora are head-heavy, and whole-sample
        // pruning starves the tail classes
        double u = rng.uniform();
        int cls = std::min(L - 1, static_cast<int>(std::floor(L * u * u)));
        int count = count_levels[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(count_levels.size()) - 1))];
        // all signal cells land in one quadrant so the position word is exact
        int quad = rng.uniform_int(0, 3);
        int r_lo = (quad / 2 == 0) ? 0 : spec.rows / 2;
        int r_hi = (quad / 2 == 0) ? spec.rows / 2 : spec.rows;
        int c_lo = (quad % 2 == 0) ? 0 : spec.cols / 2;
        int c_hi = (quad % 2 == 0) ? spec.cols / 2 : spec.cols;
        std::vector<int> quad_cell_ids;
        for (int r = r_lo; r < r_hi; ++r)
            for (int c = c_lo; c < c_hi; ++c) quad_cell_ids.push_back(r * spec.cols + c);
        auto picks = rng.sample_without_replacement(static_cast<int>(quad_cell_ids.size()),
                                                    std::min<int>(count, static_cast<int>(quad_cell_ids.size())));
        std::vector<int> cells;
        for (int p : picks) cells.push_back(quad_cell_ids[static_cast<size_t>(p)]);

        // image: noisy tinted background with a faint class-color cast (any
        // patch subset keeps a trace of the class, like a photo's palette),
        // solid class color on the signal cells
        const auto& bg = kBackgrounds[static_cast<size_t>(rng.uniform_int(0, 3))];
        uint8_t rgb[3];
        class_color(cls, L, rgb);
        Image img(W, H);
        double amp = spec.noise_level * 100.0;
        constexpr double kCast = 0.15;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) {
                    double base = (1.0 - kCast) * bg.rgb[c] + kCast * rgb[c];
                    double v = base + rng.uniform(-amp, amp);
                    img.at(x, y, c) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
                }
        for (int cell : cells) {
            int r0 = (cell / spec.cols) * spec.patch_size;
            int c0 = (cell % spec.cols) * spec.patch_size;
            for (int y = r0; y < r0 + spec.patch_size; ++y)
                for (int x = c0; x < c0 + spec.patch_size; ++x)
                    for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
        }

        // caption from a seeded template
        const auto& tmpl = caption_templates()[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(caption_templates().size()) - 1))];
        std::vector<std::string> words;
        for (const auto& slot : tmpl) {
            if (slot == "{count}") {
                words.push_back(kCountWords[count]);
            } else if (slot == "{class}") {
                for (const auto& w : split_ws(to_lower(spec.vocab[static_cast<size_t>(cls)]))) words.push_back(w);
            } else if (slot == "{pos}") {
                for (const auto& w : split_ws(kPositions[quad])) words.push_back(w);
            } else if (slot == "{bg}") {
                words.push_back(bg.word);
            } else {
                words.push_back(slot);
            }
        }
        // corruptions are per-sample coin flips when enabled; omission is the
        // most destructive and fires less often
        if (spec.corruption.omit_class_words && rng.uniform() < 0.35) {
            auto cls_words = split_ws(to_lower(spec.vocab[static_cast<size_t>(cls)]));
            std::vector<std::string> kept;
            size_t w = 0;
            bool replaced = false;
            while (w < words.size()) {
                bool match = w + cls_words.size() <= words.size();
                for (size_t j = 0; match && j < cls_words.size(); ++j) match = words[w + j] == cls_words[j];
                if (match) {
                    // drop the count word directly before the class phrase too
                    if (!kept.empty() && !replaced) {
                        for (const auto* cw : kCountWords)
                            if (kept.back() == cw) {
                                kept.pop_back();
                                break;
                            }
                    }
                    kept.push_back("something");
                    w += cls_words.size();
                    replaced = true;
                } else {
                    kept.push_back(words[w]);
                    ++w;
                }
            }
            words = kept;
        }
        if (spec.corruption.repeats && rng.uniform() < 0.5 && !words.empty()) {
            int i0 = rng.uniform_int(0, static_cast<int>(words.size()) - 1);
            words.insert(words.begin() + i0, words[static_cast<size_t>(i0)]);
        }
        if (spec.corruption.typos && rng.uniform() < 0.5) {
            std::vector<int> eligible;
            for (size_t w = 0; w < words.size(); ++w)
                if (words[w].size() >= 3) eligible.push_back(static_cast<int>(w));
            if (!eligible.empty()) {
                int w = eligible[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
                words[static_cast<size_t>(w)] = apply_typo(words[static_cast<size_t>(w)], rng);
            }
        }

        RawRecord rec;
        rec.id = id;
        rec.image = "images/" + id + ".ppm";
        rec.caption = join(words, " ");
        rec.label = spec.vocab[static_cast<size_t>(cls)];
        man.records[static_cast<size_t>(i)] = rec;
        write_ppm(img, (std::filesystem::path(out_dir) / rec.image).string());
    });
    return man;
}

}  // namespace tokgov
