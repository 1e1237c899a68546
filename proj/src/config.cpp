#include "tokgov/config.hpp"

#include <algorithm>

namespace tokgov {

using nlohmann::json;

json default_config() {
    json c;
    c["seed"] = 42;
    c["workers"] = 1;
    c["patch_size"] = 4;

    c["synthetic"] = {{"n", 256},
                      {"rows", 8},
                      {"cols", 8},
                      {"patch_size", 4},
                      {"vocab", default_class_vocab()},
                      {"signal_min", 2},
                      {"signal_max", 6},
                      {"noise_level", 0.15},
                      {"corrupt_typos", false},
                      {"corrupt_repeats", false},
                      {"corrupt_omit_class_words", false},
                      {"seed", 1}};

    c["backbone"] = {{"kind", "synthetic_saliency"},
                     {"layers", 4},
                     {"width", 64},
                     {"heads", 4},
                     {"max_patches", 196},
                     {"weights_path", ""},
                     {"seed", 7}};

    c["selection"] = {{"strategy", "topk"}, {"r", 0.5}, {"strata", 4}};
    c["evidence"] = {{"epsilon", 0.7}};

    c["rewriter"] = {{"mode", "rewrite"},
                     {"backend", "template"},
                     {"prompt_correction",
                      "Correct misspellings and remove repeated words in the caption; keep its meaning."},
                     {"prompt_visual",
                      "The image is verified to contain: {classes}. Integrate these into the caption naturally."},
                     {"store_scores", false}};

    c["encoder"] = {{"embed_dim", 64},
                    {"vision_layers", 4},
                    {"vision_width", 64},
                    {"vision_heads", 4},
                    {"text_layers", 2},
                    {"text_width", 64},
                    {"text_heads", 2},
                    {"patch_size", 4},
                    {"max_patches", 64},
                    {"max_text_len", 16},
                    {"text_vocab", json::array()},
                    {"temperature_init", 0.07},
                    {"temperature_learnable", true}};

    c["train"] = {{"batch", 64},
                  {"epochs", 20},
                  {"base_lr", 3e-3},
                  {"warmup_epochs", 2},
                  {"weight_decay", 0.05},
                  {"schedule", "cosine"},
                  {"full_patch_fraction", 0.0},
                  {"token_budget", 0}};

    c["eval"] = {{"template", "a photo of a {c}"}, {"tasks", json::array({"retrieval", "zero_shot"})}};

    c["sieve"] = {{"method", "random"},     {"keep_fraction", 0.5}, {"clusters", 8},
                  {"far_from_centroid", true}, {"embedder", "brief"},  {"checkpoint", ""}};

    c["sweep"] = {{"r_values", json::array({1.0, 0.5, 0.25})}, {"timing_runs", 5}};

    c["compare"] = {{"token_budget", 600000},
                    {"seeds", json::array({1, 2, 3})},
                    {"specs", json::array({"topk+rewrite", "uniform*", "random-sieve"})}};
    return c;
}

json preset_config(const std::string& name) {
    json c = default_config();
    if (name == "desk" || name.empty()) return c;
    if (name == "paper") {
        // large-scale pretraining recipe, kept for reference; not sized for a
        // single desktop core
        c["train"]["batch"] = 1024;
        c["train"]["epochs"] = 50;
        c["train"]["base_lr"] = 5e-5;
        c["train"]["warmup_epochs"] = 5;
        c["train"]["weight_decay"] = 0.05;
        c["encoder"]["embed_dim"] = 384;
        c["encoder"]["vision_layers"] = 12;
        c["encoder"]["vision_width"] = 384;
        c["encoder"]["vision_heads"] = 6;
        c["encoder"]["text_layers"] = 12;
        c["encoder"]["text_width"] = 384;
        c["encoder"]["text_heads"] = 6;
        c["encoder"]["patch_size"] = 16;
        c["encoder"]["max_patches"] = 196;
        c["encoder"]["max_text_len"] = 32;
        c["patch_size"] = 16;
        return c;
    }
    throw ConfigError("unknown preset: " + name);
}

namespace {

bool same_category(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

void merge_into(json& base, const json& user, const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key_path);
        json& slot = base[it.key()];
        if (slot.is_object() && it.value().is_object()) {
            merge_into(slot, it.value(), key_path);
        } else if (slot.is_object() != it.value().is_object()) {
            throw ConfigError("config key " + key_path + " has the wrong structure");
        } else {
            if (!same_category(slot, it.value()) && !slot.is_null())
                throw ConfigError("config key " + key_path + " has the wrong type");
            slot = it.value();
        }
    }
}

}  // namespace

json merge_config(const json& defaults, const json& user) {
    if (!user.is_object()) throw ConfigError("config document must be a JSON object");
    json out = defaults;
    merge_into(out, user, "");
    return out;
}

void apply_override(json& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key.path=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (...) {
        parsed = value;  // bare strings are fine
    }

    json* slot = &cfg;
    size_t start = 0;
    std::vector<std::string> keys;
    while (true) {
        size_t dot = path.find('.', start);
        keys.push_back(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!slot->contains(keys[i]) || !(*slot)[keys[i]].is_object())
            throw ConfigError("unknown config key: " + path);
        slot = &(*slot)[keys[i]];
    }
    if (!slot->contains(keys.back())) throw ConfigError("unknown config key: " + path);
    json& target = (*slot)[keys.back()];
    if (!same_category(target, parsed) && !target.is_null()) {
        if (target.is_string() && !parsed.is_string())
            parsed = value;  // quoted-looking values may still be strings
        else
            throw ConfigError("config key " + path + " has the wrong type");
    }
    target = parsed;
}

std::string config_digest(const json& cfg) { return digest_string(cfg.dump()); }

namespace {
void flatten_into(const json& cfg, const std::string& path,
                  std::vector<std::pair<std::string, std::string>>& out) {
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (it.value().is_object())
            flatten_into(it.value(), key_path, out);
        else
            out.push_back({key_path, it.value().dump()});
    }
}
}  // namespace

std::vector<std::pair<std::string, std::string>> flatten_config(const json& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    flatten_into(cfg, "", out);
    return out;
}

SyntheticSpec synthetic_from_config(const json& cfg) {
    const auto& s = cfg.at("synthetic");
    SyntheticSpec spec;
    spec.n = s.at("n").get<int>();
    spec.rows = s.at("rows").get<int>();
    spec.cols = s.at("cols").get<int>();
    spec.patch_size = s.at("patch_size").get<int>();
    spec.vocab = s.at("vocab").get<std::vector<std::string>>();
    spec.signal_min = s.at("signal_min").get<int>();
    spec.signal_max = s.at("signal_max").get<int>();
    spec.noise_level = s.at("noise_level").get<double>();
    spec.corruption.typos = s.at("corrupt_typos").get<bool>();
    spec.corruption.repeats = s.at("corrupt_repeats").get<bool>();
    spec.corruption.omit_class_words = s.at("corrupt_omit_class_words").get<bool>();
    spec.seed = s.at("seed").get<uint64_t>();
    return spec;
}

BackboneConfig backbone_from_config(const json& cfg) {
    const auto& b = cfg.at("backbone");
    BackboneConfig bc;
    bc.kind = b.at("kind").get<std::string>();
    bc.vit.layers = b.at("layers").get<int>();
    bc.vit.width = b.at("width").get<int>();
    bc.vit.heads = b.at("heads").get<int>();
    bc.vit.max_patches = b.at("max_patches").get<int>();
    bc.vit.patch_size = cfg.at("patch_size").get<int>();
    bc.vit.seed = b.at("seed").get<uint64_t>();
    bc.weights_path = b.at("weights_path").get<std::string>();
    bc.vocabulary = cfg.at("synthetic").at("vocab").get<std::vector<std::string>>();
    return bc;
}

SelectionConfig selection_from_config(const json& cfg) {
    const auto& s = cfg.at("selection");
    SelectionConfig sel;
    sel.strategy = parse_strategy(s.at("strategy").get<std::string>());
    sel.r = s.at("r").get<double>();
    sel.strata = s.at("strata").get<int>();
    sel.seed = cfg.at("seed").get<uint64_t>();
    return sel;
}

EncoderConfig encoder_from_config(const json& cfg) {
    const auto& e = cfg.at("encoder");
    EncoderConfig enc;
    enc.embed_dim = e.at("embed_dim").get<int>();
    enc.vision = {e.at("vision_layers").get<int>(), e.at("vision_width").get<int>(), e.at("vision_heads").get<int>()};
    enc.text = {e.at("text_layers").get<int>(), e.at("text_width").get<int>(), e.at("text_heads").get<int>()};
    enc.patch_size = e.at("patch_size").get<int>();
    enc.max_patches = e.at("max_patches").get<int>();
    enc.max_text_len = e.at("max_text_len").get<int>();
    enc.text_vocab = e.at("text_vocab").get<std::vector<std::string>>();
    if (enc.text_vocab.empty())
        enc.text_vocab = synthetic_wordlist(cfg.at("synthetic").at("vocab").get<std::vector<std::string>>());
    enc.temperature_init = e.at("temperature_init").get<double>();
    enc.temperature_learnable = e.at("temperature_learnable").get<bool>();
    enc.seed = cfg.at("seed").get<uint64_t>();
    return enc;
}

TrainConfig train_from_config(const json& cfg) {
    const auto& t = cfg.at("train");
    TrainConfig tc;
    tc.batch = t.at("batch").get<int>();
    tc.epochs = t.at("epochs").get<int>();
    tc.base_lr = t.at("base_lr").get<double>();
    tc.warmup_epochs = t.at("warmup_epochs").get<int>();
    tc.weight_decay = t.at("weight_decay").get<double>();
    tc.schedule = t.at("schedule").get<std::string>();
    tc.full_patch_fraction = t.at("full_patch_fraction").get<double>();
    tc.token_budget = t.at("token_budget").get<uint64_t>();
    tc.seed = cfg.at("seed").get<uint64_t>();
    return tc;
}

SieveConfig sieve_from_config(const json& cfg) {
    const auto& s = cfg.at("sieve");
    SieveConfig sc;
    sc.method = parse_sieve_method(s.at("method").get<std::string>());
    sc.keep_fraction = s.at("keep_fraction").get<double>();
    sc.clusters = s.at("clusters").get<int>();
    sc.far_from_centroid = s.at("far_from_centroid").get<bool>();
    sc.seed = cfg.at("seed").get<uint64_t>();
    return sc;
}

PromptConfig prompts_from_config(const json& cfg) {
    PromptConfig pc;
    pc.correction = cfg.at("rewriter").at("prompt_correction").get<std::string>();
    pc.visual_template = cfg.at("rewriter").at("prompt_visual").get<std::string>();
    return pc;
}

CompareSettings compare_from_config(const json& cfg) {
    CompareSettings cs;
    cs.token_budget = cfg.at("compare").at("token_budget").get<uint64_t>();
    cs.seeds = cfg.at("compare").at("seeds").get<std::vector<uint64_t>>();
    cs.encoder = encoder_from_config(cfg);
    cs.train = train_from_config(cfg);
    cs.patch_size = cfg.at("patch_size").get<int>();
    cs.epsilon = cfg.at("evidence").at("epsilon").get<double>();
    cs.class_vocab = cfg.at("synthetic").at("vocab").get<std::vector<std::string>>();
    cs.prompts = prompts_from_config(cfg);
    return cs;
}

GovernorSpec governor_spec_by_name(const std::string& name, const json& cfg) {
    GovernorSpec spec;
    spec.name = name;
    spec.epsilon = cfg.at("evidence").at("epsilon").get<double>();
    SelectionConfig sel = selection_from_config(cfg);

    if (name == "full") {
        sel.strategy = SelectionStrategy::topk;
        sel.r = 1.0;
        spec.selection = sel;
        spec.mode = RewriterMode::none;
        return spec;
    }
    if (name == "topk+rewrite") {
        sel.strategy = SelectionStrategy::topk;
        spec.selection = sel;
        spec.mode = RewriterMode::rewrite;
        return spec;
    }
    if (name == "topk+concat") {
        sel.strategy = SelectionStrategy::topk;
        spec.selection = sel;
        spec.mode = RewriterMode::concat;
        return spec;
    }
    if (name == "topk+none") {
        sel.strategy = SelectionStrategy::topk;
        spec.selection = sel;
        spec.mode = RewriterMode::none;
        return spec;
    }
    if (name == "uniform*") {
        sel.strategy = SelectionStrategy::uniform;
        spec.selection = sel;
        spec.mode = RewriterMode::none;
        return spec;
    }
    if (name == "cluster*") {
        sel.strategy = SelectionStrategy::cluster;
        spec.selection = sel;
        spec.mode = RewriterMode::none;
        return spec;
    }
    auto sieve_arm = [&](SieveMethod method) {
        SieveConfig sc = sieve_from_config(cfg);
        sc.method = method;
        spec.sieve = sc;
        sel.strategy = SelectionStrategy::topk;
        sel.r = 1.0;
        spec.selection = sel;
        spec.mode = RewriterMode::none;
        return spec;
    };
    if (name == "random-sieve") return sieve_arm(SieveMethod::random);
    if (name == "cluster-sieve") return sieve_arm(SieveMethod::cluster);
    if (name == "clipscore-sieve") return sieve_arm(SieveMethod::clip_score);
    throw ConfigError("unknown governor spec: " + name);
}

std::vector<std::string> compare_preset_spec_names(const std::string& preset) {
    if (preset == "fine-vs-coarse")
        return {"full",         "topk+rewrite", "uniform*",       "cluster*",
                "random-sieve", "cluster-sieve", "clipscore-sieve"};
    throw ConfigError("unknown compare preset: " + preset);
}

}  // namespace tokgov
