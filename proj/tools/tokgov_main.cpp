// tokgov: token-level governance pipeline for image-text corpora.
// Subcommands: synth | govern | sieve | train | eval | sweep | compare | preview

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "tokgov/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tokgov;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string preset = "desk";
    std::vector<std::string> overrides;
    int workers = 1;
    long long seed_override = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config document");
    cmd->add_option("--preset", opts.preset, "config preset: desk or paper")->capture_default_str();
    cmd->add_option("--set", opts.overrides, "dotted-path override, key.path=value")->take_all();
    cmd->add_option("--workers", opts.workers, "per-sample parallelism")->capture_default_str();
    cmd->add_option("--seed", opts.seed_override, "override config seed");
}

json resolve_config(const CommonOpts& opts) {
    json cfg = preset_config(opts.preset);
    if (!opts.config_path.empty()) {
        json user;
        try {
            user = json::parse(read_file(opts.config_path));
        } catch (const json::exception& e) {
            throw ConfigError("cannot parse config " + opts.config_path + ": " + e.what());
        }
        cfg = merge_config(cfg, user);
    }
    for (const auto& ov : opts.overrides) apply_override(cfg, ov);
    if (opts.seed_override >= 0) cfg["seed"] = opts.seed_override;
    return cfg;
}

std::string config_key_listing() {
    std::string out = "Config keys (defaults):\n";
    for (const auto& [key, value] : flatten_config(default_config())) out += "  " + key + " = " + value + "\n";
    return out;
}

// One line per run: command, config digest, input/output digests, wall clock.
void record_run(const std::string& out_dir, const std::string& cmd, const json& cfg,
                const std::map<std::string, std::string>& inputs, const std::map<std::string, std::string>& outputs,
                double wall_s, const std::vector<std::string>& warnings) {
    json rec;
    rec["cmd"] = cmd;
    rec["config_digest"] = config_digest(cfg);
    rec["seed"] = cfg.at("seed");
    rec["inputs"] = inputs;
    rec["outputs"] = outputs;
    rec["wall_clock_s"] = wall_s;
    if (!warnings.empty()) rec["warnings"] = warnings;
    std::string dir = out_dir.empty() ? "." : out_dir;
    fs::create_directories(dir);
    append_line((fs::path(dir) / "runs.jsonl").string(), rec.dump());
}

void write_config_sidecar(const std::string& artifact, const json& cfg) {
    json side;
    side["config"] = cfg;
    side["config_digest"] = config_digest(cfg);
    write_file_atomic(artifact + ".run.json", side.dump(2) + "\n");
}

std::string encoder_meta(const EncoderConfig& e, const json& cfg, int steps, uint64_t tokens) {
    json meta;
    meta["encoder"] = {{"embed_dim", e.embed_dim},
                       {"vision_layers", e.vision.layers},
                       {"vision_width", e.vision.width},
                       {"vision_heads", e.vision.heads},
                       {"text_layers", e.text.layers},
                       {"text_width", e.text.width},
                       {"text_heads", e.text.heads},
                       {"patch_size", e.patch_size},
                       {"max_patches", e.max_patches},
                       {"max_text_len", e.max_text_len},
                       {"text_vocab", e.text_vocab},
                       {"temperature_init", e.temperature_init},
                       {"temperature_learnable", e.temperature_learnable},
                       {"seed", e.seed}};
    meta["steps"] = steps;
    meta["tokens"] = tokens;
    meta["config_digest"] = config_digest(cfg);
    return meta.dump(2) + "\n";
}

std::unique_ptr<RewriterBackend> make_rewriter_backend(const json& cfg) {
    std::string backend = cfg.at("rewriter").at("backend").get<std::string>();
    if (backend == "template") return std::make_unique<TemplateRewriter>();
    if (backend == "http") return std::make_unique<HttpRewriter>(HttpRewriterConfig::from_env());
    throw ConfigError("unknown rewriter backend: " + backend);
}

int run_synth(const CommonOpts& opts, const std::string& out_dir) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    SyntheticSpec spec = synthetic_from_config(cfg);
    Manifest man = generate_synthetic(spec, out_dir, opts.workers);
    std::string manifest_path = (fs::path(out_dir) / "raw.manifest").string();
    std::string digest = write_raw_manifest(man, manifest_path);
    write_config_sidecar(manifest_path, cfg);
    record_run(out_dir, "synth", cfg, {}, {{manifest_path, digest}}, now_seconds() - t0, {});
    std::printf("synth: %d samples -> %s (digest %s)\n", spec.n, manifest_path.c_str(), digest.c_str());
    return 0;
}

int run_govern(const CommonOpts& opts, const std::string& in_path, const std::string& out_path) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    Manifest raw = load_manifest(in_path);
    if (raw.kind == ManifestKind::governed) throw InputError("govern expects a raw or sieved manifest");

    BackboneConfig bc = backbone_from_config(cfg);
    auto backbone = make_backbone(bc);
    CompareSettings settings = compare_from_config(cfg);

    GovernorSpec spec;
    spec.name = "config";
    spec.selection = selection_from_config(cfg);
    spec.mode = parse_rewriter_mode(cfg.at("rewriter").at("mode").get<std::string>());
    spec.epsilon = cfg.at("evidence").at("epsilon").get<double>();
    spec.keep_scores = cfg.at("rewriter").at("store_scores").get<bool>();

    auto backend = make_rewriter_backend(cfg);
    std::vector<std::string> warnings;
    Manifest governed = apply_governor(raw, spec, *backbone, settings, cfg.at("seed").get<uint64_t>(), opts.workers,
                                       &warnings, backend.get());
    rebase_image_paths(governed, fs::path(out_path).parent_path().string());
    std::string digest = write_governed(governed, governed.governed, out_path);
    write_config_sidecar(out_path, cfg);
    record_run(fs::path(out_path).parent_path().string(), "govern", cfg, {{in_path, digest_file(in_path)}},
               {{out_path, digest}}, now_seconds() - t0, warnings);
    std::printf("govern: %zu samples -> %s (digest %s)\n", governed.count(), out_path.c_str(), digest.c_str());
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    return 0;
}

int run_sieve(const CommonOpts& opts, const std::string& in_path, const std::string& out_path) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    Manifest raw = load_manifest(in_path);
    SieveConfig sc = sieve_from_config(cfg);

    std::unique_ptr<DualEncoder> brief;
    std::unique_ptr<SampleEmbedder> embedder;
    if (sc.method != SieveMethod::random) {
        std::string kind = cfg.at("sieve").at("embedder").get<std::string>();
        if (kind == "class_code") {
            embedder = std::make_unique<ClassCodeEmbedder>(cfg.at("synthetic").at("vocab").get<std::vector<std::string>>());
        } else if (kind == "brief") {
            brief = std::make_unique<DualEncoder>(train_brief_embedder(raw, encoder_from_config(cfg),
                                                                       cfg.at("seed").get<uint64_t>()));
            embedder = std::make_unique<EncoderEmbedder>(*brief);
        } else if (kind == "checkpoint") {
            brief = std::make_unique<DualEncoder>(DualEncoder::load(cfg.at("sieve").at("checkpoint").get<std::string>()));
            embedder = std::make_unique<EncoderEmbedder>(*brief);
        } else {
            throw ConfigError("unknown sieve embedder: " + kind);
        }
    }
    Manifest out = sieve(raw, embedder.get(), sc);
    rebase_image_paths(out, fs::path(out_path).parent_path().string());
    std::string digest = write_sieved(out, sc, out_path);
    write_config_sidecar(out_path, cfg);
    record_run(fs::path(out_path).parent_path().string(), "sieve", cfg, {{in_path, digest_file(in_path)}},
               {{out_path, digest}}, now_seconds() - t0, {});
    std::printf("sieve: kept %zu of %zu -> %s (digest %s)\n", out.count(), raw.count(), out_path.c_str(),
                digest.c_str());
    return 0;
}

int run_train(const CommonOpts& opts, const std::string& in_path, const std::string& out_dir) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    Manifest manifest = load_manifest(in_path);
    EncoderConfig ecfg = encoder_from_config(cfg);
    DualEncoder model(ecfg);
    auto samples = load_train_samples(manifest, model);
    TrainConfig tcfg = train_from_config(cfg);
    TrainResult result = train(model, samples, tcfg);

    fs::create_directories(out_dir);
    std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
    model.save(ckpt, encoder_meta(ecfg, cfg, result.steps, result.total_tokens));
    std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
    std::string log_digest = write_train_log(result, log_path);
    write_config_sidecar(ckpt, cfg);
    record_run(out_dir, "train", cfg, {{in_path, digest_file(in_path)}},
               {{ckpt, digest_file(ckpt)}, {log_path, log_digest}}, now_seconds() - t0, {});
    double last_loss = result.log.empty() ? 0.0 : result.log.back().loss;
    std::printf("train: %d steps, %llu tokens, final loss %.4f -> %s\n", result.steps,
                static_cast<unsigned long long>(result.total_tokens), last_loss, ckpt.c_str());
    return 0;
}

int run_eval(const CommonOpts& opts, const std::string& ckpt, const std::string& in_path,
             const std::string& out_path) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    DualEncoder model = DualEncoder::load(ckpt);
    Manifest manifest = load_manifest(in_path);
    EvalSet eval_set = load_eval_set(manifest, model);

    std::string csv = "task,metric,value\n";
    auto tasks = cfg.at("eval").at("tasks").get<std::vector<std::string>>();
    for (const auto& task : tasks) {
        EvalReport rep;
        if (task == "retrieval") {
            rep = retrieval_eval(model, eval_set);
        } else if (task == "zero_shot") {
            rep = zero_shot_classify(model, eval_set, cfg.at("synthetic").at("vocab").get<std::vector<std::string>>(),
                                     cfg.at("eval").at("template").get<std::string>());
        } else {
            throw ConfigError("unknown eval task: " + task);
        }
        rep.config_digest = config_digest(cfg);
        for (const auto& [metric, value] : rep.metrics) {
            char line[160];
            std::snprintf(line, sizeof(line), "%s,%s,%.6f\n", rep.task.c_str(), metric.c_str(), value);
            csv += line;
            std::printf("%s %s = %.4f\n", rep.task.c_str(), metric.c_str(), value);
        }
        char enc_line[96];
        std::snprintf(enc_line, sizeof(enc_line), "%s,encode_s_per_image,%.6f\n", rep.task.c_str(),
                      rep.encode_seconds_per_image);
        csv += enc_line;
    }
    write_file_atomic(out_path, csv);
    write_config_sidecar(out_path, cfg);
    record_run(fs::path(out_path).parent_path().string(), "eval", cfg,
               {{ckpt, digest_file(ckpt)}, {in_path, digest_file(in_path)}}, {{out_path, digest_string(csv)}},
               now_seconds() - t0, {});
    return 0;
}

int run_sweep(const CommonOpts& opts, const std::string& ckpt, const std::string& in_path, const std::string& r_list,
              const std::string& out_path) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    DualEncoder model = DualEncoder::load(ckpt);
    Manifest manifest = load_manifest(in_path);
    EvalSet eval_set = load_eval_set(manifest, model);
    BackboneConfig bc = backbone_from_config(cfg);
    auto backbone = make_backbone(bc);

    std::vector<double> r_values;
    if (!r_list.empty()) {
        std::string item;
        std::istringstream ss(r_list);
        while (std::getline(ss, item, ',')) r_values.push_back(std::stod(item));
    } else {
        r_values = cfg.at("sweep").at("r_values").get<std::vector<double>>();
    }
    int runs = cfg.at("sweep").at("timing_runs").get<int>();
    auto points = retention_sweep(model, *backbone, eval_set, r_values, runs);

    std::string csv = "r,tokens_per_image,median_encode_s,i2t_r@1,t2i_r@1\n";
    for (const auto& pt : points) {
        char line[200];
        std::snprintf(line, sizeof(line), "%.4f,%d,%.6f,%.6f,%.6f\n", pt.r, pt.tokens_per_image,
                      pt.median_encode_seconds, pt.retrieval.metrics.at("i2t_r@1"), pt.retrieval.metrics.at("t2i_r@1"));
        csv += line;
        std::printf("r=%.2f tokens=%d median_s=%.4f i2t_r@1=%.4f\n", pt.r, pt.tokens_per_image,
                    pt.median_encode_seconds, pt.retrieval.metrics.at("i2t_r@1"));
    }
    write_file_atomic(out_path, csv);
    write_config_sidecar(out_path, cfg);
    record_run(fs::path(out_path).parent_path().string(), "sweep", cfg,
               {{ckpt, digest_file(ckpt)}, {in_path, digest_file(in_path)}}, {{out_path, digest_string(csv)}},
               now_seconds() - t0, {});
    return 0;
}

int run_compare(const CommonOpts& opts, const std::string& in_path, const std::string& eval_path,
                const std::string& out_dir, const std::string& preset) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    Manifest raw = load_manifest(in_path);
    Manifest eval_manifest = load_manifest(eval_path);

    CompareSettings settings = compare_from_config(cfg);
    std::vector<std::string> names = preset.empty()
                                         ? cfg.at("compare").at("specs").get<std::vector<std::string>>()
                                         : compare_preset_spec_names(preset);
    std::vector<GovernorSpec> specs;
    for (const auto& n : names) specs.push_back(governor_spec_by_name(n, cfg));

    BackboneConfig bc = backbone_from_config(cfg);
    auto backbone = make_backbone(bc);

    std::unique_ptr<DualEncoder> brief;
    std::unique_ptr<SampleEmbedder> embedder;
    bool needs_embedder = false;
    for (const auto& s : specs)
        if (s.sieve && s.sieve->method != SieveMethod::random) needs_embedder = true;
    if (needs_embedder) {
        std::string kind = cfg.at("sieve").at("embedder").get<std::string>();
        if (kind == "brief") {
            brief = std::make_unique<DualEncoder>(
                train_brief_embedder(raw, encoder_from_config(cfg), cfg.at("seed").get<uint64_t>()));
            embedder = std::make_unique<EncoderEmbedder>(*brief);
        } else if (kind == "class_code") {
            embedder = std::make_unique<ClassCodeEmbedder>(settings.class_vocab);
        } else if (kind == "checkpoint") {
            brief = std::make_unique<DualEncoder>(DualEncoder::load(cfg.at("sieve").at("checkpoint").get<std::string>()));
            embedder = std::make_unique<EncoderEmbedder>(*brief);
        } else {
            throw ConfigError("unknown sieve embedder: " + kind);
        }
        settings.embedder = embedder.get();
    }

    DualEncoder probe(settings.encoder);
    EvalSet eval_set = load_eval_set(eval_manifest, probe);
    CompareReport report = compare_governors(raw, eval_set, specs, *backbone, settings);

    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "compare.csv").string();
    std::string table_path = (fs::path(out_dir) / "compare.txt").string();
    std::string csv = compare_report_csv(report);
    std::string table = compare_report_table(report);
    write_file_atomic(csv_path, csv);
    write_file_atomic(table_path, table);
    write_config_sidecar(csv_path, cfg);
    record_run(out_dir, "compare", cfg,
               {{in_path, digest_file(in_path)}, {eval_path, digest_file(eval_path)}},
               {{csv_path, digest_string(csv)}, {table_path, digest_string(table)}}, now_seconds() - t0,
               report.skipped);
    std::printf("%s", table.c_str());
    return 0;
}

int run_preview(const CommonOpts& opts, const std::string& in_path, const std::string& out_dir, int count) {
    json cfg = resolve_config(opts);
    double t0 = now_seconds();
    Manifest manifest = load_manifest(in_path);
    if (manifest.kind != ManifestKind::governed) throw InputError("preview expects a governed manifest");
    fs::create_directories(out_dir);
    std::map<std::string, std::string> outputs;
    size_t n = std::min<size_t>(manifest.count(), count <= 0 ? manifest.count() : static_cast<size_t>(count));
    for (size_t i = 0; i < n; ++i) {
        Image img = read_ppm(manifest.image_path(i));
        std::string out_path = (fs::path(out_dir) / (manifest.governed[i].id + ".masked.ppm")).string();
        export_masked_preview(manifest.governed[i], img, out_path);
        outputs[out_path] = digest_file(out_path);
    }
    record_run(out_dir, "preview", cfg, {{in_path, digest_file(in_path)}}, outputs, now_seconds() - t0, {});
    std::printf("preview: wrote %zu masked previews to %s\n", n, out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-level data governance pipeline for image-text corpora"};
    app.footer(config_key_listing());
    app.require_subcommand(1);

    CommonOpts opts;
    std::string in_path, out_path, eval_path, ckpt, r_list, compare_preset;
    int preview_count = 8;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth, opts);
    synth->add_option("--out", out_path, "output directory")->required();

    auto* govern = app.add_subcommand("govern", "token-level governance of a raw manifest");
    add_common(govern, opts);
    govern->add_option("--in", in_path, "raw manifest")->required();
    govern->add_option("--out", out_path, "governed manifest path")->required();

    auto* sieve_cmd = app.add_subcommand("sieve", "sample-level baseline governance");
    add_common(sieve_cmd, opts);
    sieve_cmd->add_option("--in", in_path, "raw manifest")->required();
    sieve_cmd->add_option("--out", out_path, "sieved manifest path")->required();

    auto* train_cmd = app.add_subcommand("train", "contrastive dual-encoder training");
    add_common(train_cmd, opts);
    train_cmd->add_option("--in", in_path, "governed (or raw) manifest")->required();
    train_cmd->add_option("--out", out_path, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "retrieval and zero-shot evaluation");
    add_common(eval_cmd, opts);
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--in", in_path, "evaluation manifest")->required();
    eval_cmd->add_option("--out", out_path, "report CSV path")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "inference retention-ratio sweep");
    add_common(sweep_cmd, opts);
    sweep_cmd->add_option("--ckpt", ckpt, "checkpoint path")->required();
    sweep_cmd->add_option("--in", in_path, "evaluation manifest")->required();
    sweep_cmd->add_option("--r", r_list, "comma-separated retention ratios");
    sweep_cmd->add_option("--out", out_path, "sweep CSV path")->required();

    auto* compare_cmd = app.add_subcommand("compare", "governor comparison at equal token budget");
    add_common(compare_cmd, opts);
    compare_cmd->add_option("--in", in_path, "raw training manifest")->required();
    compare_cmd->add_option("--eval", eval_path, "evaluation manifest")->required();
    compare_cmd->add_option("--out", out_path, "output directory")->required();
    compare_cmd->add_option("--spec-preset", compare_preset, "governor set preset, e.g. fine-vs-coarse");

    auto* preview_cmd = app.add_subcommand("preview", "masked previews with evidence sidecars");
    add_common(preview_cmd, opts);
    preview_cmd->add_option("--in", in_path, "governed manifest")->required();
    preview_cmd->add_option("--out", out_path, "output directory")->required();
    preview_cmd->add_option("--count", preview_count, "previews to write")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(opts, out_path);
        if (govern->parsed()) return run_govern(opts, in_path, out_path);
        if (sieve_cmd->parsed()) return run_sieve(opts, in_path, out_path);
        if (train_cmd->parsed()) return run_train(opts, in_path, out_path);
        if (eval_cmd->parsed()) return run_eval(opts, ckpt, in_path, out_path);
        if (sweep_cmd->parsed()) return run_sweep(opts, ckpt, in_path, r_list, out_path);
        if (compare_cmd->parsed()) return run_compare(opts, in_path, eval_path, out_path, compare_preset);
        if (preview_cmd->parsed()) return run_preview(opts, in_path, out_path, preview_count);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IOError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 3;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 3;
    } catch (const IntegrityError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 3;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 4;
    }
    return 0;
}
