// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier end-to-end checks share one synthetic benchmark:
// 2000 pairs on an 8x8 grid over a 16-class vocabulary with caption
// corruptions enabled, fixed token budget, three training seeds.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "tokgov/caption.hpp"
#include "tokgov/config.hpp"
#include "tokgov/eval.hpp"
#include "tokgov/governor.hpp"
#include "tokgov/manifest.hpp"
#include "tokgov/nn.hpp"
#include "tokgov/synthetic.hpp"
#include "tokgov/trainer.hpp"

using namespace tokgov;
using nn::Graph;
using nn::Mat;
using nn::Node;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, double seconds, const std::string& detail) {
    std::printf("[%s] %-24s (%6.1fs) %s\n", ok ? "PASS" : "FAIL", name.c_str(), seconds, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

struct Check {
    bool ok = true;
    std::string detail;
    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

// ---- shared benchmark ---------------------------------------------------

struct Benchmark {
    std::filesystem::path root;
    Manifest train_raw;
    Manifest eval320;
    Manifest eval500;
    std::vector<std::string> vocab = default_class_vocab();

    EncoderConfig encoder() const {
        EncoderConfig e;
        e.embed_dim = 24;
        e.vision = {2, 24, 4};
        e.text = {1, 24, 4};
        e.patch_size = 4;
        e.max_patches = 64;
        e.max_text_len = 16;
        e.text_vocab = synthetic_wordlist(vocab);
        return e;
    }
    TrainConfig trainer() const {
        TrainConfig t;
        t.batch = 64;
        t.base_lr = 4e-3;
        t.warmup_epochs = 1;
        t.weight_decay = 0.05;
        return t;
    }
    CompareSettings settings() const {
        CompareSettings s;
        s.token_budget = 1200000;
        s.seeds = {1, 2, 3};
        s.encoder = encoder();
        s.train = trainer();
        s.patch_size = 4;
        s.epsilon = 0.7;
        s.class_vocab = vocab;
        return s;
    }
};

Benchmark make_benchmark() {
    Benchmark b;
    b.root = std::filesystem::path("acceptance_tmp");

    SyntheticSpec spec;
    spec.n = 2000;
    spec.rows = 8;
    spec.cols = 8;
    spec.patch_size = 4;
    spec.vocab = b.vocab;
    spec.signal_min = 4;
    spec.signal_max = 16;
    spec.noise_level = 0.15;
    spec.corruption = {true, true, true};
    spec.seed = 2024;
    b.train_raw = generate_synthetic(spec, (b.root / "train").string());

    SyntheticSpec clean = spec;
    clean.corruption = {};
    clean.n = 320;
    clean.seed = 7077;
    b.eval320 = generate_synthetic(clean, (b.root / "eval320").string());
    clean.n = 500;
    clean.seed = 7500;
    b.eval500 = generate_synthetic(clean, (b.root / "eval500").string());
    return b;
}

GovernorSpec arm(const std::string& name, SelectionStrategy strategy, double r, RewriterMode mode) {
    GovernorSpec s;
    s.name = name;
    s.selection = {strategy, r, 4, 0};
    s.mode = mode;
    s.epsilon = 0.7;
    return s;
}

// ---- criteria -------------------------------------------------------------

void scoring_oracle() {
    double t0 = now_seconds();
    Check c;
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        int m = rng.uniform_int(1, 32);
        int d = rng.uniform_int(1, 16);
        int dk = rng.uniform_int(1, 16);
        TokenSet ts;
        ts.tokens = Mat::randn(m, d, 1.0, rng);
        ts.cls.resize(static_cast<size_t>(d));
        for (auto& v : ts.cls) v = rng.normal();
        AttentionProjection proj{Mat::randn(d, dk, 1.0, rng), Mat::randn(d, dk, 1.0, rng), dk};
        PatchScores got = score_patches(ts, proj);
        for (int t = 0; t < m; ++t) {
            double want = 0.0;
            for (int j = 0; j < dk; ++j) {
                double q = 0.0, k = 0.0;
                for (int i = 0; i < d; ++i) {
                    q += ts.cls[static_cast<size_t>(i)] * proj.wq(i, j);
                    k += ts.tokens(t, i) * proj.wk(i, j);
                }
                want += q * k;
            }
            want /= std::sqrt(static_cast<double>(dk));
            if (std::abs(got.s[static_cast<size_t>(t)] - want) > 1e-6) {
                c.expect(false, "mismatch beyond 1e-6 at trial " + std::to_string(trial));
                break;
            }
        }
        if (!c.ok) break;
    }
    double dt = now_seconds() - t0;
    c.expect(dt < 10.0, "runtime over 10s");
    report("scoring-oracle", c.ok, dt, c.ok ? "100 random configs within 1e-6" : c.detail);
}

void selection_optimality() {
    double t0 = now_seconds();
    Check c;
    Rng rng(202);
    for (int m = 1; m <= 10 && c.ok; ++m) {
        for (int k = 1; k <= m && c.ok; ++k) {
            for (int trial = 0; trial < 50 && c.ok; ++trial) {
                PatchScores s;
                s.s.resize(static_cast<size_t>(m));
                // quantized scores force plenty of ties
                for (auto& v : s.s) v = rng.uniform_int(0, 5) / 5.0;
                SelectionConfig cfg{SelectionStrategy::topk, static_cast<double>(k) / m, 2, 0};
                auto chosen = select_patches(s, cfg);
                double got = 0.0;
                for (int i : chosen) got += s.s[static_cast<size_t>(i)];

                double best = -1e18;
                std::vector<int> best_set;
                for (int mask = 0; mask < (1 << m); ++mask) {
                    if (__builtin_popcount(static_cast<unsigned>(mask)) != k) continue;
                    double sum = 0.0;
                    std::vector<int> set;
                    for (int i = 0; i < m; ++i)
                        if (mask & (1 << i)) {
                            sum += s.s[static_cast<size_t>(i)];
                            set.push_back(i);
                        }
                    if (sum > best + 1e-12 || (std::abs(sum - best) <= 1e-12 && (best_set.empty() || set < best_set))) {
                        best = sum;
                        best_set = set;
                    }
                }
                if (std::abs(got - best) > 1e-9) c.expect(false, "suboptimal sum");
                if (chosen != best_set) c.expect(false, "tie not broken toward lowest index");
            }
        }
    }
    double dt = now_seconds() - t0;
    c.expect(dt < 30.0, "runtime over 30s");
    report("selection-optimality", c.ok, dt, c.ok ? "exhaustive max and tie rule for m<=10" : c.detail);
}

void itc_correctness() {
    double t0 = now_seconds();
    Check c;

    Mat img(2, 4), txt(2, 4);
    img(0, 0) = 1.0;
    img(1, 1) = 1.0;
    txt(0, 0) = 1.0;
    txt(1, 1) = 1.0;
    LossReport rep = itc_loss(img, txt, 1.0);
    double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    c.expect(std::abs(rep.loss - want) <= 1e-6, "orthogonal-pair loss off");

    // end-to-end analytic vs central differences over every parameter
    Rng rng(303);
    const double h = 1e-4;
    for (int trial = 0; trial < 50 && c.ok; ++trial) {
        EncoderConfig cfg;
        cfg.embed_dim = 8;
        // widths below 8 make the 4-element layer norms so sharply curved
        // that the h=1e-4 central difference itself carries > 1e-3 error
        cfg.vision = {rng.uniform_int(1, 2), 4 * rng.uniform_int(2, 3), 2};
        cfg.text = {1, 4 * rng.uniform_int(2, 3), 2};
        cfg.patch_size = 2;
        cfg.max_patches = 9;
        cfg.max_text_len = 6;
        cfg.text_vocab = {"red", "blue", "dot"};
        cfg.seed = 1000 + static_cast<uint64_t>(trial);
        DualEncoder model(cfg);

        Image i1(6, 6), i2(6, 6);
        for (auto& px : i1.pixels) px = static_cast<uint8_t>(rng.next_u64() % 256);
        for (auto& px : i2.pixels) px = static_cast<uint8_t>(rng.next_u64() % 256);
        GridSpec grid{3, 3, 2};
        auto item1 = model.make_image_item(i1, grid, {0, 2, 5});
        auto item2 = model.make_image_item(i2, grid, {1, 3, 4, 8});
        auto row1 = model.tokenizer().encode("red dot", 6);
        auto row2 = model.tokenizer().encode("blue dot here", 6);

        auto loss_value = [&] {
            Graph g;
            Node vi = model.encode_images(g, {item1, item2});
            Node vt = model.encode_texts(g, {row1, row2});
            auto r = g.itc_from_logits(g.mul_scalar_node(g.matmul_nt(vi, vt), model.logit_scale(g)));
            return r.loss->val(0, 0);
        };

        auto params = model.params();
        for (auto* p : params) p->t.grad.fill(0.0);
        Graph g;
        Node vi = model.encode_images(g, {item1, item2});
        Node vt = model.encode_texts(g, {row1, row2});
        auto r = g.itc_from_logits(g.mul_scalar_node(g.matmul_nt(vi, vt), model.logit_scale(g)));
        g.backward(r.loss);

        double num = 0.0, den = 0.0;
        for (auto* p : params) {
            for (size_t i = 0; i < p->t.val.size(); ++i) {
                double keep = p->t.val.a[i];
                p->t.val.a[i] = keep + h;
                double up = loss_value();
                p->t.val.a[i] = keep - h;
                double down = loss_value();
                p->t.val.a[i] = keep;
                double fd = (up - down) / (2.0 * h);
                double an = p->t.grad.a[i];
                num += (fd - an) * (fd - an);
                den += an * an;
            }
        }
        double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
        c.expect(rel <= 1e-3, "gradient rel error " + std::to_string(rel) + " at trial " + std::to_string(trial));
    }
    double dt = now_seconds() - t0;
    c.expect(dt < 120.0, "runtime over 2 minutes");
    report("itc-correctness", c.ok, dt, c.ok ? "loss value and 50 end-to-end gradient checks" : c.detail);
}

void threshold_monotonicity() {
    double t0 = now_seconds();
    Check c;
    Rng rng(404);
    for (int trial = 0; trial < 1000 && c.ok; ++trial) {
        ClassProbabilities p;
        int L = rng.uniform_int(1, 16);
        p.p.resize(static_cast<size_t>(L));
        p.vocabulary.resize(static_cast<size_t>(L));
        for (int j = 0; j < L; ++j) {
            p.p[static_cast<size_t>(j)] = rng.uniform();
            p.vocabulary[static_cast<size_t>(j)] = "class" + std::to_string(j);
        }
        auto e50 = extract_evidence(p, 0.5);
        auto e70 = extract_evidence(p, 0.7);
        auto e90 = extract_evidence(p, 0.9);

        auto contains = [](const VisualEvidence& ev, const std::string& name) {
            for (const auto& item : ev.items)
                if (item.name == name) return true;
            return false;
        };
        for (const auto& item : e90.items) c.expect(contains(e70, item.name), "e90 not within e70");
        for (const auto& item : e70.items) c.expect(contains(e50, item.name), "e70 not within e50");

        auto tally = [&](double eps) {
            size_t n = 0;
            for (double v : p.p) n += v > eps ? 1 : 0;
            return n;
        };
        c.expect(e50.items.size() == tally(0.5), "count at 0.5 wrong");
        c.expect(e70.items.size() == tally(0.7), "count at 0.7 wrong");
        c.expect(e90.items.size() == tally(0.9), "count at 0.9 wrong");
        c.expect(e90.items.size() <= e70.items.size() && e70.items.size() <= e50.items.size(),
                 "counts not shrinking");
    }
    report("threshold-monotonicity", c.ok, now_seconds() - t0,
           c.ok ? "nested evidence for 0.5/0.7/0.9 over 1000 vectors" : c.detail);
}

void budget_accounting() {
    double t0 = now_seconds();
    Check c;
    for (int m : {49, 196})
        for (double r : {1.0, 0.5, 0.25})
            c.expect(retained_count(r, m) == static_cast<int>(std::ceil(r * m)), "retained count");
    c.expect(retained_count(0.5, 196) == 98, "196 half");
    c.expect(retained_count(0.25, 196) == 49, "196 quarter");
    c.expect(retained_count(0.5, 49) == 25, "49 half");
    c.expect(retained_count(0.25, 49) == 13, "49 quarter");

    // ten-step token log equals the hand count
    std::filesystem::path dir("acceptance_tmp/budget");
    SyntheticSpec spec;
    spec.n = 48;
    spec.rows = 4;
    spec.cols = 4;
    spec.patch_size = 2;
    spec.vocab = {"red square", "blue circle", "green triangle"};
    spec.signal_min = 2;
    spec.signal_max = 4;
    spec.seed = 11;
    Manifest raw = generate_synthetic(spec, dir.string());
    Manifest governed = raw;
    governed.kind = ManifestKind::governed;
    governed.governed.clear();
    Rng sel(12);
    for (const auto& rec : raw.records) {
        GovernedRecord g;
        g.id = rec.id;
        g.image = rec.image;
        g.grid = {4, 4, 2};
        g.retained = sel.sample_without_replacement(16, 8);
        g.caption_out = rec.caption;
        g.caption_in = rec.caption;
        governed.governed.push_back(g);
    }
    EncoderConfig enc;
    enc.embed_dim = 8;
    enc.vision = {1, 8, 2};
    enc.text = {1, 8, 2};
    enc.patch_size = 2;
    enc.max_patches = 16;
    enc.max_text_len = 16;
    enc.text_vocab = synthetic_wordlist(spec.vocab);
    DualEncoder model(enc);
    auto samples = load_train_samples(governed, model);
    TrainConfig tc;
    tc.batch = 16;
    tc.epochs = 5;
    tc.seed = 13;
    TrainResult res = train(model, samples, tc);
    c.expect(res.steps >= 10, "need at least ten steps");

    uint64_t cum = 0;
    int step = 0;
    for (int epoch = 0; epoch < 5 && step < 10; ++epoch) {
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(fold_seed(13, "epoch" + std::to_string(epoch)));
        rng.shuffle(order);
        for (int bi = 0; bi < 3 && step < 10; ++bi) {
            for (int j = 0; j < 16; ++j) {
                const auto& s = samples[static_cast<size_t>(order[static_cast<size_t>(bi * 16 + j)])];
                cum += s.retained.size() + 1 + s.tokens.size();
            }
            c.expect(res.log[static_cast<size_t>(step)].tokens_cum == cum,
                     "token log mismatch at step " + std::to_string(step + 1));
            ++step;
        }
    }
    report("budget-accounting", c.ok, now_seconds() - t0,
           c.ok ? "ceil(r*m) for both grids, 10-step token log exact" : c.detail);
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(TOKGOV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
}

void determinism() {
    double t0 = now_seconds();
    Check c;
    std::string base = "acceptance_tmp/determinism";
    std::string corpus =
        " --set synthetic.n=120 --set synthetic.signal_min=4 --set synthetic.signal_max=16 --set synthetic.seed=5";
    c.expect(run_cli("synth --out " + base + "/c" + corpus) == 0, "synth failed");

    std::string gov = "govern --in " + base + "/c/raw.manifest --set selection.strategy=mix --set rewriter.mode=rewrite";
    c.expect(run_cli(gov + " --out " + base + "/g1.manifest") == 0, "govern 1 failed");
    c.expect(run_cli(gov + " --out " + base + "/g2.manifest") == 0, "govern 2 failed");
    c.expect(run_cli(gov + " --out " + base + "/g4.manifest --workers 4") == 0, "govern workers failed");
    if (c.ok) {
        c.expect(digest_file(base + "/g1.manifest") == digest_file(base + "/g2.manifest"), "govern rerun digest");
        c.expect(digest_file(base + "/g1.manifest") == digest_file(base + "/g4.manifest"), "govern worker digest");
    }

    std::string small_enc =
        " --set encoder.embed_dim=8 --set encoder.vision_layers=1 --set encoder.vision_width=8"
        " --set encoder.vision_heads=2 --set encoder.text_layers=1 --set encoder.text_width=8"
        " --set encoder.text_heads=2 --set train.batch=16 --set train.epochs=2";
    std::string train_cmd = "train --in " + base + "/g1.manifest" + small_enc;
    c.expect(run_cli(train_cmd + " --out " + base + "/r1") == 0, "train 1 failed");
    c.expect(run_cli(train_cmd + " --out " + base + "/r2") == 0, "train 2 failed");
    c.expect(run_cli(train_cmd + " --out " + base + "/r4 --workers 4") == 0, "train workers failed");
    if (c.ok) {
        c.expect(digest_file(base + "/r1/checkpoint.bin") == digest_file(base + "/r2/checkpoint.bin"),
                 "train rerun digest");
        c.expect(digest_file(base + "/r1/checkpoint.bin") == digest_file(base + "/r4/checkpoint.bin"),
                 "train worker digest");
    }
    report("determinism", c.ok, now_seconds() - t0,
           c.ok ? "govern/train digests stable across reruns and workers 1 vs 4" : c.detail);
}

void end_to_end_direction(const Benchmark& bench, CompareReport& out_report) {
    double t0 = now_seconds();
    Check c;
    SyntheticSaliencyBackbone backbone(bench.vocab);
    CompareSettings settings = bench.settings();
    DualEncoder probe(settings.encoder);
    EvalSet eval_set = load_eval_set(bench.eval320, probe);

    std::vector<GovernorSpec> specs = {
        arm("topk+rewrite", SelectionStrategy::topk, 0.5, RewriterMode::rewrite),
        arm("uniform*", SelectionStrategy::uniform, 0.5, RewriterMode::none),
    };
    GovernorSpec sieve_arm = arm("random-sieve", SelectionStrategy::topk, 1.0, RewriterMode::none);
    sieve_arm.sieve = SieveConfig{SieveMethod::random, 0.5, 8, true, 0};
    specs.push_back(sieve_arm);

    out_report = compare_governors(bench.train_raw, eval_set, specs, backbone, settings);
    c.expect(out_report.skipped.empty(), "arms skipped");
    double rw = out_report.mean_r1.count("topk+rewrite") ? out_report.mean_r1.at("topk+rewrite") : 0.0;
    double uni = out_report.mean_r1.count("uniform*") ? out_report.mean_r1.at("uniform*") : 1.0;
    double sv = out_report.mean_r1.count("random-sieve") ? out_report.mean_r1.at("random-sieve") : 1.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean R@1: topk+rewrite %.4f, uniform %.4f, random-sieve %.4f", rw, uni, sv);
    c.expect(rw - uni >= 0.02, "fine margin below 2 points");
    c.expect(uni > sv, "fine-grained baseline not above the coarse sieve");
    double dt = now_seconds() - t0;
    c.expect(dt < 900.0, "runtime over 15 minutes");
    report("e2e-direction", c.ok, dt, std::string(buf) + (c.ok ? "" : "; " + c.detail));
}

void caption_mode_ordering(const Benchmark& bench, const CompareReport& e2e_report) {
    double t0 = now_seconds();
    Check c;
    SyntheticSaliencyBackbone backbone(bench.vocab);
    CompareSettings settings = bench.settings();
    DualEncoder probe(settings.encoder);
    EvalSet eval_set = load_eval_set(bench.eval320, probe);

    std::vector<GovernorSpec> specs = {
        arm("topk+none", SelectionStrategy::topk, 0.5, RewriterMode::none),
        arm("topk+concat", SelectionStrategy::topk, 0.5, RewriterMode::concat),
    };
    CompareReport rep = compare_governors(bench.train_raw, eval_set, specs, backbone, settings);
    c.expect(rep.skipped.empty(), "arms skipped");
    double none_mean = rep.mean_r1.count("topk+none") ? rep.mean_r1.at("topk+none") : 1.0;
    double concat_mean = rep.mean_r1.count("topk+concat") ? rep.mean_r1.at("topk+concat") : 0.0;
    // the rewrite arm ran in the e2e criterion with identical data and seeds;
    // spec names do not feed its per-sample governance, so the value carries over
    double rewrite_mean = e2e_report.mean_r1.count("topk+rewrite") ? e2e_report.mean_r1.at("topk+rewrite") : 0.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean R@1: none %.4f < concat %.4f <= rewrite %.4f", none_mean, concat_mean,
                  rewrite_mean);
    c.expect(none_mean < concat_mean, "none not below concat");
    c.expect(concat_mean <= rewrite_mean, "concat above rewrite");
    report("caption-mode-ordering", c.ok, now_seconds() - t0, std::string(buf) + (c.ok ? "" : "; " + c.detail));
}

void full_patch_tuning(const Benchmark& bench, std::unique_ptr<DualEncoder>& model_for_sweep) {
    double t0 = now_seconds();
    Check c;
    SyntheticSaliencyBackbone backbone(bench.vocab);
    CompareSettings settings = bench.settings();
    GovernorSpec rw = arm("topk+rewrite", SelectionStrategy::topk, 0.5, RewriterMode::rewrite);
    Manifest governed = apply_governor(bench.train_raw, rw, backbone, settings, settings.seeds.front());

    DualEncoder probe(settings.encoder);
    EvalSet eval_set = load_eval_set(bench.eval320, probe);

    std::string detail;
    for (uint64_t seed : settings.seeds) {
        double r1[2] = {0.0, 0.0};
        for (int variant = 0; variant < 2; ++variant) {
            EncoderConfig ecfg = settings.encoder;
            ecfg.seed = fold_seed(seed, "fpt.encoder");
            auto model = std::make_unique<DualEncoder>(ecfg);
            auto data = load_train_samples(governed, *model);
            TrainConfig tcfg = settings.train;
            tcfg.epochs = 16;
            tcfg.seed = fold_seed(seed, "fpt.train");
            tcfg.full_patch_fraction = variant == 0 ? 0.0 : 0.08;
            train(*model, data, tcfg);
            EvalReport rep = retrieval_eval(*model, eval_set);  // full-image inputs
            r1[variant] = rep.metrics.at("i2t_r@1");
            if (variant == 1 && seed == settings.seeds.front()) model_for_sweep = std::move(model);
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "seed %llu: %.4f -> %.4f; ", static_cast<unsigned long long>(seed), r1[0],
                      r1[1]);
        detail += buf;
        c.expect(r1[1] >= r1[0], "full-patch phase decreased R@1 at seed " + std::to_string(seed));
    }
    report("full-patch-tuning", c.ok, now_seconds() - t0, detail + (c.ok ? "" : c.detail));
}

void retention_tradeoff(const Benchmark& bench, DualEncoder& trained) {
    double t0 = now_seconds();
    Check c;
    SyntheticSaliencyBackbone backbone(bench.vocab);
    EvalSet eval_set = load_eval_set(bench.eval500, trained);
    auto points = retention_sweep(trained, backbone, eval_set, {1.0, 0.5, 0.25}, 5);
    c.expect(points.size() == 3, "sweep size");
    c.expect(points[0].tokens_per_image == 64 && points[1].tokens_per_image == 32 && points[2].tokens_per_image == 16,
             "token counts not ceil(r*m)");
    c.expect(points[0].median_encode_seconds >= points[1].median_encode_seconds &&
                 points[1].median_encode_seconds >= points[2].median_encode_seconds,
             "median encode time not monotone");
    double full = points[0].retrieval.metrics.at("i2t_r@1");
    double half = points[1].retrieval.metrics.at("i2t_r@1");
    char buf[160];
    std::snprintf(buf, sizeof(buf), "medians %.3fs/%.3fs/%.3fs, R@1 r=1.0 %.4f vs r=0.5 %.4f",
                  points[0].median_encode_seconds, points[1].median_encode_seconds, points[2].median_encode_seconds,
                  full, half);
    c.expect(half >= full - 0.03, "half retention more than 3 points below full");
    report("retention-tradeoff", c.ok, now_seconds() - t0, std::string(buf) + (c.ok ? "" : "; " + c.detail));
}

void text_governor_contracts() {
    double t0 = now_seconds();
    Check c;
    std::vector<std::string> dict = synthetic_wordlist(default_class_vocab());

    Rng rng(505);
    auto random_word = [&rng] {
        int len = rng.uniform_int(1, 8);
        std::string w;
        for (int i = 0; i < len; ++i) w += static_cast<char>('a' + rng.uniform_int(0, 25));
        return w;
    };
    for (int trial = 0; trial < 1000 && c.ok; ++trial) {
        std::vector<std::string> words;
        int n = rng.uniform_int(0, 12);
        for (int i = 0; i < n; ++i) {
            words.push_back(rng.uniform() < 0.5
                                ? dict[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(dict.size()) - 1))]
                                : random_word());
            if (rng.uniform() < 0.25) words.push_back(words.back());
        }
        std::string input = join(words, " ");
        std::string once = denoise(input, dict);
        c.expect(denoise(once, dict) == once, "denoise not idempotent on: " + input);
    }

    VisualEvidence ev;
    ev.items = {{"steam locomotive", 0.9}, {"lakeshore", 0.8}};
    PromptBundle bundle = make_prompts(ev);
    auto concat_out = enhance("a photo at the lake", bundle, RewriterMode::concat, nullptr, dict);
    c.expect(concat_out.caption.find("steam locomotive") != std::string::npos &&
                 concat_out.caption.find("lakeshore") != std::string::npos,
             "concat missing evidence");
    TemplateRewriter backend;
    auto rewrite_out = enhance("a photo at the lake", bundle, RewriterMode::rewrite, &backend, dict);
    c.expect(rewrite_out.caption.find("steam locomotive") != std::string::npos &&
                 rewrite_out.caption.find("lakeshore") != std::string::npos,
             "rewrite missing evidence");

    // simulated transport failure: nothing listens on the discard port
    HttpRewriterConfig http_cfg;
    http_cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions";
    http_cfg.model = "m";
    http_cfg.timeout_seconds = 1;
    HttpRewriter http(http_cfg);
    std::vector<std::string> warnings;
    auto fallback = enhance("a photo at the lake", bundle, RewriterMode::rewrite, &http, dict, &warnings);
    c.expect(fallback.fell_back, "no fallback on transport failure");
    c.expect(fallback.caption.find("steam locomotive") != std::string::npos, "fallback missing evidence");
    c.expect(warnings.size() == 1, "fallback warning not logged");

    report("text-governor-contracts", c.ok, now_seconds() - t0,
           c.ok ? "idempotence x1000, evidence containment, logged fallback" : c.detail);
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    std::filesystem::remove_all("acceptance_tmp");
    double t0 = now_seconds();

    scoring_oracle();
    selection_optimality();
    itc_correctness();
    threshold_monotonicity();
    budget_accounting();
    text_governor_contracts();
    determinism();

    Benchmark bench = make_benchmark();
    CompareReport e2e_report;
    end_to_end_direction(bench, e2e_report);
    caption_mode_ordering(bench, e2e_report);
    std::unique_ptr<DualEncoder> sweep_model;
    full_patch_tuning(bench, sweep_model);
    if (sweep_model) {
        retention_tradeoff(bench, *sweep_model);
    } else {
        report("retention-tradeoff", false, 0.0, "no trained model available");
    }

    std::printf("acceptance total: %.1fs, %d failure(s)\n", now_seconds() - t0, g_failures);
    return g_failures == 0 ? 0 : 1;
}
