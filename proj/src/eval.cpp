#include "tokgov/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tokgov/synthetic.hpp"

namespace tokgov {

using nn::Graph;
using nn::Mat;
using nn::Node;

EvalSet load_eval_set(const Manifest& manifest, const DualEncoder& model) {
    if (manifest.count() == 0) throw InputError("evaluation manifest is empty");
    EvalSet out;
    const int P = model.config().patch_size;
    for (size_t i = 0; i < manifest.count(); ++i) {
        Image img = read_ppm(manifest.image_path(i));
        if (img.width % P != 0 || img.height % P != 0)
            throw ShapeError("evaluation image not divisible by encoder patch size");
        GridSpec grid{img.height / P, img.width / P, P};
        if (i == 0) out.grid = grid;
        std::vector<int> all(static_cast<size_t>(grid.patches()));
        std::iota(all.begin(), all.end(), 0);
        out.items.push_back(model.make_image_item(img, grid, all));
        out.images.push_back(std::move(img));
        out.ids.push_back(manifest.records[i].id);
        out.captions.push_back(manifest.records[i].caption);
        out.labels.push_back(manifest.records[i].label);
    }
    return out;
}

namespace {

constexpr int kEncodeChunk = 32;

Mat copy_rows(const Node n) { return n->val; }

}  // namespace

Mat embed_eval_images(DualEncoder& model, const std::vector<DualEncoder::ImageItem>& items) {
    const int d = model.config().embed_dim;
    Mat out(static_cast<int>(items.size()), d);
    for (size_t start = 0; start < items.size(); start += kEncodeChunk) {
        size_t stop = std::min(items.size(), start + kEncodeChunk);
        Graph g;
        std::vector<DualEncoder::ImageItem> chunk(items.begin() + static_cast<long>(start),
                                                  items.begin() + static_cast<long>(stop));
        Mat embs = copy_rows(model.encode_images(g, chunk));
        for (size_t i = start; i < stop; ++i)
            std::copy(embs.row_ptr(static_cast<int>(i - start)), embs.row_ptr(static_cast<int>(i - start)) + d,
                      out.row_ptr(static_cast<int>(i)));
    }
    return out;
}

Mat embed_eval_texts(DualEncoder& model, const std::vector<std::string>& captions) {
    const int d = model.config().embed_dim;
    const int max_len = model.config().max_text_len;
    Mat out(static_cast<int>(captions.size()), d);
    for (size_t start = 0; start < captions.size(); start += kEncodeChunk) {
        size_t stop = std::min(captions.size(), start + kEncodeChunk);
        Graph g;
        std::vector<std::vector<int>> rows;
        for (size_t i = start; i < stop; ++i) rows.push_back(model.tokenizer().encode(captions[i], max_len));
        Mat embs = copy_rows(model.encode_texts(g, rows));
        for (size_t i = start; i < stop; ++i)
            std::copy(embs.row_ptr(static_cast<int>(i - start)), embs.row_ptr(static_cast<int>(i - start)) + d,
                      out.row_ptr(static_cast<int>(i)));
    }
    return out;
}

EvalReport zero_shot_from_embeddings(const Mat& img, const Mat& class_txt, const std::vector<std::string>& labels,
                                     const std::vector<std::string>& class_names) {
    const int n = img.rows, L = class_txt.rows;
    int hit1 = 0, hit5 = 0, labeled = 0;
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)].empty()) continue;
        std::vector<std::pair<double, int>> sims(static_cast<size_t>(L));
        for (int j = 0; j < L; ++j) {
            double dot = 0.0;
            for (int k = 0; k < img.cols; ++k) dot += img(i, k) * class_txt(j, k);
            sims[static_cast<size_t>(j)] = {dot, j};
        }
        std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;  // tie: lower class index wins
        });
        int truth = -1;
        for (int j = 0; j < L; ++j)
            if (class_names[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) truth = j;
        if (truth < 0) continue;
        ++labeled;
        if (sims[0].second == truth) ++hit1;
        for (int j = 0; j < std::min(5, L); ++j)
            if (sims[static_cast<size_t>(j)].second == truth) {
                ++hit5;
                break;
            }
    }
    if (labeled == 0) throw InputError("no labeled samples for zero-shot evaluation");

    EvalReport rep;
    rep.task = "zero_shot";
    rep.metrics["top1"] = static_cast<double>(hit1) / labeled;
    if (L >= 5) rep.metrics["top5"] = static_cast<double>(hit5) / labeled;
    return rep;
}

EvalReport zero_shot_classify(DualEncoder& model, const EvalSet& eval_set,
                              const std::vector<std::string>& class_names, const std::string& prompt_template) {
    if (class_names.empty()) throw ConfigError("zero-shot needs at least one class name");
    std::vector<std::string> prompts;
    for (const auto& c : class_names) {
        std::string p = prompt_template;
        size_t pos = p.find("{c}");
        if (pos == std::string::npos) throw ConfigError("class prompt template lacks a {c} slot");
        p.replace(pos, 3, c);
        prompts.push_back(p);
    }
    double t0 = now_seconds();
    Mat img = embed_eval_images(model, eval_set.items);
    double encode_s = (now_seconds() - t0) / std::max<size_t>(1, eval_set.items.size());
    Mat txt = embed_eval_texts(model, prompts);
    EvalReport rep = zero_shot_from_embeddings(img, txt, eval_set.labels, class_names);
    rep.encode_seconds_per_image = encode_s;
    return rep;
}

EvalReport retrieval_from_embeddings(const Mat& img, const Mat& txt) {
    const int n = img.rows;
    if (txt.rows != n) throw ShapeError("retrieval needs paired embeddings");
    Mat sims(n, n);
    nn::gemm_nt(img, txt, sims, false);

    auto recall = [&](bool i2t, int k) {
        int hits = 0;
        for (int i = 0; i < n; ++i) {
            // rank of the true partner among all candidates; ties by id order
            double own = i2t ? sims(i, i) : sims(i, i);
            int rank = 1;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double v = i2t ? sims(i, j) : sims(j, i);
                if (v > own || (v == own && j < i)) ++rank;
            }
            if (rank <= k) ++hits;
        }
        return static_cast<double>(hits) / n;
    };

    EvalReport rep;
    rep.task = "retrieval";
    for (int k : {1, 5, 10}) {
        if (k > 1 && n < k) continue;
        rep.metrics["i2t_r@" + std::to_string(k)] = recall(true, k);
        rep.metrics["t2i_r@" + std::to_string(k)] = recall(false, k);
    }
    return rep;
}

EvalReport retrieval_eval(DualEncoder& model, const EvalSet& eval_set) {
    double t0 = now_seconds();
    Mat img = embed_eval_images(model, eval_set.items);
    double encode_s = (now_seconds() - t0) / std::max<size_t>(1, eval_set.items.size());
    Mat txt = embed_eval_texts(model, eval_set.captions);
    EvalReport rep = retrieval_from_embeddings(img, txt);
    rep.encode_seconds_per_image = encode_s;
    return rep;
}

std::vector<SweepPoint> retention_sweep(DualEncoder& model, const VisionBackbone& backbone, const EvalSet& eval_set,
                                        const std::vector<double>& r_values, int timing_runs) {
    std::vector<SweepPoint> out;
    for (double r : r_values) {
        if (r <= 0.0 || r > 1.0) throw ConfigError("sweep retention ratios must lie in (0, 1]");
        SweepPoint pt;
        pt.r = r;

        // re-govern the eval images at this ratio with topk scores
        std::vector<DualEncoder::ImageItem> items;
        items.reserve(eval_set.items.size());
        const int m = eval_set.grid.patches();
        pt.tokens_per_image = retained_count(r, m);
        for (size_t i = 0; i < eval_set.images.size(); ++i) {
            ImageGrid grid = patchify(eval_set.images[i], eval_set.grid.patch);
            TokenSet tokens = backbone.embed(grid);
            PatchScores scores = score_patches(tokens, backbone.projections());
            SelectionConfig sel;
            sel.strategy = SelectionStrategy::topk;
            sel.r = r;
            auto retained = select_patches(scores, sel);
            items.push_back(model.make_image_item(eval_set.images[i], eval_set.grid, retained));
        }

        std::vector<double> times;
        Mat img;
        for (int run = 0; run < std::max(1, timing_runs); ++run) {
            double t0 = now_seconds();
            img = embed_eval_images(model, items);
            times.push_back(now_seconds() - t0);
        }
        std::sort(times.begin(), times.end());
        pt.median_encode_seconds = times[times.size() / 2];

        Mat txt = embed_eval_texts(model, eval_set.captions);
        pt.retrieval = retrieval_from_embeddings(img, txt);
        pt.retrieval.encode_seconds_per_image = pt.median_encode_seconds / std::max<size_t>(1, items.size());
        out.push_back(std::move(pt));
    }
    return out;
}

Manifest apply_governor(const Manifest& raw, const GovernorSpec& spec, const VisionBackbone& backbone,
                        const CompareSettings& settings, uint64_t seed, int workers,
                        std::vector<std::string>* warnings, RewriterBackend* backend) {
    const Manifest* source = &raw;
    Manifest sieved_storage;
    if (spec.sieve) {
        SieveConfig scfg = *spec.sieve;
        scfg.seed = fold_seed(seed, spec.name + ".sieve");
        if (settings.embedder) {
            sieved_storage = sieve(raw, settings.embedder, scfg);
        } else {
            ClassCodeEmbedder embedder(settings.class_vocab);
            sieved_storage = sieve(raw, &embedder, scfg);
        }
        source = &sieved_storage;
    }

    TemplateRewriter template_backend;
    RewriterBackend* rw = backend ? backend : &template_backend;
    std::vector<std::string> dictionary = synthetic_wordlist(settings.class_vocab);

    std::vector<GovernedRecord> governed(source->count());
    std::vector<std::vector<std::string>> warn_per(source->count());
    parallel_for(source->count(), workers, [&](size_t i) {
        const auto& rec = source->records[i];
        Image img = read_ppm(source->image_path(i));
        SelectionConfig sel = spec.selection;
        sel.seed = fold_seed(seed, spec.name + ".sel." + rec.id);
        GovernedRecord g = govern_image(rec, img, settings.patch_size, backbone, sel, spec.epsilon, spec.keep_scores);
        VisualEvidence ev;
        ev.items = g.evidence;
        PromptBundle bundle = make_prompts(ev, settings.prompts);
        EnhanceResult enhanced = enhance(rec.caption, bundle, spec.mode, rw, dictionary, &warn_per[i]);
        g.caption_out = enhanced.caption;
        governed[i] = std::move(g);
    });
    if (warnings)
        for (auto& w : warn_per)
            for (auto& s : w) warnings->push_back(s);

    Manifest out;
    out.kind = ManifestKind::governed;
    out.base_dir = source->base_dir;
    out.records.reserve(governed.size());
    out.governed = std::move(governed);
    for (const auto& g : out.governed) {
        RawRecord r;
        r.id = g.id;
        r.image = g.image;
        r.caption = g.caption_out;
        r.label = g.label;
        out.records.push_back(std::move(r));
    }
    return out;
}

CompareReport compare_governors(const Manifest& raw, const EvalSet& eval_set,
                                const std::vector<GovernorSpec>& specs, const VisionBackbone& backbone,
                                const CompareSettings& settings) {
    if (settings.token_budget == 0) throw ConfigError("comparison requires a shared token budget");
    if (settings.seeds.size() < 1) throw ConfigError("comparison requires at least one seed");
    CompareReport report;

    for (const auto& spec : specs) {
        // declared per-step token cost decides feasibility under the budget
        double t0 = now_seconds();
        Manifest governed;
        std::vector<std::string> warnings;
        try {
            governed = apply_governor(raw, spec, backbone, settings, settings.seeds.front(), 1, &warnings);
        } catch (const std::exception& e) {
            report.skipped.push_back(spec.name + ": governance failed: " + e.what());
            continue;
        }
        double overhead = now_seconds() - t0;

        EncoderConfig enc = settings.encoder;
        DualEncoder probe(enc);
        std::vector<TrainSample> samples;
        try {
            samples = load_train_samples(governed, probe);
        } catch (const std::exception& e) {
            report.skipped.push_back(spec.name + ": sample load failed: " + e.what());
            continue;
        }
        std::vector<const TrainSample*> head;
        for (int i = 0; i < std::min<int>(settings.train.batch, static_cast<int>(samples.size())); ++i)
            head.push_back(&samples[static_cast<size_t>(i)]);
        if (batch_token_cost(head, false) > settings.token_budget) {
            report.skipped.push_back(spec.name + ": token budget below one training step");
            continue;
        }

        // budget-aligned schedule: every arm anneals over the steps its token
        // budget affords, so slower-per-step arms are not left mid-schedule
        double avg_sample_tokens = 0.0;
        for (const auto& s : samples) avg_sample_tokens += static_cast<double>(s.retained.size() + 1 + s.tokens.size());
        avg_sample_tokens /= static_cast<double>(samples.size());
        int b = std::min<int>(settings.train.batch, static_cast<int>(samples.size()));
        int steps_per_epoch = static_cast<int>(std::max<size_t>(1, samples.size() / static_cast<size_t>(b)));
        double steps_budget = static_cast<double>(settings.token_budget) / (avg_sample_tokens * b);
        int epochs = std::max(1, static_cast<int>(std::llround(steps_budget / steps_per_epoch)));

        std::vector<double> r1s;
        for (uint64_t seed : settings.seeds) {
            EncoderConfig ecfg = settings.encoder;
            ecfg.seed = fold_seed(seed, spec.name + ".encoder");
            DualEncoder model(ecfg);
            std::vector<TrainSample> data = load_train_samples(governed, model);
            TrainConfig tcfg = settings.train;
            tcfg.seed = fold_seed(seed, spec.name + ".train");
            tcfg.token_budget = settings.token_budget;
            tcfg.epochs = epochs;
            TrainResult tr = train(model, data, tcfg);

            EvalReport retr = retrieval_eval(model, eval_set);
            EvalReport zs = zero_shot_classify(model, eval_set, settings.class_vocab);
            CompareRow row;
            row.governor = spec.name;
            row.seed = seed;
            row.r_at_1 = retr.metrics.at("i2t_r@1");
            row.top1 = zs.metrics.at("top1");
            row.overhead_seconds = overhead;
            row.tokens = tr.total_tokens;
            report.rows.push_back(row);
            r1s.push_back(row.r_at_1);
        }
        double mean = std::accumulate(r1s.begin(), r1s.end(), 0.0) / static_cast<double>(r1s.size());
        double var = 0.0;
        for (double v : r1s) var += (v - mean) * (v - mean);
        var /= static_cast<double>(r1s.size());
        report.mean_r1[spec.name] = mean;
        report.std_r1[spec.name] = std::sqrt(var);
    }
    return report;
}

std::string compare_report_csv(const CompareReport& report) {
    std::ostringstream out;
    out << "governor,seed,metric,value,overhead_s,tokens\n";
    for (const auto& row : report.rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%llu,i2t_r@1,%.6f,%.3f,%llu\n", row.governor.c_str(),
                      static_cast<unsigned long long>(row.seed), row.r_at_1, row.overhead_seconds,
                      static_cast<unsigned long long>(row.tokens));
        out << buf;
        std::snprintf(buf, sizeof(buf), "%s,%llu,top1,%.6f,%.3f,%llu\n", row.governor.c_str(),
                      static_cast<unsigned long long>(row.seed), row.top1, row.overhead_seconds,
                      static_cast<unsigned long long>(row.tokens));
        out << buf;
    }
    return out.str();
}

std::vector<double> EncoderEmbedder::embed_image(const Manifest& manifest, size_t index) const {
    Image img = read_ppm(manifest.image_path(index));
    const int P = model_.config().patch_size;
    GridSpec grid{img.height / P, img.width / P, P};
    std::vector<int> all(static_cast<size_t>(grid.patches()));
    std::iota(all.begin(), all.end(), 0);
    return model_.embed_image(model_.make_image_item(img, grid, all));
}

std::vector<double> EncoderEmbedder::embed_text(const std::string& caption) const {
    return model_.embed_text(caption);
}

DualEncoder train_brief_embedder(const Manifest& raw, const EncoderConfig& cfg, uint64_t seed) {
    Manifest shard;
    shard.kind = ManifestKind::raw;
    shard.base_dir = raw.base_dir;
    for (size_t i = 0; i < raw.count(); i += 10) shard.records.push_back(raw.records[i]);
    if (shard.records.empty()) shard.records = raw.records;

    EncoderConfig ecfg = cfg;
    ecfg.seed = fold_seed(seed, "brief-embedder");
    DualEncoder model(ecfg);
    auto samples = load_train_samples(shard, model);
    TrainConfig tcfg;
    tcfg.batch = std::min<int>(32, static_cast<int>(samples.size()));
    tcfg.epochs = 3;
    tcfg.base_lr = 3e-3;
    tcfg.warmup_epochs = 1;
    tcfg.seed = ecfg.seed;
    train(model, samples, tcfg);
    return model;
}

std::string compare_report_table(const CompareReport& report) {
    std::ostringstream out;
    out << "governor                 mean R@1   std      mean top1  overhead_s\n";
    std::vector<std::string> names;
    for (const auto& [name, _] : report.mean_r1) names.push_back(name);
    for (const auto& name : names) {
        double top1_sum = 0.0, overhead = 0.0;
        int count = 0;
        for (const auto& row : report.rows)
            if (row.governor == name) {
                top1_sum += row.top1;
                overhead = row.overhead_seconds;
                ++count;
            }
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-24s %8.4f   %6.4f   %8.4f   %8.2f\n", name.c_str(),
                      report.mean_r1.at(name), report.std_r1.at(name), count ? top1_sum / count : 0.0, overhead);
        out << buf;
    }
    for (const auto& s : report.skipped) out << "skipped: " << s << "\n";
    return out.str();
}

}  // namespace tokgov
