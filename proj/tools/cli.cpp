#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "t2t/evaluate.hpp"
#include "t2t/gradcheck.hpp"
#include "t2t/image_io.hpp"
#include "t2t/parallel.hpp"
#include "t2t/sampler.hpp"
#include "t2t/scene.hpp"

namespace t2t::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<std::uint64_t> parse_seed_text(const std::string& text, const char* what) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(text, &used, 0);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || text.front() == '-')
        throw UsageError(std::string(what) + ": not a non-negative integer: '" + text + "'");
    return v;
}

std::string path_string(const std::optional<fs::path>& p) { return p ? p->string() : std::string(); }

json path_or_null(const std::optional<std::string>& p) { return p ? json(*p) : json(nullptr); }

fs::path sidecar(const fs::path& out) { return fs::path(out.string() + ".run.json"); }

class RunManifest {
public:
    explicit RunManifest(std::string command) : start_(std::chrono::steady_clock::now()) {
        j_["command"] = std::move(command);
        j_["config"] = json::object();
        j_["seeds"] = json::object();
        j_["format_versions"] = format_versions();
        j_["inputs"] = json::object();
        j_["outputs"] = json::object();
    }
    json& operator[](const char* key) { return j_[key]; }
    void write(const fs::path& path) {
        j_["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f << j_.dump(2) << "\n";
    }

private:
    json j_;
    std::chrono::steady_clock::time_point start_;
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

std::vector<ManifestEntry> entries_of_split(const std::vector<ManifestEntry>& all, const std::string& split) {
    std::vector<ManifestEntry> out;
    for (const auto& e : all)
        if (split == "all" || e.split == split) out.push_back(e);
    return out;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

struct CorpusArgs {
    std::size_t n = 0;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    double val_fraction = 0.05;
};

struct CaptionArgs {
    std::string manifest, out;
    AnnotateParams params;
    std::optional<std::string> detector_url, vlm_url;
    int timeout = 30;
};

struct TrainArgs {
    std::optional<int> stage;
    std::string manifest, out_dir;
    std::optional<std::string> config, resume, init_checkpoint;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, batch_size;
    std::optional<double> learning_rate;
    std::vector<std::string> sets;
    bool quiet = false;
};

struct SampleArgs {
    std::string prompt, ckpt, out;
    std::optional<std::string> lora, image, mask, bbox;
    std::optional<std::uint64_t> seed;
    int steps = 32;
    int height = 64, width = 64;
    int dilation = 2;
    double guidance = 1.0;
    bool no_align = false;
};

struct EvalArgs {
    std::string manifest, ckpt, out;
    std::optional<std::string> lora, object_class;
    std::string modes = "t2i,edit";
    std::string split = "val";
    std::optional<std::size_t> limit;
    std::optional<std::uint64_t> seed;
    int steps = 32;
    double guidance = 1.0;
    int dilation = 2;
    int batch_size = 16;
};

struct GradArgs {
    std::optional<std::uint64_t> seed;
    GradCheckOptions opt;
    bool no_lora = false;
    std::optional<std::string> out;
};

struct SelfcheckArgs {
    std::optional<std::uint64_t> seed;
    int nms_sets = 1000;
    int frechet_pairs = 100;
    std::optional<std::string> out;
};

int run_corpus(const CorpusArgs& a, int workers, const std::optional<std::string>& env, std::ostream& out) {
    const std::uint64_t seed = resolve_seed(a.seed, std::nullopt, env);
    const std::size_t n_val = validation_count(a.n, a.val_fraction);
    RunManifest rm("corpus generate");
    const CorpusConfig cc;
    const fs::path dir(a.out_dir);
    fs::create_directories(dir / "images");
    const auto records = generate_corpus(a.n, seed, cc, workers);
    std::vector<ManifestEntry> entries(records.size());
    parallel_for(records.size(), workers, [&](std::size_t i) {
        const std::string rel = "images/" + records[i].id + ".png";
        write_png(dir / rel, records[i].image);
        entries[i] = to_manifest_entry(records[i], rel, i + n_val >= records.size() ? "val" : "train");
    });
    write_manifest(dir / "manifest.jsonl", entries);
    rm["config"] = {{"n", a.n}, {"val_fraction", a.val_fraction}, {"workers", workers}};
    rm["seeds"] = {{"corpus", seed}};
    rm["outputs"] = {{"manifest", (dir / "manifest.jsonl").string()}, {"images", (dir / "images").string()}};
    rm.write(dir / "run_manifest.json");
    out << "wrote " << entries.size() << " records (" << n_val << " val) to " << (dir / "manifest.jsonl").string()
        << "\n";
    return 0;
}

int run_caption(const CaptionArgs& a, int workers, std::ostream& out) {
    const fs::path in_path(a.manifest), out_path(a.out);
    if (fs::exists(out_path) && fs::equivalent(in_path, out_path))
        throw UsageError("--out must differ from --manifest");
    RunManifest rm("caption build");
    const auto entries = read_manifest(in_path);
    const fs::path in_dir = in_path.parent_path(), out_dir = out_path.parent_path();
    std::unique_ptr<DetectionClient> detector;
    if (a.detector_url) detector = std::make_unique<HttpDetectionClient>(*a.detector_url, a.timeout);
    std::vector<ManifestEntry> result(entries.size());
    std::size_t boxes = 0;
    parallel_for(entries.size(), workers, [&](std::size_t i) {
        const Image img = read_png(in_dir / entries[i].image_path);
        ManifestEntry e = recaption(entries[i], img, a.params, detector.get(), a.vlm_url);
        e.image_path = fs::proximate(fs::absolute(in_dir / entries[i].image_path), fs::absolute(out_dir)).generic_string();
        result[i] = std::move(e);
    });
    for (const auto& e : result) boxes += e.objects.size();
    if (!out_dir.empty()) fs::create_directories(out_dir);
    write_manifest(out_path, result);
    rm["config"] = {{"iou_threshold", a.params.iou_threshold},
                    {"min_side", a.params.min_side},
                    {"min_area", a.params.min_area},
                    {"class_aware", a.params.class_aware},
                    {"detector_url", path_or_null(a.detector_url)},
                    {"vlm_url", path_or_null(a.vlm_url)},
                    {"workers", workers}};
    rm["inputs"] = {{"manifest", a.manifest}};
    rm["outputs"] = {{"manifest", a.out}};
    rm.write(sidecar(out_path));
    out << "captioned " << result.size() << " records, " << boxes << " objects kept\n";
    return 0;
}

int run_train(const TrainArgs& a, int workers, const std::optional<std::string>& env, std::ostream& out) {
    std::map<std::string, std::string> file_values, flag_values;
    if (a.config) file_values = read_key_values(*a.config);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        flag_values[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    if (a.seed) flag_values["seed"] = std::to_string(*a.seed);
    if (a.epochs) flag_values["epochs"] = std::to_string(*a.epochs);
    if (a.batch_size) flag_values["batch_size"] = std::to_string(*a.batch_size);
    if (a.learning_rate) {
        std::ostringstream s;
        s.precision(17);
        s << *a.learning_rate;
        flag_values["learning_rate"] = s.str();
    }
    if (a.init_checkpoint) flag_values["init_checkpoint"] = *a.init_checkpoint;
    flag_values["workers"] = std::to_string(workers);
    TrainConfig config;
    try {
        config = resolve_train_config(a.stage, file_values, flag_values, env);
    } catch (const UsageError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    RunManifest rm("train");
    const fs::path manifest(a.manifest);
    const auto entries = entries_of_split(read_manifest(manifest), "train");
    if (entries.empty()) throw std::runtime_error("manifest has no train records");
    const auto records = load_records(entries, manifest.parent_path(), workers);
    RunOptions ro;
    if (a.resume) ro.resume = fs::path(*a.resume);
    ro.quiet = a.quiet;
    const RunResult res = run_training(config, records, a.out_dir, ro);

    rm["config"] = train_config_to_json(config);
    rm["seeds"] = {{"train", config.seed}};
    rm["inputs"] = {{"manifest", a.manifest},
                    {"config", path_or_null(a.config)},
                    {"resume", path_or_null(a.resume)},
                    {"init_checkpoint", config.init_checkpoint.empty() ? json(nullptr) : json(config.init_checkpoint)}};
    rm["outputs"] = {{"checkpoint", res.final_checkpoint.string()},
                     {"lora", res.final_lora ? json(res.final_lora->string()) : json(nullptr)},
                     {"metrics", (fs::path(a.out_dir) / "metrics.jsonl").string()}};
    rm.write(fs::path(a.out_dir) / "run_manifest.json");
    out << "final checkpoint " << res.final_checkpoint.string() << "\n";
    return 0;
}

int run_sample(const SampleArgs& a, SampleMode mode, int workers, const std::optional<std::string>& env,
               std::ostream& out, std::ostream& err) {
    SampleRequest req;
    req.mode = mode;
    req.prompt = a.prompt;
    req.steps = a.steps;
    req.seed = resolve_seed(a.seed, std::nullopt, env);
    req.guidance_scale = a.guidance;
    req.align = !a.no_align;
    req.height = a.height;
    req.width = a.width;
    if (mode == SampleMode::edit) {
        if (a.mask.has_value() == a.bbox.has_value()) throw UsageError("sample edit needs exactly one of --mask or --bbox");
        req.source = read_png(*a.image);
        if (a.mask) {
            req.mask = read_mask_png(*a.mask);
        } else {
            req.mask = object_mask(req.source->height, req.source->width, parse_bbox(*a.bbox), a.dilation);
        }
    }
    try {
        req.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    RunManifest rm(mode == SampleMode::t2i ? "sample t2i" : "sample edit");
    const auto loaded = load_model(a.ckpt, a.lora ? std::optional<fs::path>(*a.lora) : std::nullopt);
    const auto res = euler_sample(loaded.model, loaded.params, loaded.lora ? &*loaded.lora : nullptr, {req}, workers);
    const auto& r = res.at(0);
    if (r.prompt.warning) err << "warning: prompt is outside the caption grammar; using '" << r.prompt.text << "'\n";
    const fs::path out_path(a.out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_png(out_path, r.image);

    rm["config"] = {{"prompt", a.prompt},
                    {"aligned_prompt", r.prompt.text},
                    {"prompt_kind", to_string(r.prompt.kind)},
                    {"prompt_warning", r.prompt.warning},
                    {"steps", req.steps},
                    {"guidance_scale", req.guidance_scale},
                    {"align", req.align},
                    {"height", r.image.height},
                    {"width", r.image.width},
                    {"workers", workers},
                    {"model", config_to_json(loaded.model.config())}};
    if (mode == SampleMode::edit) {
        rm["config"]["bbox"] = a.bbox ? json(*a.bbox) : json(nullptr);
        rm["config"]["dilation"] = a.bbox ? json(a.dilation) : json(nullptr);
    }
    rm["seeds"] = {{"sample", req.seed}};
    rm["inputs"] = {{"checkpoint", a.ckpt}, {"lora", path_or_null(a.lora)}, {"image", path_or_null(a.image)},
                    {"mask", path_or_null(a.mask)}};
    rm["outputs"] = {{"image", a.out}};
    rm.write(sidecar(out_path));
    out << "wrote " << a.out << "\n";
    return 0;
}

int run_eval(const EvalArgs& a, int workers, const std::optional<std::string>& env, std::ostream& out) {
    EvalOptions opt;
    opt.modes.clear();
    try {
        for (const auto& m : split_commas(a.modes)) opt.modes.push_back(parse_eval_mode(m));
        if (a.object_class) opt.object_class = parse_object_class(*a.object_class);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (opt.modes.empty()) throw UsageError("--modes is empty");
    opt.steps = a.steps;
    opt.seed = resolve_seed(a.seed, std::nullopt, env);
    opt.guidance_scale = a.guidance;
    opt.dilation = a.dilation;
    opt.batch_size = a.batch_size;
    opt.workers = workers;

    RunManifest rm("eval");
    const fs::path manifest(a.manifest);
    auto entries = entries_of_split(read_manifest(manifest), a.split);
    if (a.limit && entries.size() > *a.limit) entries.resize(*a.limit);
    if (entries.empty()) throw std::runtime_error("no records in split '" + a.split + "'");
    const auto records = load_records(entries, manifest.parent_path(), workers);
    const auto loaded = load_model(a.ckpt, a.lora ? std::optional<fs::path>(*a.lora) : std::nullopt);
    const auto report = evaluate(loaded.model, loaded.params, loaded.lora ? &*loaded.lora : nullptr, records, opt);

    json opts = eval_options_to_json(opt);
    opts.erase("workers");  // does not affect the numbers
    const json body = {{"modes", to_json(report)},
                       {"options", opts},
                       {"seeds", {{"eval", opt.seed}}},
                       {"split", a.split},
                       {"records", records.size()},
                       {"checkpoint", a.ckpt},
                       {"lora", path_or_null(a.lora)},
                       {"model", config_to_json(loaded.model.config())}};
    write_json(a.out, body);
    rm["config"] = eval_options_to_json(opt);
    rm["config"]["split"] = a.split;
    rm["config"]["limit"] = a.limit ? json(*a.limit) : json(nullptr);
    rm["seeds"] = {{"eval", opt.seed}};
    rm["inputs"] = {{"manifest", a.manifest}, {"checkpoint", a.ckpt}, {"lora", path_or_null(a.lora)}};
    rm["outputs"] = {{"report", a.out}};
    rm.write(sidecar(a.out));
    out << body["modes"].dump(2) << "\n";
    return 0;
}

int run_grad_check(GradArgs a, const std::optional<std::string>& env, std::ostream& out) {
    RunManifest rm("grad-check");
    a.opt.seed = resolve_seed(a.seed, std::nullopt, env);
    a.opt.with_lora = !a.no_lora;
    const auto r = gradient_check(a.opt);
    const json body = {{"checked", r.checked},
                       {"max_rel_err", r.max_rel_err},
                       {"worst_name", r.worst_name},
                       {"worst_analytic", r.worst_analytic},
                       {"worst_numeric", r.worst_numeric},
                       {"passed", r.passed}};
    out << (r.passed ? "PASS" : "FAIL") << " grad-check: " << r.checked << " parameters, max rel err "
        << r.max_rel_err << " (" << r.worst_name << ")\n";
    if (a.out) {
        write_json(*a.out, body);
        rm["config"] = {{"dim", a.opt.dim},           {"depth", a.opt.depth}, {"heads", a.opt.heads},
                        {"fraction", a.opt.fraction}, {"step", a.opt.step},   {"tolerance", a.opt.tolerance},
                        {"with_lora", a.opt.with_lora}};
        rm["seeds"] = {{"grad_check", a.opt.seed}};
        rm["outputs"] = {{"report", *a.out}};
        rm.write(sidecar(*a.out));
    }
    return r.passed ? 0 : 1;
}

int run_selfcheck(const SelfcheckArgs& a, const std::optional<std::string>& env, std::ostream& out) {
    RunManifest rm("selfcheck");
    const std::uint64_t seed = resolve_seed(a.seed, std::nullopt, env, 1);
    const auto results = oracle::run_oracle_suites(seed, a.nms_sets, a.frechet_pairs);
    bool ok = true;
    json body = json::array();
    for (const auto& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        ok = ok && r.passed;
        body.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    }
    if (a.out) {
        write_json(*a.out, body);
        rm["config"] = {{"nms_sets", a.nms_sets}, {"frechet_pairs", a.frechet_pairs}};
        rm["seeds"] = {{"selfcheck", seed}};
        rm["outputs"] = {{"report", *a.out}};
        rm.write(sidecar(*a.out));
    }
    return ok ? 0 : 1;
}

}  // namespace

json format_versions() {
    return {{"checkpoint", kCheckpointFormatVersion}, {"manifest", 1}, {"eval_report", 1}, {"run_manifest", 1}};
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& config,
                           const std::optional<std::string>& env, std::uint64_t fallback) {
    if (flag) return *flag;
    if (config) return *config;
    if (env && !env->empty()) return *parse_seed_text(*env, "TEXT2TRAFFIC_SEED");
    return fallback;
}

TrainConfig resolve_train_config(const std::optional<int>& stage_flag,
                                 const std::map<std::string, std::string>& file_values,
                                 const std::map<std::string, std::string>& flag_values,
                                 const std::optional<std::string>& env_seed) {
    int stage = 1;
    if (stage_flag) {
        stage = *stage_flag;
    } else if (auto it = file_values.find("stage"); it != file_values.end()) {
        TrainConfig probe;
        apply_config_value(probe, "stage", it->second);
        stage = probe.stage;
    }
    if (stage != 1 && stage != 2) throw UsageError("stage must be 1 or 2");
    TrainConfig c = TrainConfig::defaults_for_stage(stage);
    for (const auto& [k, v] : file_values) apply_config_value(c, k, v);
    for (const auto& [k, v] : flag_values) apply_config_value(c, k, v);
    c.stage = stage;
    if (!file_values.count("seed") && !flag_values.count("seed")) c.seed = resolve_seed(std::nullopt, std::nullopt, env_seed);
    c.validate();
    return c;
}

ManifestEntry recaption(const ManifestEntry& entry, const Image& image, const AnnotateParams& params,
                        DetectionClient* detector, const std::optional<std::string>& vlm_url) {
    if (image.width != entry.width || image.height != entry.height)
        throw IngestionError(entry.id + ": image size differs from the manifest");
    const SceneLayout layout = layout_of(entry);
    std::vector<DetectionBox> boxes;
    if (detector) {
        std::vector<std::string> classes;
        for (auto c : kAllClasses) classes.push_back(to_string(c));
        boxes = detector->detect(image, classes);
    } else {
        boxes = ground_truth_boxes(layout);
    }
    std::unique_ptr<ObjectCaptioner> captioner;
    if (vlm_url) captioner = std::make_unique<HttpObjectCaptioner>(*vlm_url, image);
    const CaptionRecord rec = annotate(boxes, layout, params, captioner.get());

    ManifestEntry out = entry;
    out.global_caption = rec.global_caption;
    out.objects.clear();
    for (const auto& [box, caption] : rec.object_captions) {
        ManifestObject obj;
        obj.bbox = box.bbox;
        try {
            obj.class_name = parse_object_class(box.class_name);
        } catch (const std::invalid_argument&) {
            throw IngestionError(entry.id + ": unknown detection class '" + box.class_name + "'");
        }
        obj.color = class_colors(obj.class_name).front();
        double best = 0.5;
        for (const auto& o : layout.objects) {
            if (o.class_name != obj.class_name) continue;
            const double v = iou(o.bbox, box.bbox);
            if (v >= best) {
                best = v;
                obj.color = o.color;
            }
        }
        obj.local_caption = caption;
        out.objects.push_back(std::move(obj));
    }
    return out;
}

Rect parse_bbox(const std::string& text) {
    const auto parts = split_commas(text);
    if (parts.size() != 4) throw UsageError("--bbox expects x0,y0,x1,y1");
    int v[4];
    for (int i = 0; i < 4; ++i) {
        std::size_t used = 0;
        try {
            v[i] = std::stoi(parts[std::size_t(i)], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != parts[std::size_t(i)].size()) throw UsageError("--bbox: bad number '" + parts[std::size_t(i)] + "'");
    }
    const Rect r{v[0], v[1], v[2], v[3]};
    if (!r.valid()) throw UsageError("--bbox: empty rectangle");
    return r;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const std::optional<std::string>& env_seed) {
    CLI::App app{"Synthetic traffic-scene generation and editing with a small flow-matching DiT", "t2t"};
    app.require_subcommand(1);
    int workers = 1;
    app.add_option("--workers", workers, "Threads used inside the command")->check(CLI::PositiveNumber);

    auto* corpus = app.add_subcommand("corpus", "Synthetic corpus")->require_subcommand(1);
    CorpusArgs ca;
    auto* gen = corpus->add_subcommand("generate", "Render a seeded corpus and its manifest");
    gen->add_option("--n", ca.n, "Number of images")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", ca.seed, "Corpus seed");
    gen->add_option("--out-dir", ca.out_dir, "Output directory")->required();
    gen->add_option("--val-fraction", ca.val_fraction, "Share of records in the val split")->check(CLI::Range(0.0, 0.999));
    gen->add_option("--workers", workers);

    auto* caption = app.add_subcommand("caption", "Captioning")->require_subcommand(1);
    CaptionArgs cap;
    auto* build = caption->add_subcommand("build", "Re-annotate a manifest into a new file");
    build->add_option("--manifest", cap.manifest, "Input manifest")->required()->check(CLI::ExistingFile);
    build->add_option("--out", cap.out, "Output manifest")->required();
    build->add_option("--iou-threshold", cap.params.iou_threshold, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
    build->add_option("--min-side", cap.params.min_side, "Smallest kept box side")->check(CLI::NonNegativeNumber);
    build->add_option("--min-area", cap.params.min_area, "Smallest kept box area")->check(CLI::NonNegativeNumber);
    build->add_option("--detector-url", cap.detector_url, "External detector endpoint");
    build->add_option("--vlm-url", cap.vlm_url, "External object-captioner endpoint");
    build->add_option("--timeout", cap.timeout, "Service timeout in seconds")->check(CLI::PositiveNumber);
    build->add_option("--workers", workers);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train stage 1 or stage 2");
    train->add_option("--stage", ta.stage, "Training stage")->check(CLI::IsMember({1, 2}));
    train->add_option("--manifest", ta.manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
    train->add_option("--out-dir", ta.out_dir, "Checkpoint directory")->required();
    train->add_option("--resume", ta.resume, "Model checkpoint of a finished epoch")->check(CLI::ExistingFile);
    train->add_option("--init-checkpoint", ta.init_checkpoint, "Stage-1 checkpoint for stage 2")->check(CLI::ExistingFile);
    train->add_option("--seed", ta.seed, "Training seed");
    train->add_option("--epochs", ta.epochs)->check(CLI::PositiveNumber);
    train->add_option("--batch-size", ta.batch_size)->check(CLI::PositiveNumber);
    train->add_option("--learning-rate", ta.learning_rate)->check(CLI::NonNegativeNumber);
    train->add_option("--set", ta.sets, "Override any config key (key=value)");
    train->add_flag("--quiet", ta.quiet, "No per-epoch progress");
    train->add_option("--workers", workers);

    auto* sample = app.add_subcommand("sample", "Generate or edit one image")->require_subcommand(1);
    SampleArgs sa;
    auto add_common = [&](CLI::App* s) {
        s->add_option("--prompt", sa.prompt, "Text prompt")->required();
        s->add_option("--ckpt", sa.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
        s->add_option("--lora", sa.lora, "LoRA sidecar")->check(CLI::ExistingFile);
        s->add_option("--seed", sa.seed, "Noise seed");
        s->add_option("--steps", sa.steps, "Euler steps")->check(CLI::PositiveNumber);
        s->add_option("--guidance", sa.guidance, "Classifier-free guidance scale")->check(CLI::NonNegativeNumber);
        s->add_flag("--no-align", sa.no_align, "Use the prompt verbatim");
        s->add_option("--out", sa.out, "Output PNG")->required();
        s->add_option("--workers", workers);
    };
    auto* t2i = sample->add_subcommand("t2i", "Text to image");
    add_common(t2i);
    t2i->add_option("--height", sa.height)->check(CLI::PositiveNumber);
    t2i->add_option("--width", sa.width)->check(CLI::PositiveNumber);
    auto* edit = sample->add_subcommand("edit", "Text-guided edit of a masked region");
    add_common(edit);
    edit->add_option("--image", sa.image, "Source PNG")->required()->check(CLI::ExistingFile);
    auto* mask_opt = edit->add_option("--mask", sa.mask, "Keep-mask PNG (0 = restore)")->check(CLI::ExistingFile);
    auto* bbox_opt = edit->add_option("--bbox", sa.bbox, "Region to restore as x0,y0,x1,y1");
    mask_opt->excludes(bbox_opt);
    edit->add_option("--dilation", sa.dilation, "Dilation of --bbox")->check(CLI::NonNegativeNumber);

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Reconstruction metrics on a manifest split");
    ev->add_option("--manifest", ea.manifest)->required()->check(CLI::ExistingFile);
    ev->add_option("--ckpt", ea.ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--lora", ea.lora)->check(CLI::ExistingFile);
    ev->add_option("--modes", ea.modes, "Comma list of t2i, edit, inpaint");
    ev->add_option("--out", ea.out, "Report JSON")->required();
    ev->add_option("--split", ea.split, "train, val or all");
    ev->add_option("--limit", ea.limit, "Use only the first N records");
    ev->add_option("--seed", ea.seed);
    ev->add_option("--steps", ea.steps)->check(CLI::PositiveNumber);
    ev->add_option("--guidance", ea.guidance)->check(CLI::NonNegativeNumber);
    ev->add_option("--object-class", ea.object_class, "Edit mode: only this class");
    ev->add_option("--dilation", ea.dilation)->check(CLI::NonNegativeNumber);
    ev->add_option("--batch-size", ea.batch_size)->check(CLI::PositiveNumber);
    ev->add_option("--workers", workers);

    GradArgs ga;
    auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the backward pass");
    gc->add_option("--seed", ga.seed);
    gc->add_option("--dim", ga.opt.dim)->check(CLI::PositiveNumber);
    gc->add_option("--depth", ga.opt.depth)->check(CLI::PositiveNumber);
    gc->add_option("--heads", ga.opt.heads)->check(CLI::PositiveNumber);
    gc->add_option("--fraction", ga.opt.fraction)->check(CLI::Range(0.0, 1.0));
    gc->add_option("--tolerance", ga.opt.tolerance)->check(CLI::PositiveNumber);
    gc->add_flag("--no-lora", ga.no_lora);
    gc->add_option("--out", ga.out, "Report JSON");

    SelfcheckArgs sc;
    auto* self = app.add_subcommand("selfcheck", "Run the brute-force oracle suites");
    self->add_option("--seed", sc.seed);
    self->add_option("--nms-sets", sc.nms_sets)->check(CLI::PositiveNumber);
    self->add_option("--frechet-pairs", sc.frechet_pairs)->check(CLI::PositiveNumber);
    self->add_option("--out", sc.out, "Report JSON");

    std::vector<std::string> argv_store{"t2t"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : argv_store) argv.push_back(s.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (!args.empty()) err << "error: " << e.what() << "\n";
        const CLI::App* at = &app;
        for (auto* s = at; s;) {
            const auto subs = s->get_subcommands();
            if (subs.empty()) break;
            at = s = subs.front();
        }
        err << at->help();
        return 2;
    }

    try {
        if (gen->parsed()) return run_corpus(ca, workers, env_seed, out);
        if (build->parsed()) return run_caption(cap, workers, out);
        if (train->parsed()) return run_train(ta, workers, env_seed, out);
        if (t2i->parsed()) return run_sample(sa, SampleMode::t2i, workers, env_seed, out, err);
        if (edit->parsed()) return run_sample(sa, SampleMode::edit, workers, env_seed, out, err);
        if (ev->parsed()) return run_eval(ea, workers, env_seed, out);
        if (gc->parsed()) return run_grad_check(ga, env_seed, out);
        if (self->parsed()) return run_selfcheck(sc, env_seed, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace t2t::cli
