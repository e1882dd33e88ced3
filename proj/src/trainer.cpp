#include "t2t/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "t2t/image_io.hpp"
#include "t2t/parallel.hpp"
#include "t2t/tokenizer.hpp"

namespace t2t {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kLoraTag = 0x6c6f7261ULL;
constexpr std::uint64_t kEpochTag = 0x65706f6368ULL;
constexpr std::uint64_t kBatchTag = 0x6261746368ULL;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": expected a number, got '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long d = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": expected an integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key " + key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

std::string buckets_to_string(const std::vector<std::pair<int, int>>& buckets) {
    std::string s;
    for (const auto& [h, w] : buckets) s += (s.empty() ? "" : ",") + std::to_string(h) + "x" + std::to_string(w);
    return s;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[std::size_t(rng.uniform_int(0, int(i) - 1))]);
}

template <typename Vec>
void shuffle_any(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[std::size_t(rng.uniform_int(0, int(i) - 1))]);
}

void adam_update(std::vector<float>& p, const std::vector<float>& g, AdamState& st, std::size_t begin,
                 std::size_t end, float clip_scale, const TrainConfig& c, double bc1, double bc2) {
    const float b1 = float(c.beta1), b2 = float(c.beta2);
    const float lr = float(c.learning_rate), wd = float(c.weight_decay), eps = float(c.adam_eps);
    const float inv_bc1 = float(1.0 / bc1), inv_bc2 = float(1.0 / bc2);
    for (std::size_t i = begin; i < end; ++i) {
        const float gi = g[i] * clip_scale;
        st.m[i] = b1 * st.m[i] + (1.0f - b1) * gi;
        st.v[i] = b2 * st.v[i] + (1.0f - b2) * gi * gi;
        const float mhat = st.m[i] * inv_bc1;
        const float vhat = st.v[i] * inv_bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
}

json metrics_to_json(const EpochMetrics& m) {
    return json{{"epoch", m.epoch}, {"mean_loss", m.mean_loss}, {"mean_masked_loss", m.mean_masked_loss}, {"steps", m.steps}};
}

EpochMetrics metrics_from_json(const json& j) {
    return {j.at("epoch").get<int>(), j.at("mean_loss").get<double>(), j.at("mean_masked_loss").get<double>(),
            j.at("steps").get<int>()};
}

Params<float> wrap(std::shared_ptr<const ParamLayout> layout, const std::vector<float>& values) {
    Params<float> p(std::move(layout));
    p.values = values;
    return p;
}

void write_metrics(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& m : metrics) out << metrics_to_json(m).dump() << '\n';
}

}  // namespace

TrainConfig TrainConfig::defaults_for_stage(int stage) {
    TrainConfig c;
    c.stage = stage;
    c.epochs = stage == 2 ? 5 : 16;
    c.weighted_loss = stage == 2;
    return c;
}

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("learning_rate must be finite and non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("betas must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
    if (!(mask_area_lo > 0.0 && mask_area_lo <= mask_area_hi && mask_area_hi <= 1.0))
        throw std::invalid_argument("mask area range must satisfy 0 < lo <= hi <= 1");
    if (!(full_mask_prob >= 0.0 && full_mask_prob <= 1.0)) throw std::invalid_argument("full_mask_prob outside [0, 1]");
    if (!(caption_dropout >= 0.0 && caption_dropout <= 1.0))
        throw std::invalid_argument("caption_dropout outside [0, 1]");
    if (object_dilation < 0) throw std::invalid_argument("object_dilation must be non-negative");
    if (!(grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be positive");
    if (workers < 1) throw std::invalid_argument("workers must be positive");
    if (stage == 2 && init_checkpoint.empty())
        throw std::invalid_argument("stage 2 requires init_checkpoint (a stage-1 checkpoint)");
    model.validate();
}

void apply_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "stage") c.stage = int(to_int(key, v));
    else if (key == "learning_rate") c.learning_rate = to_double(key, v);
    else if (key == "batch_size") c.batch_size = int(to_int(key, v));
    else if (key == "epochs") c.epochs = int(to_int(key, v));
    else if (key == "betas") {
        const auto parts = split(v, ',');
        if (parts.size() != 2) throw std::invalid_argument("config key betas: expected 'b1,b2'");
        c.beta1 = to_double(key, parts[0]);
        c.beta2 = to_double(key, parts[1]);
    } else if (key == "weight_decay") c.weight_decay = to_double(key, v);
    else if (key == "weighted_loss") c.weighted_loss = to_bool(key, v);
    else if (key == "seed") c.seed = std::uint64_t(to_int(key, v));
    else if (key == "mask_area_lo") c.mask_area_lo = to_double(key, v);
    else if (key == "mask_area_hi") c.mask_area_hi = to_double(key, v);
    else if (key == "full_mask_prob") c.full_mask_prob = to_double(key, v);
    else if (key == "object_dilation") c.object_dilation = int(to_int(key, v));
    else if (key == "caption_dropout") c.caption_dropout = to_double(key, v);
    else if (key == "grad_clip") c.grad_clip = to_double(key, v);
    else if (key == "timestep_mode") c.timestep_mode = parse_timestep_mode(v);
    else if (key == "buckets") {
        c.buckets.clear();
        if (!v.empty())
            for (const auto& item : split(v, ',')) {
                const auto x = item.find('x');
                if (x == std::string::npos) throw std::invalid_argument("config key buckets: expected HxW items");
                c.buckets.emplace_back(int(to_int(key, item.substr(0, x))), int(to_int(key, item.substr(x + 1))));
            }
    } else if (key == "workers") c.workers = int(to_int(key, v));
    else if (key == "init_checkpoint") c.init_checkpoint = v;
    else if (key == "patch") c.model.patch = int(to_int(key, v));
    else if (key == "dim") c.model.dim = int(to_int(key, v));
    else if (key == "heads") c.model.heads = int(to_int(key, v));
    else if (key == "depth") c.model.depth = int(to_int(key, v));
    else if (key == "text_vocab") c.model.text_vocab = int(to_int(key, v));
    else if (key == "max_text_tokens") c.model.max_text_tokens = int(to_int(key, v));
    else if (key == "lora_rank") c.model.lora_rank = int(to_int(key, v));
    else if (key == "lora_alpha") c.model.lora_alpha = to_double(key, v);
    else if (key == "ffn_mult") c.model.ffn_mult = int(to_int(key, v));
    else if (key == "predict_clean") c.model.predict_clean = to_bool(key, v);
    else throw std::invalid_argument("unknown config key: " + key);
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out[trim(line.substr(0, eq))] = value;
    }
    return out;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"stage", c.stage},
                {"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"betas", {c.beta1, c.beta2}},
                {"weight_decay", c.weight_decay},
                {"weighted_loss", c.weighted_loss},
                {"seed", c.seed},
                {"mask_area_lo", c.mask_area_lo},
                {"mask_area_hi", c.mask_area_hi},
                {"full_mask_prob", c.full_mask_prob},
                {"object_dilation", c.object_dilation},
                {"caption_dropout", c.caption_dropout},
                {"grad_clip", c.grad_clip},
                {"timestep_mode", to_string(c.timestep_mode)},
                {"buckets", buckets_to_string(c.buckets)},
                {"workers", c.workers},
                {"init_checkpoint", c.init_checkpoint},
                {"model", config_to_json(c.model)}};
}

std::vector<TrainRecord> load_records(const std::vector<ManifestEntry>& entries, const std::filesystem::path& base_dir,
                                      int workers) {
    std::vector<TrainRecord> out(entries.size());
    parallel_for(entries.size(), workers, [&](std::size_t i) {
        const auto& e = entries[i];
        TrainRecord r;
        r.id = e.id;
        r.image = read_png(base_dir / e.image_path);
        if (r.image.height != e.height || r.image.width != e.width)
            throw std::runtime_error("image " + e.image_path + " does not match the manifest size");
        r.global_caption = e.global_caption;
        r.objects = e.objects;
        out[i] = std::move(r);
    });
    return out;
}

TrainBatch build_batch(const std::vector<const TrainRecord*>& records, int stage, Rng& rng, const TrainConfig& config) {
    if (records.empty()) throw std::invalid_argument("build_batch: empty record list");
    if (stage != 1 && stage != 2) throw std::invalid_argument("build_batch: stage must be 1 or 2");
    const ModelConfig& mc = config.model;
    const auto& tok = Tokenizer::caption_vocabulary();
    TrainBatch batch;
    batch.height = records[0]->image.height;
    batch.width = records[0]->image.width;
    for (const TrainRecord* r : records) {
        const int h = r->image.height, w = r->image.width;
        if (h != batch.height || w != batch.width) throw std::invalid_argument("build_batch: mixed resolutions");
        TrainSample s;
        if (stage == 2 && !r->objects.empty()) {
            const auto& obj = r->objects[std::size_t(rng.uniform_int(0, int(r->objects.size()) - 1))];
            s.mask = object_mask(h, w, obj.bbox, config.object_dilation);
            s.caption = obj.local_caption;
        } else {
            s.mask = rng.bernoulli(config.full_mask_prob)
                         ? full_mask(h, w)
                         : large_area_mask(h, w, rng, {config.mask_area_lo, config.mask_area_hi});
            s.caption = r->global_caption;
        }
        s.tokens = rng.bernoulli(config.caption_dropout) ? std::vector<int>(std::size_t(mc.max_text_tokens), Tokenizer::kPad)
                                                          : tok.encode(s.caption, mc.max_text_tokens);
        s.t = sample_timestep(rng, config.timestep_mode);
        s.masked_image = apply_mask(r->image, s.mask);
        s.x = patchify(to_signed(r->image), mc.patch);
        s.eps.resize(s.x.size());
        for (auto& e : s.eps) e = float(rng.normal());
        auto ip = interpolate(s.x, s.eps, s.t);
        s.x_t = std::move(ip.x_t);
        s.v_target = std::move(ip.v_target);
        s.edited = downsample_indicator(s.mask, mc.patch);
        if (config.weighted_loss) {
            const std::size_t positions = s.edited.size();
            const auto cond = pool_positions(patchify(signed_condition_image(s.masked_image, s.mask), mc.patch), positions);
            s.weights = region_weights(cond, pool_positions(s.x, positions), s.edited).w;
        } else {
            s.weights.assign(s.edited.size(), 1.0f);
        }
        batch.samples.push_back(std::move(s));
    }
    return batch;
}

ModelInput<float> batch_input(const TrainBatch& batch, const ModelConfig& config) {
    std::vector<ConditionBundle> bundles;
    std::vector<std::vector<float>> latents;
    for (const auto& s : batch.samples) {
        bundles.push_back({s.masked_image, s.mask, s.tokens, s.t});
        latents.push_back(s.x_t);
    }
    return make_model_input(bundles, latents, config);
}

StepResult train_step(const DiT<float>& model, TrainState& state, const TrainBatch& batch, const TrainConfig& config,
                      std::int64_t step_index) {
    const TrainStage stage = config.stage == 2 ? TrainStage::stage2 : TrainStage::stage1;
    const LoraAdapter* lora = stage == TrainStage::stage2 && state.lora ? &*state.lora : nullptr;
    if (stage == TrainStage::stage2 && !lora) throw std::invalid_argument("train_step: stage 2 needs a LoRA adapter");
    const ModelInput<float> input = batch_input(batch, model.config());

    ForwardCache<float> cache;
    const auto pred = model.forward(state.params, lora, input, &cache, config.workers);
    std::vector<float> target, weights;
    for (const auto& s : batch.samples) {
        target.insert(target.end(), s.v_target.begin(), s.v_target.end());
        weights.insert(weights.end(), s.weights.begin(), s.weights.end());
    }
    StepResult res;
    res.loss = weighted_flow_loss(pred, target, weights);

    // Unweighted error inside edited positions, averaged over samples with edits.
    const std::size_t per = std::size_t(model.config().latent_token_dim());
    double masked_sum = 0.0;
    int masked_samples = 0;
    std::size_t base = 0;
    for (const auto& s : batch.samples) {
        double sq = 0.0;
        std::size_t n = 0;
        for (std::size_t p = 0; p < s.edited.size(); ++p) {
            if (s.edited[p]) continue;
            for (std::size_t c = 0; c < per; ++c) {
                const double d = double(pred[base + p * per + c]) - double(s.v_target[p * per + c]);
                sq += d * d;
            }
            n += per;
        }
        if (n > 0) {
            masked_sum += sq / double(n);
            ++masked_samples;
        }
        base += s.v_target.size();
    }
    res.masked_loss = masked_samples ? masked_sum / masked_samples : std::nan("");

    if (!std::isfinite(res.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step_index << " (t =";
        for (const auto& s : batch.samples) msg << ' ' << s.t;
        msg << "; masks =";
        for (const auto& s : batch.samples) msg << ' ' << to_string(s.mask.kind);
        msg << ")";
        throw TrainingError(msg.str());
    }

    const auto d_out = weighted_flow_loss_grad(pred, target, weights);
    const auto mask = model.trainable_mask(stage);
    Params<float> grad(model.layout());
    std::optional<Params<float>> lora_grad;
    if (lora) lora_grad.emplace(model.lora_layout());
    model.backward(state.params, lora, input, cache, d_out, grad, lora_grad ? &*lora_grad : nullptr, mask,
                   config.workers);

    double sq = 0.0;
    const auto& entries = model.layout()->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!mask[i]) continue;
        for (std::size_t k = entries[i].offset; k < entries[i].offset + entries[i].size; ++k)
            sq += double(grad.values[k]) * double(grad.values[k]);
    }
    if (lora_grad)
        for (float g : lora_grad->values) sq += double(g) * double(g);
    res.grad_norm = std::sqrt(sq);
    if (!std::isfinite(res.grad_norm))
        throw TrainingError("non-finite gradient at step " + std::to_string(step_index));
    const float clip = res.grad_norm > config.grad_clip ? float(config.grad_clip / res.grad_norm) : 1.0f;

    auto ensure = [](AdamState& st, std::size_t n) {
        if (st.m.size() != n) {
            st.m.assign(n, 0.0f);
            st.v.assign(n, 0.0f);
        }
    };
    ensure(state.opt, state.params.values.size());
    ++state.opt.step;
    const double bc1 = 1.0 - std::pow(config.beta1, double(state.opt.step));
    const double bc2 = 1.0 - std::pow(config.beta2, double(state.opt.step));
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (mask[i])
            adam_update(state.params.values, grad.values, state.opt, entries[i].offset,
                        entries[i].offset + entries[i].size, clip, config, bc1, bc2);
    if (lora) {
        ensure(state.lora_opt, state.lora->values.size());
        ++state.lora_opt.step;
        const double lb1 = 1.0 - std::pow(config.beta1, double(state.lora_opt.step));
        const double lb2 = 1.0 - std::pow(config.beta2, double(state.lora_opt.step));
        adam_update(state.lora->values, lora_grad->values, state.lora_opt, 0, state.lora->values.size(), clip, config,
                    lb1, lb2);
    }
    return res;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<TrainRecord>& records, const TrainConfig& config,
                                                    int epoch) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::pair<int, int> res{records[i].image.height, records[i].image.width};
        if (!config.buckets.empty() &&
            std::find(config.buckets.begin(), config.buckets.end(), res) == config.buckets.end())
            continue;
        groups[res].push_back(i);
    }
    Rng rng(derive_seed(config.seed, {kEpochTag, std::uint64_t(epoch)}));
    std::vector<std::vector<std::size_t>> batches;
    for (auto& [res, idx] : groups) {
        shuffle(idx, rng);
        for (std::size_t b = 0; b < idx.size(); b += std::size_t(config.batch_size))
            batches.emplace_back(idx.begin() + std::ptrdiff_t(b),
                                 idx.begin() + std::ptrdiff_t(std::min(idx.size(), b + std::size_t(config.batch_size))));
    }
    shuffle_any(batches, rng);
    return batches;
}

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
    return dir / name;
}

std::filesystem::path lora_sidecar_path(const std::filesystem::path& model_ckpt) {
    auto p = model_ckpt;
    p.replace_extension(".lora.ckpt");
    return p;
}

std::filesystem::path optimizer_sidecar_path(const std::filesystem::path& model_ckpt) {
    auto p = model_ckpt;
    p.replace_extension(".optim.ckpt");
    return p;
}

Checkpoint make_model_checkpoint(const ModelConfig& config, const ModelParams& params, json state) {
    Checkpoint c;
    c.kind = "model";
    c.config = config;
    c.state = std::move(state);
    append_params(c, params);
    return c;
}

Checkpoint make_lora_checkpoint(const ModelConfig& config, const LoraAdapter& lora, json state) {
    Checkpoint c;
    c.kind = "lora";
    c.config = config;
    c.state = std::move(state);
    append_params(c, lora);
    return c;
}

ModelParams load_model_params(const Checkpoint& ckpt, const DiT<float>& model) {
    if (ckpt.kind != "model") throw CheckpointError("expected a model checkpoint, got kind " + ckpt.kind);
    if (!(ckpt.config == model.config())) throw CheckpointError("checkpoint model config does not match");
    return extract_params(ckpt, model.layout());
}

LoraAdapter load_lora_params(const Checkpoint& ckpt, const DiT<float>& model) {
    if (ckpt.kind != "lora") throw CheckpointError("expected a lora checkpoint, got kind " + ckpt.kind);
    if (ckpt.config.lora_rank != model.config().lora_rank || ckpt.config.dim != model.config().dim ||
        ckpt.config.depth != model.config().depth)
        throw CheckpointError("LoRA sidecar does not match the model");
    return extract_params(ckpt, model.lora_layout());
}

LoadedModel load_model(const std::filesystem::path& ckpt_path, const std::optional<std::filesystem::path>& lora_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.kind != "model") throw CheckpointError("expected a model checkpoint, got kind " + ck.kind);
    ModelConfig config = ck.config;
    std::optional<Checkpoint> lc;
    if (lora_path) {
        lc = load_checkpoint(*lora_path);
        config.lora_rank = lc->config.lora_rank;
        config.lora_alpha = lc->config.lora_alpha;
    }
    DiT<float> model(config);
    ModelParams params = extract_params(ck, model.layout());
    std::optional<LoraAdapter> lora;
    if (lc) lora = load_lora_params(*lc, model);
    return {std::move(model), std::move(params), std::move(lora)};
}

namespace {

json resume_key(const TrainConfig& c) {
    json j = train_config_to_json(c);
    j.erase("epochs");
    j.erase("workers");
    return j;
}

}  // namespace

RunResult run_training(const TrainConfig& config_in, const std::vector<TrainRecord>& records,
                       const std::filesystem::path& out_dir, const RunOptions& options) {
    TrainConfig config = config_in;
    config.validate();
    if (records.empty()) throw std::invalid_argument("run_training: no training records");
    std::filesystem::create_directories(out_dir);

    TrainState state;
    int start_epoch = 0;
    std::vector<EpochMetrics> history;

    if (config.stage == 2) {
        const Checkpoint init = load_checkpoint(config.init_checkpoint);
        ModelConfig mc = init.config;
        mc.lora_rank = config.model.lora_rank;
        mc.lora_alpha = config.model.lora_alpha;
        config.model = mc;
    }
    const DiT<float> model(config.model);
    config.model = model.config();  // resolved vocabulary

    if (config.stage == 1) {
        state.params = model.init_params(derive_seed(config.seed, {kInitTag}));
    } else {
        const Checkpoint init = load_checkpoint(config.init_checkpoint);
        ModelConfig base = model.config();
        base.lora_rank = init.config.lora_rank;
        base.lora_alpha = init.config.lora_alpha;
        if (!(init.config == base)) throw CheckpointError("init checkpoint config mismatch");
        state.params = extract_params(init, model.layout());
        state.lora = model.init_lora(derive_seed(config.seed, {kLoraTag}));
    }

    if (options.resume) {
        const Checkpoint ck = load_checkpoint(*options.resume);
        const Checkpoint opt = load_checkpoint(optimizer_sidecar_path(*options.resume));
        if (ck.state.value("stage", 0) != config.stage) throw CheckpointError("resume checkpoint is from another stage");
        if (ck.state.at("train_config") != resume_key(config))
            throw CheckpointError("resume checkpoint was written with a different training config");
        if (!(ck.config == model.config())) throw CheckpointError("resume checkpoint model config mismatch");
        state.params = extract_params(ck, model.layout());
        state.opt.m = extract_params(opt, model.layout(), "m/").values;
        state.opt.v = extract_params(opt, model.layout(), "v/").values;
        state.opt.step = opt.state.at("step").get<std::int64_t>();
        if (config.stage == 2) {
            state.lora = load_lora_params(load_checkpoint(lora_sidecar_path(*options.resume)), model);
            state.lora_opt.m = extract_params(opt, model.lora_layout(), "lora_m/").values;
            state.lora_opt.v = extract_params(opt, model.lora_layout(), "lora_v/").values;
            state.lora_opt.step = opt.state.at("lora_step").get<std::int64_t>();
        }
        start_epoch = ck.state.at("epoch").get<int>();
        for (const auto& m : ck.state.at("metrics")) history.push_back(metrics_from_json(m));
    }

    RunResult result;
    std::int64_t step = state.opt.step;
    const int last_epoch = options.stop_after_epoch ? std::min(config.epochs, *options.stop_after_epoch) : config.epochs;
    for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches = epoch_batches(records, config, epoch);
        double loss_sum = 0.0, masked_sum = 0.0;
        int masked_steps = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::vector<const TrainRecord*> recs;
            for (std::size_t i : batches[b]) recs.push_back(&records[i]);
            Rng rng(derive_seed(config.seed, {kBatchTag, std::uint64_t(epoch), std::uint64_t(b)}));
            const TrainBatch batch = build_batch(recs, config.stage, rng, config);
            const StepResult r = train_step(model, state, batch, config, step++);
            loss_sum += r.loss;
            if (std::isfinite(r.masked_loss)) {
                masked_sum += r.masked_loss;
                ++masked_steps;
            }
        }
        EpochMetrics m{epoch + 1, loss_sum / double(batches.size()), masked_steps ? masked_sum / masked_steps : 0.0,
                       int(batches.size())};
        history.push_back(m);

        json metrics = json::array();
        for (const auto& h : history) metrics.push_back(metrics_to_json(h));
        const json st{{"stage", config.stage}, {"epoch", epoch + 1}, {"step", step}, {"metrics", metrics},
                      {"train_config", resume_key(config)}};
        const auto path = epoch_checkpoint_path(out_dir, epoch + 1);
        save_checkpoint(path, make_model_checkpoint(model.config(), state.params, st));
        Checkpoint opt;
        opt.kind = "optimizer";
        opt.config = model.config();
        opt.state = {{"step", state.opt.step}, {"lora_step", state.lora_opt.step}};
        append_params(opt, wrap(model.layout(), state.opt.m), "m/");
        append_params(opt, wrap(model.layout(), state.opt.v), "v/");
        if (state.lora) {
            save_checkpoint(lora_sidecar_path(path), make_lora_checkpoint(model.config(), *state.lora, st));
            append_params(opt, wrap(model.lora_layout(), state.lora_opt.m), "lora_m/");
            append_params(opt, wrap(model.lora_layout(), state.lora_opt.v), "lora_v/");
        }
        save_checkpoint(optimizer_sidecar_path(path), opt);
        write_metrics(out_dir / "metrics.jsonl", history);
        result.final_checkpoint = path;
        if (state.lora) result.final_lora = lora_sidecar_path(path);

        if (!options.quiet) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cerr << "stage " << config.stage << " epoch " << m.epoch << "/" << config.epochs << "  loss "
                      << m.mean_loss << "  masked " << m.mean_masked_loss << "  (" << secs << " s)\n";
        }
        if (options.on_epoch) options.on_epoch(m);
    }
    if (result.final_checkpoint.empty() && start_epoch > 0) {
        result.final_checkpoint = *options.resume;
        if (config.stage == 2) result.final_lora = lora_sidecar_path(*options.resume);
    }
    result.metrics = history;
    return result;
}

}  // namespace t2t
