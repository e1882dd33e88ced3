#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "t2t/checkpoint.hpp"
#include "t2t/flow.hpp"
#include "t2t/manifest.hpp"
#include "t2t/masking.hpp"
#include "t2t/model.hpp"

namespace t2t {

struct TrainConfig {
    int stage = 1;
    double learning_rate = 1e-4;
    int batch_size = 16;
    int epochs = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    bool weighted_loss = false;
    std::uint64_t seed = 0;
    // Mask curriculum.
    double mask_area_lo = 0.4;
    double mask_area_hi = 1.0;
    double full_mask_prob = 0.1;
    int object_dilation = 2;
    double caption_dropout = 0.1;
    double grad_clip = 1.0;
    TimestepMode timestep_mode = TimestepMode::uniform;
    /// Resolution buckets as (height, width); empty = every resolution in the data.
    std::vector<std::pair<int, int>> buckets;
    int workers = 1;
    std::string init_checkpoint;  // required for stage 2
    ModelConfig model;

    /// Stage defaults: stage 1 = 16 epochs unweighted, stage 2 = 5 epochs weighted.
    static TrainConfig defaults_for_stage(int stage);
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Applies one `key = value` setting; keys are the TrainConfig / ModelConfig
/// field names (betas as "0.9,0.999", buckets as "64x64,64x96"). Throws
/// std::invalid_argument on unknown keys or bad values.
void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value);
/// Parses a key-value file: one `key = value` per line, `#` comments.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
nlohmann::json train_config_to_json(const TrainConfig& c);

/// One training image with its annotations, in memory.
struct TrainRecord {
    std::string id;
    Image image;  // [0, 1]
    std::string global_caption;
    std::vector<ManifestObject> objects;
};

/// Loads the images referenced by `entries` (paths relative to `base_dir`).
std::vector<TrainRecord> load_records(const std::vector<ManifestEntry>& entries,
                                      const std::filesystem::path& base_dir, int workers = 1);

struct TrainSample {
    MaskSpec mask;
    Image masked_image;  // I * m
    std::vector<int> tokens;
    double t = 0.0;
    std::vector<float> x;         // clean latent tokens in [-1, 1]
    std::vector<float> eps;
    std::vector<float> x_t;
    std::vector<float> v_target;
    std::vector<std::uint8_t> edited;  // per latent position, 0 = edited
    std::vector<float> weights;        // per latent position
    std::string caption;
};

struct TrainBatch {
    int height = 0;
    int width = 0;
    std::vector<TrainSample> samples;
};

/// Stage 1: large-area mask (full mask with probability full_mask_prob) and
/// the global caption. Stage 2: object mask on a uniformly chosen object and
/// its local caption; records without objects fall back to stage 1.
TrainBatch build_batch(const std::vector<const TrainRecord*>& records, int stage, Rng& rng,
                       const TrainConfig& config);
ModelInput<float> batch_input(const TrainBatch& batch, const ModelConfig& config);

struct AdamState {
    std::vector<float> m, v;
    std::int64_t step = 0;
};

/// Trainable parameters and optimizer state of a run.
struct TrainState {
    ModelParams params;
    std::optional<LoraAdapter> lora;  // stage 2
    AdamState opt;                    // over params
    AdamState lora_opt;               // over lora
};

struct StepResult {
    double loss = 0.0;         // pre-update loss
    double masked_loss = 0.0;  // plain MSE over edited positions (NaN if none)
    double grad_norm = 0.0;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Forward, loss (region weights when enabled), backward over the stage's
/// trainable set, clipping and one decoupled-weight-decay Adam update.
StepResult train_step(const DiT<float>& model, TrainState& state, const TrainBatch& batch,
                      const TrainConfig& config, std::int64_t step_index = 0);

struct EpochMetrics {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_masked_loss = 0.0;
    int steps = 0;
    bool operator==(const EpochMetrics&) const = default;
};

/// Seeded, bucketed batch order for an epoch: every batch holds one resolution.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<TrainRecord>& records,
                                                    const TrainConfig& config, int epoch);

struct RunOptions {
    std::optional<std::filesystem::path> resume;  // model checkpoint of a finished epoch
    /// Stop after this many epochs in this invocation (for tests of resumption).
    std::optional<int> stop_after_epoch;
    std::function<void(const EpochMetrics&)> on_epoch;
    bool quiet = true;
};

struct RunResult {
    std::vector<EpochMetrics> metrics;
    std::filesystem::path final_checkpoint;
    std::optional<std::filesystem::path> final_lora;
};

/// Epoch-ordered training writing epoch_NNN.ckpt (+ .lora.ckpt in stage 2,
/// + .optim.ckpt) and metrics.jsonl into out_dir. Train records only.
RunResult run_training(const TrainConfig& config, const std::vector<TrainRecord>& records,
                       const std::filesystem::path& out_dir, const RunOptions& options = {});

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch);
std::filesystem::path lora_sidecar_path(const std::filesystem::path& model_ckpt);
std::filesystem::path optimizer_sidecar_path(const std::filesystem::path& model_ckpt);

/// Model checkpoint I/O shared by trainer, sampler and CLI.
Checkpoint make_model_checkpoint(const ModelConfig& config, const ModelParams& params,
                                 nlohmann::json state = nlohmann::json::object());
Checkpoint make_lora_checkpoint(const ModelConfig& config, const LoraAdapter& lora,
                                nlohmann::json state = nlohmann::json::object());
ModelParams load_model_params(const Checkpoint& ckpt, const DiT<float>& model);
LoraAdapter load_lora_params(const Checkpoint& ckpt, const DiT<float>& model);

struct LoadedModel {
    DiT<float> model;
    ModelParams params;
    std::optional<LoraAdapter> lora;
};

/// Model checkpoint plus optional LoRA sidecar; the adapter's rank and alpha
/// take precedence over the ones recorded with the base weights.
LoadedModel load_model(const std::filesystem::path& ckpt,
                       const std::optional<std::filesystem::path>& lora = std::nullopt);

}  // namespace t2t
