#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "t2t/image.hpp"
#include "t2t/masking.hpp"

namespace t2t {

struct ModelConfig {
    int patch = 8;
    int dim = 128;
    int heads = 4;
    int depth = 6;
    int text_vocab = 0;  // 0 = size of the caption vocabulary
    int max_text_tokens = 32;
    int lora_rank = 8;
    double lora_alpha = 16.0;
    int ffn_mult = 4;
    /// Largest supported image, which sizes the learned 2-D position tables.
    int max_height = 64;
    int max_width = 96;
    /// The head predicts the clean patch x̂ and forward returns
    /// v = (x̂ − x_t) / max(1 − t, kMinRemaining). Otherwise the head emits v.
    bool predict_clean = true;
    static constexpr double kMinRemaining = 0.05;

    int resolved_vocab() const;
    int head_dim() const { return dim / heads; }
    double lora_scale() const { return lora_alpha / lora_rank; }
    int latent_token_dim() const { return patch * patch * 3; }
    int cond_token_dim() const { return patch * patch * 4; }

    /// Throws std::invalid_argument when the configuration is inconsistent.
    void validate() const;
    bool supports(int height, int width) const;

    bool operator==(const ModelConfig&) const = default;
};

/// Name, shape and offset of each array in a flat parameter buffer. Vectors
/// have shape {n}; matrices {rows, cols} stored row-major.
class ParamLayout {
public:
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::size_t offset = 0;
        std::size_t size = 0;
        int rows() const { return shape.size() == 1 ? 1 : shape[0]; }
        int cols() const { return shape.size() == 1 ? shape[0] : shape[1]; }
    };

    int add(const std::string& name, std::vector<int> shape);
    int index(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
    const Entry& entry(int i) const { return entries_[std::size_t(i)]; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t total_size() const { return total_; }

    bool operator==(const ParamLayout& o) const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, int> by_name_;
    std::size_t total_ = 0;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Flat parameter buffer bound to a layout.
template <typename T>
struct Params {
    std::shared_ptr<const ParamLayout> layout;
    std::vector<T> values;

    Params() = default;
    explicit Params(std::shared_ptr<const ParamLayout> l) : layout(std::move(l)), values(layout->total_size(), T(0)) {}

    MatMap<T> mat(int i) {
        const auto& e = layout->entry(i);
        return MatMap<T>(values.data() + e.offset, e.rows(), e.cols());
    }
    ConstMatMap<T> mat(int i) const {
        const auto& e = layout->entry(i);
        return ConstMatMap<T>(values.data() + e.offset, e.rows(), e.cols());
    }
    MatMap<T> mat(const std::string& name) { return mat(layout->index(name)); }
    ConstMatMap<T> mat(const std::string& name) const { return mat(layout->index(name)); }

    bool all_finite() const;
    template <typename U>
    Params<U> cast() const {
        Params<U> out(layout);
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = U(values[i]);
        return out;
    }
};

using ModelParams = Params<float>;
using LoraAdapter = Params<float>;

/// Everything the conditional embedder and text stream consume for a sample.
struct ConditionBundle {
    Image masked_image;  // I * m, values in [0, 1]
    MaskSpec mask;
    std::vector<int> tokens;  // max_text_tokens ids
    double t = 0.0;
};

/// Conditional-embedder tokens: RGB channels (2 * I_m - 1) * m plus the mask
/// as a fourth channel, patchified.
std::vector<float> condition_tokens(const Image& masked_image, const MaskSpec& mask, int patch);
/// The RGB part of the conditioning input, (2 * I_m - 1) * m, in model units.
Image signed_condition_image(const Image& masked_image, const MaskSpec& mask);

/// A batch of samples sharing one resolution, already in token layout.
template <typename T>
struct ModelInput {
    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<T> cond;    // batch * P * cond_token_dim
    std::vector<T> latent;  // batch * P * latent_token_dim (x_t)
    std::vector<int> text;  // batch * max_text_tokens
    std::vector<T> t;       // batch
};

ModelInput<float> make_model_input(const std::vector<ConditionBundle>& bundles,
                                   const std::vector<std::vector<float>>& latent_tokens, const ModelConfig& config);

/// Activations kept by DiT::forward for the backward pass.
template <typename T>
struct ForwardCache {
    struct Block {
        RowMat<T> x_in, n1, h1, q, k, v, o, attn_out, x_mid, n2, h2, u, g, f, mod;
        RowMat<T> zq, zk, zv, zo;  // LoRA down-projections
        RowMat<T> probs;           // (batch * heads * S) x S
        std::vector<T> inv_std1, inv_std2;
    };
    int batch = 0;
    int patches = 0;
    int seq = 0;
    std::vector<int> text_len;
    RowMat<T> t_freq, t_h1, t_a1, temb, t_act;
    std::vector<Block> blocks;
    RowMat<T> x_out, xl, nf, hf, fmod;
    std::vector<T> inv_std_f;
};

enum class TrainStage { stage1 = 1, stage2 = 2 };

/// Single-stream diffusion transformer. The sequence per sample is
/// [condition tokens | noisy latent tokens | text tokens]; all attend jointly
/// (text positions after the first PAD are masked out as keys), blocks are
/// modulated by the timestep embedding (shift/scale/gate), and the head reads
/// only the noisy-latent positions.
template <typename T>
class DiT {
public:
    explicit DiT(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::shared_ptr<const ParamLayout> layout() const { return layout_; }
    std::shared_ptr<const ParamLayout> lora_layout() const { return lora_layout_; }

    /// Xavier weights and sin-cos position tables; modulation and output head
    /// start at zero unless `randomize_all` (used by gradient checks).
    Params<T> init_params(std::uint64_t seed, bool randomize_all = false) const;
    /// A small random, B zero.
    Params<T> init_lora(std::uint64_t seed) const;

    /// Returns v_pred tokens, batch * P * latent_token_dim.
    std::vector<T> forward(const Params<T>& params, const Params<T>* lora, const ModelInput<T>& input,
                           ForwardCache<T>* cache = nullptr, int workers = 1) const;

    /// Accumulates d(loss)/d(params) given d(loss)/d(v_pred). Arrays whose
    /// `requires_grad` flag is 0 are skipped (their gradient stays untouched).
    void backward(const Params<T>& params, const Params<T>* lora, const ModelInput<T>& input,
                  const ForwardCache<T>& cache, const std::vector<T>& d_out, Params<T>& grad, Params<T>* lora_grad,
                  const std::vector<std::uint8_t>& requires_grad, int workers = 1) const;

    /// Per-array trainable flags of the base parameters for a stage.
    std::vector<std::uint8_t> trainable_mask(TrainStage stage) const;
    std::vector<std::string> trainable_set(TrainStage stage) const;

private:
    struct BlockIndex {
        int mod_w, mod_b;
        int q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
        int ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };
    struct LoraIndex {
        int a, b;  // per projection
    };

    ModelConfig config_;
    std::shared_ptr<ParamLayout> layout_;
    std::shared_ptr<ParamLayout> lora_layout_;
    int x_w_, x_b_, c_w_, c_b_, text_embed_, pos_row_, pos_col_, pos_text_, type_embed_;
    int t_w1_, t_b1_, t_w2_, t_b2_, final_mod_w_, final_mod_b_, final_w_, final_b_;
    std::vector<BlockIndex> blocks_;
    std::vector<std::array<LoraIndex, 4>> lora_;  // q, k, v, o
};

/// W_eff = W + scale * B * A for every adapted projection; the result has no
/// adapter.
ModelParams merge_lora(const DiT<float>& model, const ModelParams& params, const LoraAdapter& adapter);

/// Effective weight of one projection ("blocks.0.attn.q") with the adapter applied.
RowMat<float> effective_weight(const DiT<float>& model, const ModelParams& params, const LoraAdapter* adapter,
                               const std::string& projection);

}  // namespace t2t
