#include "t2t/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "t2t/parallel.hpp"
#include "t2t/rng.hpp"
#include "t2t/tokenizer.hpp"

namespace t2t {

int ModelConfig::resolved_vocab() const {
    return text_vocab > 0 ? text_vocab : Tokenizer::caption_vocabulary().vocab_size();
}

void ModelConfig::validate() const {
    if (patch < 1 || dim < 2 || heads < 1 || depth < 1 || max_text_tokens < 1 || lora_rank < 1 || ffn_mult < 1)
        throw std::invalid_argument("ModelConfig: sizes must be positive");
    if (dim % heads != 0) throw std::invalid_argument("ModelConfig: dim must be divisible by heads");
    if (dim % 2 != 0) throw std::invalid_argument("ModelConfig: dim must be even");
    if (max_height % patch != 0 || max_width % patch != 0 || 64 % patch != 0 || 96 % patch != 0)
        throw std::invalid_argument("ModelConfig: patch must divide the supported resolutions");
    if (!(lora_alpha > 0.0)) throw std::invalid_argument("ModelConfig: lora_alpha must be positive");
    if (text_vocab < 0) throw std::invalid_argument("ModelConfig: negative text_vocab");
}

bool ModelConfig::supports(int height, int width) const {
    return height > 0 && width > 0 && height % patch == 0 && width % patch == 0 && height <= max_height &&
           width <= max_width;
}

int ParamLayout::add(const std::string& name, std::vector<int> shape) {
    if (by_name_.count(name)) throw std::invalid_argument("ParamLayout: duplicate name " + name);
    if (shape.empty() || shape.size() > 2) throw std::invalid_argument("ParamLayout: arrays are 1-D or 2-D");
    std::size_t size = 1;
    for (int d : shape) {
        if (d < 1) throw std::invalid_argument("ParamLayout: non-positive dimension in " + name);
        size *= std::size_t(d);
    }
    entries_.push_back({name, std::move(shape), total_, size});
    total_ += size;
    const int idx = int(entries_.size()) - 1;
    by_name_[name] = idx;
    return idx;
}

int ParamLayout::index(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("ParamLayout: no array named " + name);
    return it->second;
}

bool ParamLayout::operator==(const ParamLayout& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name != o.entries_[i].name || entries_[i].shape != o.entries_[i].shape) return false;
    return true;
}

template <typename T>
bool Params<T>::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template struct Params<float>;
template struct Params<double>;

Image signed_condition_image(const Image& masked_image, const MaskSpec& mask) {
    if (masked_image.height != mask.height || masked_image.width != mask.width || masked_image.channels != 3)
        throw std::invalid_argument("condition_tokens: image and mask shapes differ");
    Image out(masked_image.height, masked_image.width, 3);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const float m = float(mask.at(y, x));
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = (2.0f * masked_image.at(y, x, c) - 1.0f) * m;
        }
    return out;
}

std::vector<float> condition_tokens(const Image& masked_image, const MaskSpec& mask, int patch) {
    const Image rgb = signed_condition_image(masked_image, mask);
    Image cond(rgb.height, rgb.width, 4);
    for (int y = 0; y < cond.height; ++y)
        for (int x = 0; x < cond.width; ++x) {
            for (int c = 0; c < 3; ++c) cond.at(y, x, c) = rgb.at(y, x, c);
            cond.at(y, x, 3) = float(mask.at(y, x));
        }
    return patchify(cond, patch);
}

ModelInput<float> make_model_input(const std::vector<ConditionBundle>& bundles,
                                   const std::vector<std::vector<float>>& latent_tokens, const ModelConfig& config) {
    if (bundles.empty() || bundles.size() != latent_tokens.size())
        throw std::invalid_argument("make_model_input: bundle and latent counts differ");
    ModelInput<float> in;
    in.batch = int(bundles.size());
    in.height = bundles[0].masked_image.height;
    in.width = bundles[0].masked_image.width;
    const std::size_t P = std::size_t(in.height / config.patch) * std::size_t(in.width / config.patch);
    for (std::size_t b = 0; b < bundles.size(); ++b) {
        const auto& bundle = bundles[b];
        if (bundle.masked_image.height != in.height || bundle.masked_image.width != in.width)
            throw std::invalid_argument("make_model_input: mixed resolutions in one batch");
        if (int(bundle.tokens.size()) != config.max_text_tokens)
            throw std::invalid_argument("make_model_input: token count differs from max_text_tokens");
        if (latent_tokens[b].size() != P * std::size_t(config.latent_token_dim()))
            throw std::invalid_argument("make_model_input: latent token size mismatch");
        const auto cond = condition_tokens(bundle.masked_image, bundle.mask, config.patch);
        in.cond.insert(in.cond.end(), cond.begin(), cond.end());
        in.latent.insert(in.latent.end(), latent_tokens[b].begin(), latent_tokens[b].end());
        in.text.insert(in.text.end(), bundle.tokens.begin(), bundle.tokens.end());
        in.t.push_back(float(bundle.t));
    }
    return in;
}

namespace {

// Tanh-approximated GELU, written as array expressions so Eigen vectorizes tanh.
template <typename T>
RowMat<T> gelu(const RowMat<T>& u) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const auto a = u.array();
    return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a * a * a)).tanh())).matrix();
}

template <typename T>
RowMat<T> gelu_grad(const RowMat<T>& u) {
    const T c = T(0.7978845608028654);
    const auto a = u.array();
    const auto th = (c * (a + T(0.044715) * a * a * a)).tanh().eval();
    return (T(0.5) * (T(1) + th) + T(0.5) * a * (T(1) - th * th) * c * (T(1) + T(3) * T(0.044715) * a * a)).matrix();
}

template <typename T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

constexpr double kLnEps = 1e-6;

template <typename T>
void layer_norm(const RowMat<T>& x, RowMat<T>& n, std::vector<T>& inv_std) {
    n.resize(x.rows(), x.cols());
    inv_std.resize(std::size_t(x.rows()));
    const T inv_d = T(1) / T(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T mean = x.row(r).sum() * inv_d;
        const auto centered = (x.row(r).array() - mean).eval();
        const T var = centered.square().sum() * inv_d;
        const T is = T(1) / std::sqrt(var + T(kLnEps));
        n.row(r) = centered * is;
        inv_std[std::size_t(r)] = is;
    }
}

// dx = inv_std * (dn - mean(dn) - n * mean(dn * n)), accumulated into dx.
template <typename T>
void layer_norm_backward(const RowMat<T>& dn, const RowMat<T>& n, const std::vector<T>& inv_std, RowMat<T>& dx) {
    const T inv_d = T(1) / T(n.cols());
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
        const T mean_dn = dn.row(r).sum() * inv_d;
        const T mean_dnn = dn.row(r).dot(n.row(r)) * inv_d;
        dx.row(r).array() += inv_std[std::size_t(r)] * (dn.row(r).array() - mean_dn - n.row(r).array() * mean_dnn);
    }
}

// y = x W^T + b
template <typename T>
void linear(const RowMat<T>& x, const ConstMatMap<T>& w, const ConstMatMap<T>& b, RowMat<T>& y) {
    y.noalias() = x * w.transpose();
    y.rowwise() += b.row(0);
}

// Per-sample affine modulation: out = n * (1 + scale[b]) + shift[b].
template <typename T>
void modulate(const RowMat<T>& n, const RowMat<T>& mod, int shift_col, int scale_col, int rows_per_sample,
              RowMat<T>& out) {
    const Eigen::Index D = n.cols();
    out.resize(n.rows(), D);
    for (Eigen::Index b = 0; b < mod.rows(); ++b) {
        const auto scale = (mod.row(b).segment(scale_col, D).array() + T(1)).eval();
        const auto shift = mod.row(b).segment(shift_col, D).array().eval();
        for (Eigen::Index r = b * rows_per_sample; r < (b + 1) * rows_per_sample; ++r)
            out.row(r).array() = n.row(r).array() * scale + shift;
    }
}

// Backward of modulate: returns dn, accumulates dshift/dscale into dmod.
template <typename T>
RowMat<T> modulate_backward(const RowMat<T>& dout, const RowMat<T>& n, const RowMat<T>& mod, int shift_col,
                            int scale_col, int rows_per_sample, RowMat<T>& dmod) {
    const Eigen::Index D = n.cols();
    RowMat<T> dn(n.rows(), D);
    for (Eigen::Index b = 0; b < mod.rows(); ++b) {
        const auto scale = (mod.row(b).segment(scale_col, D).array() + T(1)).eval();
        const auto rows = dout.middleRows(b * rows_per_sample, rows_per_sample);
        dn.middleRows(b * rows_per_sample, rows_per_sample).array() = rows.array().rowwise() * scale.matrix().array();
        dmod.row(b).segment(shift_col, D) += rows.colwise().sum();
        dmod.row(b).segment(scale_col, D) +=
            (rows.array() * n.middleRows(b * rows_per_sample, rows_per_sample).array()).colwise().sum().matrix();
    }
    return dn;
}

template <typename T, typename X>
void add_weight_grad(Params<T>& grad, int idx, const RowMat<T>& dy, const X& x) {
    // Reduce into an owned (aligned) buffer first: Eigen's vectorized paths peel
    // differently depending on the destination address, which breaks bitwise determinism.
    const RowMat<T> g = dy.transpose() * x;
    grad.mat(idx) += g;
}

template <typename T>
void add_bias_grad(Params<T>& grad, int idx, const RowMat<T>& dy) {
    const RowMat<T> g = dy.colwise().sum();
    grad.mat(idx).row(0) += g;
}

}  // namespace

template <typename T>
DiT<T>::DiT(ModelConfig config) : config_(config) {
    config_.validate();
    if (config_.text_vocab == 0) config_.text_vocab = config_.resolved_vocab();
    const int D = config_.dim;
    const int V = config_.text_vocab;
    const int r = config_.lora_rank;
    auto layout = std::make_shared<ParamLayout>();
    x_w_ = layout->add("x_embed.w", {D, config_.latent_token_dim()});
    x_b_ = layout->add("x_embed.b", {D});
    c_w_ = layout->add("cond_embed.w", {D, config_.cond_token_dim()});
    c_b_ = layout->add("cond_embed.b", {D});
    text_embed_ = layout->add("text_embed", {V, D});
    pos_row_ = layout->add("pos_row", {config_.max_height / config_.patch, D});
    pos_col_ = layout->add("pos_col", {config_.max_width / config_.patch, D});
    pos_text_ = layout->add("pos_text", {config_.max_text_tokens, D});
    type_embed_ = layout->add("type_embed", {3, D});
    t_w1_ = layout->add("t_embed.w1", {D, D});
    t_b1_ = layout->add("t_embed.b1", {D});
    t_w2_ = layout->add("t_embed.w2", {D, D});
    t_b2_ = layout->add("t_embed.b2", {D});
    auto lora = std::make_shared<ParamLayout>();
    const int H = D * config_.ffn_mult;
    for (int i = 0; i < config_.depth; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        BlockIndex bi{};
        bi.mod_w = layout->add(p + "mod.w", {6 * D, D});
        bi.mod_b = layout->add(p + "mod.b", {6 * D});
        bi.q_w = layout->add(p + "attn.q.w", {D, D});
        bi.q_b = layout->add(p + "attn.q.b", {D});
        bi.k_w = layout->add(p + "attn.k.w", {D, D});
        bi.k_b = layout->add(p + "attn.k.b", {D});
        bi.v_w = layout->add(p + "attn.v.w", {D, D});
        bi.v_b = layout->add(p + "attn.v.b", {D});
        bi.o_w = layout->add(p + "attn.o.w", {D, D});
        bi.o_b = layout->add(p + "attn.o.b", {D});
        bi.ffn_w1 = layout->add(p + "ffn.w1", {H, D});
        bi.ffn_b1 = layout->add(p + "ffn.b1", {H});
        bi.ffn_w2 = layout->add(p + "ffn.w2", {D, H});
        bi.ffn_b2 = layout->add(p + "ffn.b2", {D});
        blocks_.push_back(bi);
        std::array<LoraIndex, 4> li{};
        const char* projs[4] = {"q", "k", "v", "o"};
        for (int j = 0; j < 4; ++j) {
            li[std::size_t(j)].a = lora->add(p + "attn." + projs[j] + ".lora_a", {r, D});
            li[std::size_t(j)].b = lora->add(p + "attn." + projs[j] + ".lora_b", {D, r});
        }
        lora_.push_back(li);
    }
    final_mod_w_ = layout->add("final.mod.w", {2 * D, D});
    final_mod_b_ = layout->add("final.mod.b", {2 * D});
    final_w_ = layout->add("final.w", {config_.latent_token_dim(), D});
    final_b_ = layout->add("final.b", {config_.latent_token_dim()});
    layout_ = std::move(layout);
    lora_layout_ = std::move(lora);
}

namespace {

template <typename T>
T inv_remaining(T t) {
    return T(1) / std::max(T(1) - t, T(ModelConfig::kMinRemaining));
}

// Sin-cos position table: rows of `part` in [0, parts) fill their share of the
// columns, so row and column tables add up to a 2-D code with no overlap.
template <typename M>
void sincos_init(M m, int part, int parts) {
    const Eigen::Index width = m.cols() / parts, half = width / 2;
    m.setZero();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index i = 0; i < half; ++i) {
            const double omega = std::pow(10000.0, -double(i) / double(half));
            m(r, part * width + i) = typename M::Scalar(std::sin(double(r) * omega));
            m(r, part * width + half + i) = typename M::Scalar(std::cos(double(r) * omega));
        }
}

}  // namespace

template <typename T>
Params<T> DiT<T>::init_params(std::uint64_t seed, bool randomize_all) const {
    Params<T> p(layout_);
    Rng rng(derive_seed(seed, {0x706172616d73ULL}));
    auto xavier = [&](int idx) {
        auto m = p.mat(idx);
        const double a = std::sqrt(6.0 / double(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(rng.uniform(-a, a));
    };
    auto normal = [&](int idx, double std) {
        auto m = p.mat(idx);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(std * rng.normal());
    };
    for (int i = 0; i < int(layout_->entries().size()); ++i) {
        const auto& e = layout_->entry(i);
        const bool is_vector = e.shape.size() == 1;
        const bool zero_init = i == final_w_ || i == final_mod_w_ || e.name.find(".mod.w") != std::string::npos;
        if (i == pos_row_ || i == pos_col_ || i == pos_text_) {
            sincos_init(p.mat(i), i == pos_col_ ? 1 : 0, i == pos_text_ ? 1 : 2);
        } else if (i == text_embed_ || i == type_embed_ || i == t_w1_ || i == t_w2_) {
            normal(i, 0.02);
        } else if (is_vector || zero_init) {
            if (randomize_all) normal(i, 0.05);
        } else {
            xavier(i);
        }
    }
    return p;
}

template <typename T>
Params<T> DiT<T>::init_lora(std::uint64_t seed) const {
    Params<T> p(lora_layout_);
    Rng rng(derive_seed(seed, {0x6c6f7261ULL}));
    const double a = 1.0 / std::sqrt(double(config_.dim));
    for (const auto& li : lora_)
        for (const auto& proj : li) {
            auto m = p.mat(proj.a);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(rng.uniform(-a, a));
        }
    return p;
}

template <typename T>
std::vector<T> DiT<T>::forward(const Params<T>& params, const Params<T>* lora, const ModelInput<T>& input,
                               ForwardCache<T>* cache_out, int workers) const {
    const ModelConfig& cfg = config_;
    if (!cfg.supports(input.height, input.width))
        throw std::invalid_argument("DiT::forward: unsupported resolution " + std::to_string(input.height) + "x" +
                                    std::to_string(input.width));
    const int B = input.batch;
    const int gh = input.height / cfg.patch;
    const int gw = input.width / cfg.patch;
    const int P = gh * gw;
    const int Tt = cfg.max_text_tokens;
    const int S = 2 * P + Tt;
    const int D = cfg.dim;
    const int NH = cfg.heads;
    const int dh = cfg.head_dim();
    const int ldim = cfg.latent_token_dim();
    const int cdim = cfg.cond_token_dim();
    if (B < 1 || input.cond.size() != std::size_t(B) * P * cdim || input.latent.size() != std::size_t(B) * P * ldim ||
        input.text.size() != std::size_t(B) * Tt || input.t.size() != std::size_t(B))
        throw std::invalid_argument("DiT::forward: inconsistent input sizes");
    for (T v : input.cond)
        if (!std::isfinite(v)) throw std::invalid_argument("DiT::forward: non-finite condition input");
    for (T v : input.latent)
        if (!std::isfinite(v)) throw std::invalid_argument("DiT::forward: non-finite latent input");
    for (T v : input.t)
        if (!std::isfinite(v)) throw std::invalid_argument("DiT::forward: non-finite timestep");
    for (int id : input.text)
        if (id < 0 || id >= cfg.text_vocab) throw std::invalid_argument("DiT::forward: token id out of range");
    if (lora && lora->layout != lora_layout_ && !(*lora->layout == *lora_layout_))
        throw std::invalid_argument("DiT::forward: adapter layout mismatch");

    ForwardCache<T> local;
    ForwardCache<T>& c = cache_out ? *cache_out : local;
    c.batch = B;
    c.patches = P;
    c.seq = S;
    c.text_len.resize(std::size_t(B));
    for (int b = 0; b < B; ++b) c.text_len[std::size_t(b)] = text_length(input.text, std::size_t(b) * Tt, Tt);

    // Timestep embedding.
    const int half = D / 2;
    c.t_freq.resize(B, D);
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
            const double arg = 1000.0 * double(input.t[std::size_t(b)]) * freq;
            c.t_freq(b, i) = T(std::cos(arg));
            c.t_freq(b, half + i) = T(std::sin(arg));
        }
    linear<T>(c.t_freq, params.mat(t_w1_), params.mat(t_b1_), c.t_h1);
    c.t_a1 = c.t_h1.unaryExpr([](T v) { return silu(v); });
    linear<T>(c.t_a1, params.mat(t_w2_), params.mat(t_b2_), c.temb);
    c.t_act = c.temb.unaryExpr([](T v) { return silu(v); });

    // Token embeddings.
    RowMat<T> x(std::size_t(B) * S, D);
    {
        const ConstMatMap<T> cond_tok(input.cond.data(), Eigen::Index(B) * P, cdim);
        const ConstMatMap<T> lat_tok(input.latent.data(), Eigen::Index(B) * P, ldim);
        RowMat<T> ec = cond_tok * params.mat(c_w_).transpose();
        RowMat<T> el = lat_tok * params.mat(x_w_).transpose();
        const auto pos_row = params.mat(pos_row_);
        const auto pos_col = params.mat(pos_col_);
        const auto pos_text = params.mat(pos_text_);
        const auto types = params.mat(type_embed_);
        const auto emb = params.mat(text_embed_);
        for (int b = 0; b < B; ++b) {
            for (int p = 0; p < P; ++p) {
                const auto pos = (pos_row.row(p / gw) + pos_col.row(p % gw)).eval();
                x.row(Eigen::Index(b) * S + p) = ec.row(Eigen::Index(b) * P + p) + params.mat(c_b_).row(0) + pos + types.row(0);
                x.row(Eigen::Index(b) * S + P + p) =
                    el.row(Eigen::Index(b) * P + p) + params.mat(x_b_).row(0) + pos + types.row(1);
            }
            for (int j = 0; j < Tt; ++j)
                x.row(Eigen::Index(b) * S + 2 * P + j) =
                    emb.row(input.text[std::size_t(b) * Tt + j]) + pos_text.row(j) + types.row(2);
        }
    }

    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    const T lscale = T(cfg.lora_scale());
    c.blocks.resize(std::size_t(cfg.depth));
    for (int li = 0; li < cfg.depth; ++li) {
        const BlockIndex& bi = blocks_[std::size_t(li)];
        auto& k = c.blocks[std::size_t(li)];
        k.x_in = x;
        linear<T>(c.t_act, params.mat(bi.mod_w), params.mat(bi.mod_b), k.mod);
        layer_norm(k.x_in, k.n1, k.inv_std1);
        modulate(k.n1, k.mod, 0, D, S, k.h1);

        auto project = [&](int w, int bias, int proj, RowMat<T>& out, RowMat<T>& z, const RowMat<T>& in) {
            linear<T>(in, params.mat(w), params.mat(bias), out);
            if (lora) {
                const auto& l = lora_[std::size_t(li)][std::size_t(proj)];
                z.noalias() = in * lora->mat(l.a).transpose();
                out.noalias() += lscale * (z * lora->mat(l.b).transpose());
            }
        };
        project(bi.q_w, bi.q_b, 0, k.q, k.zq, k.h1);
        project(bi.k_w, bi.k_b, 1, k.k, k.zk, k.h1);
        project(bi.v_w, bi.v_b, 2, k.v, k.zv, k.h1);

        k.probs.resize(Eigen::Index(B) * NH * S, S);
        k.o.resize(Eigen::Index(B) * S, D);
        parallel_for(std::size_t(B) * NH, workers, [&](std::size_t job) {
            const int b = int(job) / NH;
            const int h = int(job) % NH;
            const int valid_text = c.text_len[std::size_t(b)];
            const int valid = 2 * P + valid_text;
            auto probs = k.probs.middleRows((Eigen::Index(b) * NH + h) * S, S);
            const auto qh = k.q.block(Eigen::Index(b) * S, h * dh, S, dh);
            const auto kh = k.k.block(Eigen::Index(b) * S, h * dh, valid, dh);
            probs.setZero();
            probs.leftCols(valid).noalias() = qh * kh.transpose();
            for (Eigen::Index r = 0; r < S; ++r) {
                auto row = probs.row(r).head(valid);
                row *= inv_sqrt;
                const T mx = row.maxCoeff();
                row = (row.array() - mx).exp().matrix();
                row /= row.sum();
            }
            k.o.block(Eigen::Index(b) * S, h * dh, S, dh).noalias() =
                probs.leftCols(valid) * k.v.block(Eigen::Index(b) * S, h * dh, valid, dh);
        });
        project(bi.o_w, bi.o_b, 3, k.attn_out, k.zo, k.o);

        k.x_mid = k.x_in;
        for (int b = 0; b < B; ++b)
            k.x_mid.middleRows(Eigen::Index(b) * S, S).array() +=
                k.attn_out.middleRows(Eigen::Index(b) * S, S).array().rowwise() *
                k.mod.row(b).segment(2 * D, D).array();

        layer_norm(k.x_mid, k.n2, k.inv_std2);
        modulate(k.n2, k.mod, 3 * D, 4 * D, S, k.h2);
        linear<T>(k.h2, params.mat(bi.ffn_w1), params.mat(bi.ffn_b1), k.u);
        k.g = gelu(k.u);
        linear<T>(k.g, params.mat(bi.ffn_w2), params.mat(bi.ffn_b2), k.f);
        x = k.x_mid;
        for (int b = 0; b < B; ++b)
            x.middleRows(Eigen::Index(b) * S, S).array() +=
                k.f.middleRows(Eigen::Index(b) * S, S).array().rowwise() * k.mod.row(b).segment(5 * D, D).array();
    }

    c.x_out = x;
    c.xl.resize(Eigen::Index(B) * P, D);
    for (int b = 0; b < B; ++b) c.xl.middleRows(Eigen::Index(b) * P, P) = x.middleRows(Eigen::Index(b) * S + P, P);
    linear<T>(c.t_act, params.mat(final_mod_w_), params.mat(final_mod_b_), c.fmod);
    layer_norm(c.xl, c.nf, c.inv_std_f);
    modulate(c.nf, c.fmod, 0, D, P, c.hf);
    RowMat<T> out;
    linear<T>(c.hf, params.mat(final_w_), params.mat(final_b_), out);
    if (cfg.predict_clean) {
        const ConstMatMap<T> xt(input.latent.data(), Eigen::Index(B) * P, cfg.latent_token_dim());
        for (int b = 0; b < B; ++b)
            out.middleRows(Eigen::Index(b) * P, P) =
                (out.middleRows(Eigen::Index(b) * P, P) - xt.middleRows(Eigen::Index(b) * P, P)) *
                inv_remaining<T>(input.t[std::size_t(b)]);
    }
    return std::vector<T>(out.data(), out.data() + out.size());
}

template <typename T>
void DiT<T>::backward(const Params<T>& params, const Params<T>* lora, const ModelInput<T>& input,
                      const ForwardCache<T>& c, const std::vector<T>& d_out, Params<T>& grad, Params<T>* lora_grad,
                      const std::vector<std::uint8_t>& requires_grad, int workers) const {
    const ModelConfig& cfg = config_;
    const int B = c.batch;
    const int P = c.patches;
    const int S = c.seq;
    const int Tt = cfg.max_text_tokens;
    const int D = cfg.dim;
    const int NH = cfg.heads;
    const int dh = cfg.head_dim();
    const int ldim = cfg.latent_token_dim();
    const int cdim = cfg.cond_token_dim();
    const int gw = input.width / cfg.patch;
    if (d_out.size() != std::size_t(B) * P * ldim) throw std::invalid_argument("DiT::backward: d_out size mismatch");
    if (requires_grad.size() != layout_->entries().size())
        throw std::invalid_argument("DiT::backward: requires_grad size mismatch");
    const bool want_lora = lora != nullptr && lora_grad != nullptr;
    auto want = [&](int idx) { return requires_grad[std::size_t(idx)] != 0; };
    const T lscale = T(cfg.lora_scale());
    const T inv_sqrt = T(1) / std::sqrt(T(dh));

    bool need_embed_grads = want(x_w_) || want(x_b_) || want(c_w_) || want(c_b_) || want(text_embed_) ||
                            want(pos_row_) || want(pos_col_) || want(pos_text_) || want(type_embed_);
    const bool need_temb_grads = want(t_w1_) || want(t_b1_) || want(t_w2_) || want(t_b2_);

    RowMat<T> d_tact = RowMat<T>::Zero(B, D);

    // Output head.
    const ConstMatMap<T> dout(d_out.data(), Eigen::Index(B) * P, ldim);
    RowMat<T> dout_m = dout;
    if (cfg.predict_clean)
        for (int b = 0; b < B; ++b)
            dout_m.middleRows(Eigen::Index(b) * P, P) *= inv_remaining<T>(input.t[std::size_t(b)]);
    if (want(final_w_)) add_weight_grad(grad, final_w_, dout_m, c.hf);
    if (want(final_b_)) add_bias_grad(grad, final_b_, dout_m);
    const RowMat<T> dhf = dout_m * params.mat(final_w_);
    RowMat<T> dfmod = RowMat<T>::Zero(B, 2 * D);
    const RowMat<T> dnf = modulate_backward(dhf, c.nf, c.fmod, 0, D, P, dfmod);
    if (want(final_mod_w_)) add_weight_grad(grad, final_mod_w_, dfmod, c.t_act);
    if (want(final_mod_b_)) add_bias_grad(grad, final_mod_b_, dfmod);
    if (need_temb_grads) d_tact.noalias() += dfmod * params.mat(final_mod_w_);
    RowMat<T> dxl = RowMat<T>::Zero(Eigen::Index(B) * P, D);
    layer_norm_backward(dnf, c.nf, c.inv_std_f, dxl);

    RowMat<T> dx = RowMat<T>::Zero(Eigen::Index(B) * S, D);
    for (int b = 0; b < B; ++b) dx.middleRows(Eigen::Index(b) * S + P, P) = dxl.middleRows(Eigen::Index(b) * P, P);

    // Does any block below `li` (or the embeddings) need the gradient w.r.t. its input?
    std::vector<bool> below_needs(std::size_t(cfg.depth), false);
    {
        bool acc = need_embed_grads;
        for (int li = 0; li < cfg.depth; ++li) {
            below_needs[std::size_t(li)] = acc;
            const BlockIndex& bi = blocks_[std::size_t(li)];
            for (int idx : {bi.mod_w, bi.mod_b, bi.q_w, bi.q_b, bi.k_w, bi.k_b, bi.v_w, bi.v_b, bi.o_w, bi.o_b,
                            bi.ffn_w1, bi.ffn_b1, bi.ffn_w2, bi.ffn_b2})
                acc = acc || want(idx);
            acc = acc || want_lora || need_temb_grads;
        }
    }

    for (int li = cfg.depth - 1; li >= 0; --li) {
        const BlockIndex& bi = blocks_[std::size_t(li)];
        const auto& k = c.blocks[std::size_t(li)];
        RowMat<T> dmod = RowMat<T>::Zero(B, 6 * D);

        // x_out = x_mid + gate2 * f
        RowMat<T> df(Eigen::Index(B) * S, D);
        for (int b = 0; b < B; ++b) {
            const auto rows = dx.middleRows(Eigen::Index(b) * S, S);
            df.middleRows(Eigen::Index(b) * S, S).array() = rows.array().rowwise() * k.mod.row(b).segment(5 * D, D).array();
            dmod.row(b).segment(5 * D, D) +=
                (rows.array() * k.f.middleRows(Eigen::Index(b) * S, S).array()).colwise().sum().matrix();
        }
        RowMat<T> dx_mid = dx;

        if (want(bi.ffn_w2)) add_weight_grad(grad, bi.ffn_w2, df, k.g);
        if (want(bi.ffn_b2)) add_bias_grad(grad, bi.ffn_b2, df);
        RowMat<T> du = df * params.mat(bi.ffn_w2);
        du.array() *= gelu_grad(k.u).array();
        if (want(bi.ffn_w1)) add_weight_grad(grad, bi.ffn_w1, du, k.h2);
        if (want(bi.ffn_b1)) add_bias_grad(grad, bi.ffn_b1, du);
        const RowMat<T> dh2 = du * params.mat(bi.ffn_w1);
        const RowMat<T> dn2 = modulate_backward(dh2, k.n2, k.mod, 3 * D, 4 * D, S, dmod);
        layer_norm_backward(dn2, k.n2, k.inv_std2, dx_mid);

        // x_mid = x_in + gate1 * attn_out
        RowMat<T> da(Eigen::Index(B) * S, D);
        for (int b = 0; b < B; ++b) {
            const auto rows = dx_mid.middleRows(Eigen::Index(b) * S, S);
            da.middleRows(Eigen::Index(b) * S, S).array() = rows.array().rowwise() * k.mod.row(b).segment(2 * D, D).array();
            dmod.row(b).segment(2 * D, D) +=
                (rows.array() * k.attn_out.middleRows(Eigen::Index(b) * S, S).array()).colwise().sum().matrix();
        }
        RowMat<T>& dx_in = dx_mid;  // residual path

        // Projection backward shared by q/k/v/o: returns d(input).
        auto project_back = [&](int w, int bias, int proj, const RowMat<T>& dy, const RowMat<T>& in,
                                const RowMat<T>& z, RowMat<T>& din, bool accumulate) {
            if (want(w)) add_weight_grad(grad, w, dy, in);
            if (want(bias)) add_bias_grad(grad, bias, dy);
            if (accumulate)
                din.noalias() += dy * params.mat(w);
            else
                din.noalias() = dy * params.mat(w);
            if (lora) {
                const auto& l = lora_[std::size_t(li)][std::size_t(proj)];
                const RowMat<T> dz = lscale * (dy * lora->mat(l.b));
                if (want_lora) {
                    const RowMat<T> gb = lscale * (dy.transpose() * z);
                    const RowMat<T> ga = dz.transpose() * in;
                    lora_grad->mat(l.b) += gb;
                    lora_grad->mat(l.a) += ga;
                }
                din.noalias() += dz * lora->mat(l.a);
            }
        };

        RowMat<T> d_o(Eigen::Index(B) * S, D);
        project_back(bi.o_w, bi.o_b, 3, da, k.o, k.zo, d_o, false);

        RowMat<T> dq = RowMat<T>::Zero(Eigen::Index(B) * S, D);
        RowMat<T> dk = RowMat<T>::Zero(Eigen::Index(B) * S, D);
        RowMat<T> dv = RowMat<T>::Zero(Eigen::Index(B) * S, D);
        parallel_for(std::size_t(B) * NH, workers, [&](std::size_t job) {
            const int b = int(job) / NH;
            const int h = int(job) % NH;
            const int valid = 2 * P + c.text_len[std::size_t(b)];
            const auto probs = k.probs.block((Eigen::Index(b) * NH + h) * S, 0, S, valid);
            const auto doh = d_o.block(Eigen::Index(b) * S, h * dh, S, dh);
            const auto vh = k.v.block(Eigen::Index(b) * S, h * dh, valid, dh);
            const auto qh = k.q.block(Eigen::Index(b) * S, h * dh, S, dh);
            const auto kh = k.k.block(Eigen::Index(b) * S, h * dh, valid, dh);
            RowMat<T> dp = doh * vh.transpose();
            dv.block(Eigen::Index(b) * S, h * dh, valid, dh).noalias() = probs.transpose() * doh;
            const auto rowdot = (dp.array() * probs.array()).rowwise().sum().eval();
            RowMat<T> ds = (probs.array() * (dp.array().colwise() - rowdot)).matrix() * inv_sqrt;
            dq.block(Eigen::Index(b) * S, h * dh, S, dh).noalias() = ds * kh;
            dk.block(Eigen::Index(b) * S, h * dh, valid, dh).noalias() = ds.transpose() * qh;
        });

        RowMat<T> dh1(Eigen::Index(B) * S, D);
        project_back(bi.q_w, bi.q_b, 0, dq, k.h1, k.zq, dh1, false);
        project_back(bi.k_w, bi.k_b, 1, dk, k.h1, k.zk, dh1, true);
        project_back(bi.v_w, bi.v_b, 2, dv, k.h1, k.zv, dh1, true);

        const RowMat<T> dn1 = modulate_backward(dh1, k.n1, k.mod, 0, D, S, dmod);
        if (below_needs[std::size_t(li)]) layer_norm_backward(dn1, k.n1, k.inv_std1, dx_in);

        if (want(bi.mod_w)) add_weight_grad(grad, bi.mod_w, dmod, c.t_act);
        if (want(bi.mod_b)) add_bias_grad(grad, bi.mod_b, dmod);
        if (need_temb_grads) d_tact.noalias() += dmod * params.mat(bi.mod_w);
        dx = std::move(dx_in);
    }

    if (need_temb_grads) {
        RowMat<T> dtemb = d_tact.array() * c.temb.unaryExpr([](T v) { return silu_grad(v); }).array();
        if (want(t_w2_)) add_weight_grad(grad, t_w2_, dtemb, c.t_a1);
        if (want(t_b2_)) add_bias_grad(grad, t_b2_, dtemb);
        RowMat<T> dh = (dtemb * params.mat(t_w2_)).array() * c.t_h1.unaryExpr([](T v) { return silu_grad(v); }).array();
        if (want(t_w1_)) add_weight_grad(grad, t_w1_, dh, c.t_freq);
        if (want(t_b1_)) add_bias_grad(grad, t_b1_, dh);
    }

    if (!need_embed_grads) return;
    RowMat<T> dc(Eigen::Index(B) * P, D);
    RowMat<T> dl(Eigen::Index(B) * P, D);
    for (int b = 0; b < B; ++b) {
        dc.middleRows(Eigen::Index(b) * P, P) = dx.middleRows(Eigen::Index(b) * S, P);
        dl.middleRows(Eigen::Index(b) * P, P) = dx.middleRows(Eigen::Index(b) * S + P, P);
    }
    const ConstMatMap<T> cond_tok(input.cond.data(), Eigen::Index(B) * P, cdim);
    const ConstMatMap<T> lat_tok(input.latent.data(), Eigen::Index(B) * P, ldim);
    if (want(c_w_)) add_weight_grad(grad, c_w_, dc, cond_tok);
    if (want(c_b_)) add_bias_grad(grad, c_b_, dc);
    if (want(x_w_)) add_weight_grad(grad, x_w_, dl, lat_tok);
    if (want(x_b_)) add_bias_grad(grad, x_b_, dl);
    for (int b = 0; b < B; ++b) {
        for (int p = 0; p < P; ++p) {
            const auto rc = dx.row(Eigen::Index(b) * S + p);
            const auto rl = dx.row(Eigen::Index(b) * S + P + p);
            if (want(pos_row_)) grad.mat(pos_row_).row(p / gw) += rc + rl;
            if (want(pos_col_)) grad.mat(pos_col_).row(p % gw) += rc + rl;
            if (want(type_embed_)) {
                grad.mat(type_embed_).row(0) += rc;
                grad.mat(type_embed_).row(1) += rl;
            }
        }
        for (int j = 0; j < Tt; ++j) {
            const auto rt = dx.row(Eigen::Index(b) * S + 2 * P + j);
            if (want(text_embed_)) grad.mat(text_embed_).row(input.text[std::size_t(b) * Tt + j]) += rt;
            if (want(pos_text_)) grad.mat(pos_text_).row(j) += rt;
            if (want(type_embed_)) grad.mat(type_embed_).row(2) += rt;
        }
    }
}

template <typename T>
std::vector<std::uint8_t> DiT<T>::trainable_mask(TrainStage stage) const {
    std::vector<std::uint8_t> mask(layout_->entries().size(), stage == TrainStage::stage1 ? 1 : 0);
    if (stage == TrainStage::stage1) return mask;
    for (const auto& bi : blocks_)
        for (int idx : {bi.ffn_w1, bi.ffn_b1, bi.ffn_w2, bi.ffn_b2, bi.mod_w, bi.mod_b}) mask[std::size_t(idx)] = 1;
    mask[std::size_t(final_mod_w_)] = 1;
    mask[std::size_t(final_mod_b_)] = 1;
    return mask;
}

template <typename T>
std::vector<std::string> DiT<T>::trainable_set(TrainStage stage) const {
    std::vector<std::string> names;
    const auto mask = trainable_mask(stage);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) names.push_back(layout_->entry(int(i)).name);
    if (stage == TrainStage::stage2)
        for (const auto& e : lora_layout_->entries()) names.push_back(e.name);
    return names;
}

template class DiT<float>;
template class DiT<double>;

RowMat<float> effective_weight(const DiT<float>& model, const ModelParams& params, const LoraAdapter* adapter,
                               const std::string& projection) {
    RowMat<float> w = params.mat(projection + ".w");
    if (adapter) {
        const auto a = adapter->mat(projection + ".lora_a");
        const auto b = adapter->mat(projection + ".lora_b");
        if (a.cols() != w.cols() || b.rows() != w.rows() || a.rows() != b.cols())
            throw std::invalid_argument("effective_weight: adapter shape mismatch for " + projection);
        w.noalias() += float(model.config().lora_scale()) * (b * a);
    }
    return w;
}

ModelParams merge_lora(const DiT<float>& model, const ModelParams& params, const LoraAdapter& adapter) {
    if (!(*adapter.layout == *model.lora_layout())) throw std::invalid_argument("merge_lora: adapter layout mismatch");
    if (!(*params.layout == *model.layout())) throw std::invalid_argument("merge_lora: parameter layout mismatch");
    ModelParams merged = params;
    for (int i = 0; i < model.config().depth; ++i)
        for (const char* proj : {"q", "k", "v", "o"}) {
            const std::string name = "blocks." + std::to_string(i) + ".attn." + proj;
            merged.mat(name + ".w") = effective_weight(model, params, &adapter, name);
        }
    return merged;
}

}  // namespace t2t
