#pragma once

#include <nlohmann/json.hpp>

#include "vpt/checkpoint.hpp"
#include "vpt/data.hpp"
#include "vpt/image.hpp"
#include "vpt/tensor.hpp"
#include "vpt/vocab.hpp"

namespace vpt {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct causality_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct control_arity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ReencoderKind { Separate, Shared };

struct ModelConfig {
    int d_h = 64;            // LM hidden size
    int d_v = 48;            // primary encoder feature width
    int d_z = 48;            // re-encoder feature width
    int image_size = 64;
    int patch_primary = 8;
    int patch_reencode = 16;
    int lm_layers = 4;
    int lm_heads = 4;
    int enc_layers = 2;
    int enc_heads = 4;
    int ffn_mult = 4;
    int max_seq_len = 512;
    int n_ctrl = 1;          // control tokens per re-encode group
    ReencoderKind reencoder = ReencoderKind::Separate;
    int base_vocab = default_word_table().size();
    int k = 8;               // region grid granularity
    uint64_t seed = 42;

    int primary_rows() const {
        const int side = image_size / patch_primary;
        return side * side;
    }
    int reenc_rows() const {
        if (reencoder == ReencoderKind::Shared) return primary_rows();
        const int side = image_size / patch_reencode;
        return side * side;
    }
    ImageRowDims image_row_dims() const {
        return ImageRowDims{primary_rows(), primary_rows(), reenc_rows()};
    }

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

// Patch rows in raster order; each row is the patch's pixels channel-major.
template <typename S>
Mat<S> patchify(const Image& img, int patch) {
    if (img.w != img.h) throw config_error("patchify: image must be square");
    if (img.w % patch != 0) throw config_error("patchify: size not divisible by patch");
    const int side = img.w / patch;
    Mat<S> out(side * side, patch * patch * 3);
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            const int row = py * side + px;
            int col = 0;
            for (int c = 0; c < 3; ++c)
                for (int dy = 0; dy < patch; ++dy)
                    for (int dx = 0; dx < patch; ++dx)
                        out(row, col++) =
                            static_cast<S>(img.ch[c](py * patch + dy, px * patch + dx));
        }
    return out;
}

template <typename S>
Mat<S> mask_to_additive(const MaskMat& allowed) {
    Mat<S> out(allowed.rows(), allowed.cols());
    for (int i = 0; i < allowed.rows(); ++i)
        for (int j = 0; j < allowed.cols(); ++j)
            out(i, j) = allowed(i, j) ? S(0) : mask_fill_value<S>();
    return out;
}

template <typename S>
Mat<S> causal_additive(int T) {
    Mat<S> out = Mat<S>::Zero(T, T);
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) out(i, j) = mask_fill_value<S>();
    return out;
}

template <typename S>
struct ToyMLLM {
    ModelConfig cfg;
    Vocabulary vocab;
    ParamSet<S> params;

    static ToyMLLM<S> init(const ModelConfig& cfg);
    static ToyMLLM<S> load(const std::string& path);
    void save(const std::string& path) const { save_checkpoint(path, params, cfg.to_json()); }

    // f_v: patch embedding + transformer encoder -> P x d_v
    Var<S> encode_image(Tape<S>& t, const Image& x) {
        require_model_size(x);
        return encoder_forward(t, "f_v", patchify<S>(x, cfg.patch_primary), cfg.d_v);
    }
    // g_v
    Var<S> project(Tape<S>& t, const Var<S>& z) {
        return add_rowvec(matmul(z, leaf(t, "g_v.w")), leaf(t, "g_v.b"));
    }
    Var<S> image_embeddings(Tape<S>& t, const Image& x) { return project(t, encode_image(t, x)); }

    // f_D (or the shared primary branch) -> N x width
    Var<S> re_encode(Tape<S>& t, const Image& x) {
        require_model_size(x);
        if (cfg.reencoder == ReencoderKind::Shared) return image_embeddings(t, x);
        return encoder_forward(t, "f_d", patchify<S>(x, cfg.patch_reencode), cfg.d_z);
    }

    // g_D: query = positioned z_D rows, keys/values = projected control
    // hidden states; single-position softmax collapses to weight 1.
    Var<S> control_project(Tape<S>& t, const Var<S>& z_d, const Var<S>& h_dc,
                           Var<S>* attn_out = nullptr) {
        if (h_dc.rows() != cfg.n_ctrl)
            throw control_arity_error("control_project: expected " + std::to_string(cfg.n_ctrl) +
                                      " control rows, got " + std::to_string(h_dc.rows()));
        if (h_dc.cols() != cfg.d_h) throw shape_error("control_project: h_DC width != d_h");
        Var<S> zq = add(z_d, leaf(t, "g_d.pos"));
        Var<S> q = add_rowvec(matmul(zq, leaf(t, "g_d.wq")), leaf(t, "g_d.bq"));
        Var<S> kk = add_rowvec(matmul(h_dc, leaf(t, "g_d.wk")), leaf(t, "g_d.bk"));
        Var<S> vv = add_rowvec(matmul(h_dc, leaf(t, "g_d.wv")), leaf(t, "g_d.bv"));
        Var<S> scores = scale(matmul_nt(q, kk), static_cast<S>(1.0 / std::sqrt(double(cfg.d_h))));
        Var<S> probs = softmax_rows(scores);
        if (attn_out) *attn_out = probs;
        Var<S> y = add(q, matmul(probs, vv));
        Var<S> normed = layer_norm(y, leaf(t, "g_d.ln.g"), leaf(t, "g_d.ln.b"));
        Var<S> f1 = gelu(add_rowvec(matmul(normed, leaf(t, "g_d.ffn.w1")), leaf(t, "g_d.ffn.b1")));
        Var<S> f2 = add_rowvec(matmul(f1, leaf(t, "g_d.ffn.w2")), leaf(t, "g_d.ffn.b2"));
        return add(y, f2);
    }

    struct LMOut {
        Var<S> logits;
        Var<S> hidden;
    };

    // Decoder stack over already-assembled embedding rows. Empty mask means
    // plain causal; a provided mask must never open a future position.
    LMOut llm_forward(Tape<S>& t, const Var<S>& embeds, const Mat<S>& additive_mask = {}) {
        const int T = embeds.rows();
        if (T > cfg.max_seq_len) throw config_error("llm_forward: sequence exceeds max_seq_len");
        Mat<S> mask = additive_mask.size() ? additive_mask : causal_additive<S>(T);
        if (mask.rows() != T || mask.cols() != T)
            throw shape_error("llm_forward: mask shape mismatch");
        for (int i = 0; i < T; ++i)
            for (int j = i + 1; j < T; ++j)
                if (mask(i, j) > mask_fill_value<S>() / 2)
                    throw causality_error("llm_forward: mask opens a future position");

        Var<S> x = add(embeds, slice_rows(leaf(t, "embed.pos"), 0, T));
        for (int l = 0; l < cfg.lm_layers; ++l) {
            const std::string p = "lm.L" + std::to_string(l);
            Var<S> a = attention(t, layer_norm(x, leaf(t, p + ".ln1.g"), leaf(t, p + ".ln1.b")), p,
                                 cfg.lm_heads, mask);
            x = add(x, a);
            Var<S> n2 = layer_norm(x, leaf(t, p + ".ln2.g"), leaf(t, p + ".ln2.b"));
            Var<S> f1 = gelu(add_rowvec(matmul(n2, leaf(t, p + ".ffn.w1")), leaf(t, p + ".ffn.b1")));
            Var<S> f2 = add_rowvec(matmul(f1, leaf(t, p + ".ffn.w2")), leaf(t, p + ".ffn.b2"));
            x = add(x, f2);
        }
        Var<S> hidden = layer_norm(x, leaf(t, "lm.ln_f.g"), leaf(t, "lm.ln_f.b"));
        Var<S> logits = matmul_nt(hidden, leaf(t, "embed.out"));
        return {logits, hidden};
    }

    Var<S> token_embed(Tape<S>& t, std::span<const int> ids) {
        return embedding_lookup(leaf(t, "embed.tok"), ids);
    }

    Image prep_image(const Image& x) const { return resize_image(x, cfg.image_size); }

  private:
    Var<S> leaf(Tape<S>& t, const std::string& name) { return t.leaf(params.at(name)); }

    void require_model_size(const Image& x) const {
        if (x.w != cfg.image_size || x.h != cfg.image_size)
            throw config_error("image must be resized to image_size before encoding");
    }

    Var<S> attention(Tape<S>& t, const Var<S>& x, const std::string& p, int heads,
                     const Mat<S>& mask) {
        const int d = x.cols();
        const int hd = d / heads;
        Var<S> q = add_rowvec(matmul(x, leaf(t, p + ".attn.wq")), leaf(t, p + ".attn.bq"));
        Var<S> k = add_rowvec(matmul(x, leaf(t, p + ".attn.wk")), leaf(t, p + ".attn.bk"));
        Var<S> v = add_rowvec(matmul(x, leaf(t, p + ".attn.wv")), leaf(t, p + ".attn.bv"));
        std::vector<Var<S>> ctx;
        for (int h = 0; h < heads; ++h) {
            Var<S> qh = slice_cols(q, h * hd, hd);
            Var<S> kh = slice_cols(k, h * hd, hd);
            Var<S> vh = slice_cols(v, h * hd, hd);
            Var<S> scores = scale(matmul_nt(qh, kh), static_cast<S>(1.0 / std::sqrt(double(hd))));
            Var<S> probs = softmax_with_additive_mask(scores, mask);
            ctx.push_back(matmul(probs, vh));
        }
        Var<S> merged = concat_cols(std::span<const Var<S>>(ctx));
        return add_rowvec(matmul(merged, leaf(t, p + ".attn.wo")), leaf(t, p + ".attn.bo"));
    }

    // Shared patch-embed + bidirectional transformer for f_v / f_D.
    Var<S> encoder_forward(Tape<S>& t, const std::string& enc, const Mat<S>& patches, int width) {
        Var<S> x = add_rowvec(matmul(t.constant(patches), leaf(t, enc + ".patch.w")),
                              leaf(t, enc + ".patch.b"));
        x = add(x, leaf(t, enc + ".pos"));
        const Mat<S> no_mask = Mat<S>::Zero(x.rows(), x.rows());
        for (int l = 0; l < cfg.enc_layers; ++l) {
            const std::string p = enc + ".L" + std::to_string(l);
            Var<S> a = attention(t, layer_norm(x, leaf(t, p + ".ln1.g"), leaf(t, p + ".ln1.b")), p,
                                 cfg.enc_heads, no_mask);
            x = add(x, a);
            Var<S> n2 = layer_norm(x, leaf(t, p + ".ln2.g"), leaf(t, p + ".ln2.b"));
            Var<S> f1 = gelu(add_rowvec(matmul(n2, leaf(t, p + ".ffn.w1")), leaf(t, p + ".ffn.b1")));
            Var<S> f2 = add_rowvec(matmul(f1, leaf(t, p + ".ffn.w2")), leaf(t, p + ".ffn.b2"));
            x = add(x, f2);
        }
        return layer_norm(x, leaf(t, enc + ".ln_f.g"), leaf(t, enc + ".ln_f.b"));
    }
};

// ---------------------------------------------------------------------------
// Initialization. Components draw from independently seeded streams in a
// fixed order, so f_D never shares values with f_v and checkpoints are
// reproducible per (config, seed).

namespace detail {

template <typename S>
void add_linear(ParamSet<S>& ps, const std::string& name, int in, int out, std::mt19937_64& rng,
                double stddev = 0.08) {
    ps.add(name + ".w", randn<S>(in, out, rng, stddev));
    ps.add(name + ".b", Mat<S>::Zero(1, out));
}

template <typename S>
void add_ln(ParamSet<S>& ps, const std::string& name, int width) {
    ps.add(name + ".g", Mat<S>::Ones(1, width));
    ps.add(name + ".b", Mat<S>::Zero(1, width));
}

template <typename S>
void add_block(ParamSet<S>& ps, const std::string& p, int width, int ffn_mult,
               std::mt19937_64& rng) {
    add_ln(ps, p + ".ln1", width);
    ps.add(p + ".attn.wq", randn<S>(width, width, rng, 0.08));
    ps.add(p + ".attn.bq", Mat<S>::Zero(1, width));
    ps.add(p + ".attn.wk", randn<S>(width, width, rng, 0.08));
    ps.add(p + ".attn.bk", Mat<S>::Zero(1, width));
    ps.add(p + ".attn.wv", randn<S>(width, width, rng, 0.08));
    ps.add(p + ".attn.bv", Mat<S>::Zero(1, width));
    ps.add(p + ".attn.wo", randn<S>(width, width, rng, 0.08));
    ps.add(p + ".attn.bo", Mat<S>::Zero(1, width));
    add_ln(ps, p + ".ln2", width);
    ps.add(p + ".ffn.w1", randn<S>(width, width * ffn_mult, rng, 0.08));
    ps.add(p + ".ffn.b1", Mat<S>::Zero(1, width * ffn_mult));
    ps.add(p + ".ffn.w2", randn<S>(width * ffn_mult, width, rng, 0.08));
    ps.add(p + ".ffn.b2", Mat<S>::Zero(1, width));
}

template <typename S>
void add_encoder(ParamSet<S>& ps, const std::string& enc, int patch, int width, int rows,
                 int layers, int ffn_mult, std::mt19937_64& rng) {
    add_linear(ps, enc + ".patch", patch * patch * 3, width, rng);
    ps.add(enc + ".pos", randn<S>(rows, width, rng, 0.02));
    for (int l = 0; l < layers; ++l)
        add_block(ps, enc + ".L" + std::to_string(l), width, ffn_mult, rng);
    add_ln(ps, enc + ".ln_f", width);
}

}  // namespace detail

template <typename S>
ToyMLLM<S> ToyMLLM<S>::init(const ModelConfig& cfg) {
    cfg.validate();
    ToyMLLM<S> m;
    m.cfg = cfg;
    m.vocab = extend_vocabulary(cfg.base_vocab, cfg.k);
    ParamSet<S>& ps = m.params;

    {
        std::mt19937_64 rng(cfg.seed * 7001 + 1);
        ps.add("embed.tok", randn<S>(m.vocab.total_size, cfg.d_h, rng, 0.04));
        ps.add("embed.pos", randn<S>(cfg.max_seq_len, cfg.d_h, rng, 0.02));
        ps.add("embed.out", randn<S>(m.vocab.total_size, cfg.d_h, rng, 0.08));
    }
    {
        std::mt19937_64 rng(cfg.seed * 7001 + 2);
        for (int l = 0; l < cfg.lm_layers; ++l)
            detail::add_block(ps, "lm.L" + std::to_string(l), cfg.d_h, cfg.ffn_mult, rng);
        detail::add_ln(ps, "lm.ln_f", cfg.d_h);
    }
    {
        std::mt19937_64 rng(cfg.seed * 7001 + 3);
        detail::add_encoder(ps, "f_v", cfg.patch_primary, cfg.d_v, cfg.primary_rows(),
                            cfg.enc_layers, cfg.ffn_mult, rng);
        detail::add_linear(ps, "g_v", cfg.d_v, cfg.d_h, rng);
    }
    if (cfg.reencoder == ReencoderKind::Separate) {
        std::mt19937_64 rng(cfg.seed * 7001 + 4);
        detail::add_encoder(ps, "f_d", cfg.patch_reencode, cfg.d_z, cfg.reenc_rows(),
                            cfg.enc_layers, cfg.ffn_mult, rng);
    }
    {
        std::mt19937_64 rng(cfg.seed * 7001 + 5);
        const int w_in = cfg.reencoder == ReencoderKind::Shared ? cfg.d_h : cfg.d_z;
        ps.add("g_d.pos", randn<S>(cfg.reenc_rows(), w_in, rng, 0.02));
        ps.add("g_d.wq", randn<S>(w_in, cfg.d_h, rng, 0.08));
        ps.add("g_d.bq", Mat<S>::Zero(1, cfg.d_h));
        ps.add("g_d.wk", randn<S>(cfg.d_h, cfg.d_h, rng, 0.08));
        ps.add("g_d.bk", Mat<S>::Zero(1, cfg.d_h));
        ps.add("g_d.wv", randn<S>(cfg.d_h, cfg.d_h, rng, 0.08));
        ps.add("g_d.bv", Mat<S>::Zero(1, cfg.d_h));
        detail::add_ln(ps, "g_d.ln", cfg.d_h);
        ps.add("g_d.ffn.w1", randn<S>(cfg.d_h, cfg.d_h * 2, rng, 0.08));
        ps.add("g_d.ffn.b1", Mat<S>::Zero(1, cfg.d_h * 2));
        ps.add("g_d.ffn.w2", randn<S>(cfg.d_h * 2, cfg.d_h, rng, 0.08));
        ps.add("g_d.ffn.b2", Mat<S>::Zero(1, cfg.d_h));
    }
    return m;
}

template <typename S>
ToyMLLM<S> ToyMLLM<S>::load(const std::string& path) {
    const auto entries = read_container(path);
    std::string config_json;
    for (const auto& e : entries)
        if (e.name == kConfigEntryName) config_json.assign(e.raw.begin(), e.raw.end());
    if (config_json.empty()) throw io_error("ToyMLLM::load: checkpoint has no config");
    ToyMLLM<S> m = init(ModelConfig::from_json(config_json));
    load_checkpoint(path, m.params);
    return m;
}

}  // namespace vpt
