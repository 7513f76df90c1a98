#pragma once

#include <random>

#include "vpt/trainer.hpp"

namespace vpt::testing {

// Small-but-complete config exercising every component.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.d_h = 32;
    c.d_v = 24;
    c.d_z = 24;
    c.image_size = 32;
    c.patch_primary = 8;   // 16 primary rows
    c.patch_reencode = 16; // 4 re-encode rows
    c.lm_layers = 2;
    c.lm_heads = 4;
    c.enc_layers = 1;
    c.enc_heads = 4;
    c.ffn_mult = 2;
    c.max_seq_len = 256;
    c.seed = 5;
    return c;
}

inline Image noise_image(int size, uint64_t seed) {
    std::mt19937_64 rng(seed);
    Image img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const auto v = [&] { return static_cast<float>((rng() % 256) / 255.0); };
            img.set_pixel(x, y, {v(), v(), v()});
        }
    return img;
}

// Raw embedding-row matrix for a sample, second-pass features included, the
// way the trainer's full pass sees it. Returned rows are plain values, so
// tests can perturb arbitrary positions and rerun llm_forward.
template <typename S>
Mat<S> assemble_sample_rows(ToyMLLM<S>& m, const DialogueSample& s, const Image& original) {
    Tape<S> tape;
    const Image model_view = m.prep_image(original);

    int ctrl_first = -1, ctrl_last = -1;
    for (int i = 0; i < s.length(); ++i) {
        const auto& r = s.rows[i];
        if (r.kind == RowKind::Token && r.role == SegmentRole::AssistantVpt && r.loss == 0) {
            if (ctrl_first < 0) ctrl_first = i;
            ctrl_last = i;
        }
    }

    Mat<S> rows(s.length(), m.cfg.d_h);
    int at = 0;
    std::optional<Mat<S>> h_d;
    while (at < s.length()) {
        const auto& r = s.rows[at];
        if (r.kind == RowKind::Token) {
            const std::vector<TokenId> one{r.token};
            rows.row(at) = m.token_embed(tape, one).value();
            ++at;
            continue;
        }
        if (r.kind == RowKind::ImagePrimaryFeat) {
            rows.middleRows(at, m.cfg.primary_rows()) = m.image_embeddings(tape, model_view).value();
            at += m.cfg.primary_rows();
        } else if (r.kind == RowKind::ImageCropFeat) {
            const Image cropped = resize_image(crop_image(original, *s.crop_box), m.cfg.image_size);
            rows.middleRows(at, m.cfg.primary_rows()) = m.image_embeddings(tape, cropped).value();
            at += m.cfg.primary_rows();
        } else {
            if (!h_d) {
                auto lm1 = m.llm_forward(tape, tape.constant(rows.topRows(ctrl_last + 1)));
                Mat<S> h_dc = lm1.hidden.value().middleRows(ctrl_first, m.cfg.n_ctrl);
                auto hd_var =
                    m.control_project(tape, m.re_encode(tape, model_view), tape.constant(h_dc));
                h_d = hd_var.value();
            }
            rows.middleRows(at, m.cfg.reenc_rows()) = *h_d;
            at += m.cfg.reenc_rows();
        }
    }
    return rows;
}

}  // namespace vpt::testing
