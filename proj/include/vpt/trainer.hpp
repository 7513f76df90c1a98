#pragma once

#include <fstream>
#include <iostream>

#include "vpt/engine.hpp"
#include "vpt/optim.hpp"

namespace vpt {

struct PhaseConfig {
    std::string name = "finetune";  // align | finetune | tune_projector
    int epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 16;
    double weight_decay = 0.0;
    uint64_t seed = 0;
};

struct StepLog {
    std::string phase;
    long step = 0;
    double loss = 0.0;
};

inline void save_metrics(const std::string& path, const std::vector<StepLog>& logs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_metrics: cannot open " + path);
    for (const auto& l : logs)
        out << "{\"phase\":\"" << l.phase << "\",\"step\":" << l.step << ",\"loss\":" << l.loss
            << "}\n";
}

// ---------------------------------------------------------------------------
// Freezing

template <typename S>
void set_all_trainable(ParamSet<S>& ps, bool trainable) {
    ps.for_each([&](Param<S>& p) { p.trainable = trainable; });
}

template <typename S>
void freeze_prefixes(ParamSet<S>& ps, std::span<const std::string> prefixes) {
    ps.for_each([&](Param<S>& p) {
        for (const auto& pre : prefixes)
            if (p.name.rfind(pre, 0) == 0) p.trainable = false;
    });
}

template <typename S>
void freeze_all_except_prefixes(ParamSet<S>& ps, std::span<const std::string> prefixes) {
    ps.for_each([&](Param<S>& p) {
        p.trainable = false;
        for (const auto& pre : prefixes)
            if (p.name.rfind(pre, 0) == 0) p.trainable = true;
    });
}

// FNV-1a over raw parameter bytes; freezing contracts compare these.
template <typename S>
std::map<std::string, uint64_t> param_fingerprints(const ParamSet<S>& ps) {
    std::map<std::string, uint64_t> out;
    ps.for_each([&](const Param<S>& p) {
        uint64_t h = 1469598103934665603ull;
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        for (size_t i = 0; i < sizeof(S) * p.value.size(); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
        out[p.name] = h;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Teacher-forcing forward for one DialogueSample.
//
// Re-encode samples run in two stages sharing one tape: a causal prefix pass
// ending at the last control row yields h_DC (identical, by causality, to
// the hidden state the generation engine captures), then g_D turns it and
// the re-encoded features into the second-pass rows of the full sequence.

template <typename S>
struct SampleForward {
    Var<S> loss;
    Var<S> logits;
    std::optional<Var<S>> h_dc;
    int ctrl_first_row = -1;
};

template <typename S>
SampleForward<S> sample_loss(ToyMLLM<S>& m, Tape<S>& tape, const DialogueSample& s,
                             const Image& original, bool strict_control_only = false,
                             const Var<S>* logits_bias = nullptr) {
    const int T = s.length();
    if (T < 2) throw training_error("sample_loss: sample too short");
    const Image model_view = m.prep_image(original);

    int ctrl_first = -1, ctrl_last = -1;
    for (int i = 0; i < T; ++i) {
        const auto& r = s.rows[i];
        if (r.kind == RowKind::Token && r.role == SegmentRole::AssistantVpt && r.loss == 0) {
            if (ctrl_first < 0) ctrl_first = i;
            ctrl_last = i;
        }
    }

    std::optional<Var<S>> primary;
    const auto primary_var = [&]() {
        if (!primary) primary = m.image_embeddings(tape, model_view);
        return *primary;
    };

    // assemble embedding rows for s.rows[0, upto)
    SampleForward<S> out{};
    std::optional<Var<S>> h_d;
    const auto assemble = [&](int upto) {
        std::vector<Var<S>> parts;
        std::vector<int> run;
        const auto flush = [&]() {
            if (!run.empty()) {
                parts.push_back(m.token_embed(tape, run));
                run.clear();
            }
        };
        for (int i = 0; i < upto; ++i) {
            const auto& r = s.rows[i];
            if (r.kind == RowKind::Token) {
                run.push_back(r.token);
                continue;
            }
            flush();
            if (r.kind == RowKind::ImagePrimaryFeat) {
                if (i + m.cfg.primary_rows() > T) throw shape_error("sample_loss: primary rows");
                parts.push_back(primary_var());
                i += m.cfg.primary_rows() - 1;
            } else if (r.kind == RowKind::ImageCropFeat) {
                if (!s.crop_box) throw builder_error("sample_loss: crop rows without crop box");
                const Image cropped =
                    resize_image(crop_image(original, *s.crop_box), m.cfg.image_size);
                parts.push_back(m.image_embeddings(tape, cropped));
                i += m.cfg.primary_rows() - 1;
            } else {  // ImageReEncFeat
                if (!h_d) throw training_error("sample_loss: re-encode rows before control rows");
                parts.push_back(*h_d);
                i += m.cfg.reenc_rows() - 1;
            }
        }
        flush();
        return concat_rows(std::span<const Var<S>>(parts));
    };

    if (ctrl_first >= 0) {
        if (ctrl_last - ctrl_first + 1 != m.cfg.n_ctrl)
            throw control_arity_error("sample_loss: control run does not match n_ctrl");
        Var<S> prefix = assemble(ctrl_last + 1);
        if (prefix.rows() != ctrl_last + 1)
            throw shape_error("sample_loss: prefix split a feature block");
        auto lm1 = m.llm_forward(tape, prefix);
        out.h_dc = slice_rows(lm1.hidden, ctrl_first, m.cfg.n_ctrl);
        out.ctrl_first_row = ctrl_first;
        Var<S> z_d = m.re_encode(tape, model_view);
        h_d = m.control_project(tape, z_d, *out.h_dc);
    }

    Var<S> embeds = assemble(T);
    if (embeds.rows() != T) throw shape_error("sample_loss: assembled rows != sample length");

    Mat<S> additive;
    if (s.mask_modeling) additive = mask_to_additive<S>(build_attention_mask(s, strict_control_only));
    auto lm = m.llm_forward(tape, embeds, additive);
    Var<S> logits = lm.logits;
    if (logits_bias) logits = add(logits, *logits_bias);
    out.logits = logits;

    std::vector<int> targets(T - 1, 0);
    std::vector<uint8_t> mask(T - 1, 0);
    for (int i = 0; i + 1 < T; ++i) {
        const auto& nxt = s.rows[i + 1];
        if (nxt.kind == RowKind::Token && nxt.loss) {
            targets[i] = nxt.token;
            mask[i] = 1;
        }
    }
    out.loss = cross_entropy_masked(slice_rows(logits, 0, T - 1), targets, mask);
    return out;
}

// ---------------------------------------------------------------------------

template <typename S>
double train_step(ToyMLLM<S>& m, AdamW<S>& opt, std::span<const DialogueSample* const> batch,
                  std::span<const Image* const> images, bool strict_control_only,
                  const std::string& batch_id) {
    if (batch.empty() || batch.size() != images.size())
        throw training_error("train_step: bad batch " + batch_id);
    m.params.zero_grad();
    double total = 0.0;
    const S inv = static_cast<S>(1.0 / static_cast<double>(batch.size()));
    for (size_t i = 0; i < batch.size(); ++i) {
        Tape<S> tape;
        auto fw = sample_loss(m, tape, *batch[i], *images[i], strict_control_only);
        total += static_cast<double>(fw.loss.value()(0, 0));
        tape.backward(scale(fw.loss, inv));
    }
    const double mean = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean)) throw training_error("train_step: non-finite loss in batch " + batch_id);
    opt.step(m.params);
    return mean;
}

// Renders each sample's scene once and keeps it for reuse across epochs.
class ImageCache {
  public:
    const Image& get(const SourceRecord& rec) {
        auto it = cache_.find(rec.id);
        if (it == cache_.end()) it = cache_.emplace(rec.id, render(rec.scene)).first;
        return it->second;
    }

  private:
    std::map<std::string, Image> cache_;
};

// Alignment forward: the LLM input is placeholder + re-encoded rows only,
// and h_DC comes from the placeholder-row hidden state (there is no control
// token yet at this phase).
template <typename S>
Var<S> align_loss(ToyMLLM<S>& m, Tape<S>& tape, const SourceRecord& rec, const Image& original,
                  const WordTable& wt) {
    const Image model_view = m.prep_image(original);
    const std::vector<TokenId> ph{m.vocab.image_placeholder};
    Var<S> ph_emb = m.token_embed(tape, ph);
    auto lm1 = m.llm_forward(tape, ph_emb);
    std::vector<Var<S>> reps(static_cast<size_t>(m.cfg.n_ctrl), slice_rows(lm1.hidden, 0, 1));
    Var<S> h_dc = m.cfg.n_ctrl == 1 ? reps[0] : concat_rows(std::span<const Var<S>>(reps));
    Var<S> h_d = m.control_project(tape, m.re_encode(tape, model_view), h_dc);

    std::vector<TokenId> caption = wt.encode(rec.answer);
    caption.push_back(m.vocab.eos);
    Var<S> cap_emb = m.token_embed(tape, caption);
    Var<S> embeds = concat_rows({ph_emb, h_d, cap_emb});

    const int T = embeds.rows();
    auto lm = m.llm_forward(tape, embeds);
    std::vector<int> targets(T - 1, 0);
    std::vector<uint8_t> mask(T - 1, 0);
    const int cap_start = 1 + m.cfg.reenc_rows();
    for (int i = cap_start; i < T; ++i) {
        targets[i - 1] = caption[i - cap_start];
        mask[i - 1] = 1;
    }
    return cross_entropy_masked(slice_rows(lm.logits, 0, T - 1), targets, mask);
}

template <typename S>
std::vector<StepLog> align_phase(ToyMLLM<S>& m, const std::vector<SourceRecord>& captions,
                                 const PhaseConfig& cfg) {
    std::vector<StepLog> logs;
    if (m.cfg.reencoder == ReencoderKind::Shared) {
        std::cerr << "[align] reencoder is shared; alignment phase skipped\n";
        return logs;
    }
    const std::string g_d[] = {"g_d."};
    freeze_all_except_prefixes(m.params, g_d);
    AdamW<S> opt({.lr = cfg.learning_rate, .weight_decay = cfg.weight_decay});
    ImageCache cache;
    const WordTable& wt = default_word_table();

    std::vector<size_t> order(captions.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const size_t n = std::min<size_t>(cfg.batch_size, order.size() - at);
            m.params.zero_grad();
            double total = 0.0;
            for (size_t b = 0; b < n; ++b) {
                const auto& rec = captions[order[at + b]];
                Tape<S> tape;
                Var<S> loss = align_loss(m, tape, rec, cache.get(rec), wt);
                total += static_cast<double>(loss.value()(0, 0));
                tape.backward(scale(loss, static_cast<S>(1.0 / n)));
            }
            opt.step(m.params);
            logs.push_back({cfg.name, step++, total / n});
        }
    }
    set_all_trainable(m.params, true);
    return logs;
}

template <typename S>
std::vector<StepLog> finetune_phase(ToyMLLM<S>& m, const std::vector<DialogueSample>& samples,
                                    const PhaseConfig& cfg, bool strict_control_only = false) {
    if (samples.empty()) throw training_error("finetune_phase: no samples");
    set_all_trainable(m.params, true);
    const std::string frozen[] = {"f_v.", "f_d."};
    freeze_prefixes(m.params, frozen);
    AdamW<S> opt({.lr = cfg.learning_rate, .weight_decay = cfg.weight_decay});
    ImageCache cache;

    std::vector<StepLog> logs;
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const size_t n = std::min<size_t>(cfg.batch_size, order.size() - at);
            std::vector<const DialogueSample*> batch;
            std::vector<const Image*> images;
            for (size_t b = 0; b < n; ++b) {
                batch.push_back(&samples[order[at + b]]);
                images.push_back(&cache.get(samples[order[at + b]].record));
            }
            const double loss = train_step(m, opt, batch, images, strict_control_only,
                                           cfg.name + ":" + std::to_string(step));
            logs.push_back({cfg.name, step++, loss});
        }
    }
    set_all_trainable(m.params, true);
    return logs;
}

// One extra pass over the key/value projection of h_DC, everything else
// pinned.
template <typename S>
std::vector<StepLog> tune_projector_extra(ToyMLLM<S>& m,
                                          const std::vector<DialogueSample>& samples,
                                          int epochs = 1, double learning_rate = 1e-3,
                                          uint64_t seed = 0, bool strict_control_only = false) {
    const std::string only[] = {"g_d.wk", "g_d.bk", "g_d.wv", "g_d.bv"};
    freeze_all_except_prefixes(m.params, only);
    PhaseConfig cfg;
    cfg.name = "tune_projector";
    cfg.epochs = epochs;
    cfg.learning_rate = learning_rate;
    cfg.seed = seed;
    AdamW<S> opt({.lr = cfg.learning_rate});
    ImageCache cache;
    std::vector<StepLog> logs;
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    long step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const size_t n = std::min<size_t>(cfg.batch_size, order.size() - at);
            std::vector<const DialogueSample*> batch;
            std::vector<const Image*> images;
            for (size_t b = 0; b < n; ++b) {
                batch.push_back(&samples[order[at + b]]);
                images.push_back(&cache.get(samples[order[at + b]].record));
            }
            const double loss = train_step(m, opt, batch, images, strict_control_only,
                                           cfg.name + ":" + std::to_string(step));
            logs.push_back({cfg.name, step++, loss});
        }
    }
    set_all_trainable(m.params, true);
    return logs;
}

}  // namespace vpt
