#pragma once

#include "vpt/data.hpp"
#include "vpt/model.hpp"

namespace vpt {

struct prompt_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TraceRole : uint8_t {
    PromptText = 0,
    ImagePrimary = 1,
    Generated = 2,
    ImageCrop = 3,
    ImageReEncoded = 4,
};

struct TraceSegment {
    TraceRole role;
    int length = 0;
    bool operator==(const TraceSegment&) const = default;
};

using Layout = std::vector<TraceSegment>;

struct PerceptionEvent {
    enum class Kind : uint8_t { RegionSelection, ReEncode, Malformed };
    Kind kind = Kind::Malformed;
    bool executed = false;
    int at_generated = 0;  // generated-token count when the group completed
    CellBox cells{};
    PixelBox pixel_box{};
    std::vector<int> control_positions;  // indices into the generated stream
    MalformedKind malformed_kind = MalformedKind::BadRegionStructure;
};

enum class StopReason : uint8_t { Eos, TokenBudget, PerceptionBudget };

struct GenerationTrace {
    std::vector<TokenId> prompt;
    std::vector<TokenId> generated;
    Layout layout;
    std::vector<PerceptionEvent> events;
    StopReason stop = StopReason::Eos;
    // Control hidden states captured at the last executed re-encode event,
    // row-major; consistency checks compare these against the trainer's.
    std::vector<double> h_dc_rows;

    int layout_rows() const {
        int n = 0;
        for (const auto& s : layout) n += s.length;
        return n;
    }
    // Text tokens emitted after the last executed perception action.
    std::vector<TokenId> answer_tokens(const Vocabulary& vocab) const;
};

struct GenLimits {
    int max_tokens = 32;
    int max_region_events = 1;
    int max_reencode_events = 1;
};

struct DecodePolicy {
    enum class Kind : uint8_t { Greedy, Temperature, Scripted } kind = Kind::Greedy;
    double temperature = 1.0;
    uint64_t seed = 0;
    std::vector<TokenId> script;  // Scripted: emitted verbatim, EOS appended if absent

    static DecodePolicy greedy() { return {}; }
    static DecodePolicy scripted(std::vector<TokenId> toks) {
        DecodePolicy p;
        p.kind = Kind::Scripted;
        p.script = std::move(toks);
        return p;
    }
};

std::string trace_to_json(const GenerationTrace& t);
void append_trace(const std::string& path, const GenerationTrace& t);

// Teacher-forcing layout of a built sample, in engine trace roles. The
// engine's replay of the sample's assistant tokens must reproduce this
// exactly.
Layout sample_layout(const DialogueSample& s);

// ---------------------------------------------------------------------------

namespace detail {

inline void layout_push(Layout& layout, TraceRole role, int length) {
    if (length <= 0) return;
    if (!layout.empty() && layout.back().role == role) layout.back().length += length;
    else layout.push_back(TraceSegment{role, length});
}

template <typename S>
TokenId pick_token(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& logits,
                   const DecodePolicy& policy, std::mt19937_64& rng) {
    if (policy.kind == DecodePolicy::Kind::Temperature) {
        Eigen::Array<double, 1, Eigen::Dynamic> z =
            logits.template cast<double>().array() / std::max(policy.temperature, 1e-6);
        const double mx = z.maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> p = (z - mx).exp();
        p /= p.sum();
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(rng);
        for (int i = 0; i < p.size(); ++i) {
            r -= p(i);
            if (r <= 0) return i;
        }
        return static_cast<int>(p.size()) - 1;
    }
    int best = 0;
    logits.maxCoeff(&best);
    return best;
}

}  // namespace detail

// The token-triggered perception loop. Decodes greedily (or per policy) with
// full-prefix forwards; a completed perception group triggers the visual
// action, whose embedding rows are appended behind a "<sep> <image>" turn,
// and decoding continues. Malformed groups are recorded and left in context.
template <typename S>
GenerationTrace generate(ToyMLLM<S>& m, const Image& original, std::span<const TokenId> prompt,
                         const GenLimits& limits, const DecodePolicy& policy = {},
                         RegionRepr repr = RegionRepr::Tokens) {
    const Vocabulary& vocab = m.vocab;
    const WordTable& wt = default_word_table();
    int placeholders = 0;
    for (const TokenId t : prompt)
        if (t == vocab.image_placeholder) ++placeholders;
    if (placeholders != 1) throw prompt_error("generate: prompt needs exactly one image placeholder");
    if (limits.max_tokens < 0 || limits.max_region_events < 0 || limits.max_reencode_events < 0)
        throw prompt_error("generate: limits must be nonnegative");

    GenerationTrace trace;
    trace.prompt.assign(prompt.begin(), prompt.end());

    const Image model_view = m.prep_image(original);

    // Embedding rows grow as decoding proceeds; token rows come from the
    // embedding table, feature rows from the vision branches.
    Mat<S> rows(0, m.cfg.d_h);
    std::vector<int> gen_row_index;  // generated index -> row index
    const auto append_rows = [&](const Mat<S>& block) {
        const int at = static_cast<int>(rows.rows());
        rows.conservativeResize(at + block.rows(), Eigen::NoChange);
        rows.bottomRows(block.rows()) = block;
        return at;
    };
    const auto token_rows = [&](std::span<const TokenId> ids) {
        Tape<S> tape;
        return Mat<S>(m.token_embed(tape, ids).value());
    };
    const auto primary_features = [&](const Image& img) {
        Tape<S> tape;
        return Mat<S>(m.image_embeddings(tape, img).value());
    };

    // prompt: placeholder row triggers the primary pass right after it
    for (const TokenId t : prompt) {
        append_rows(token_rows(std::span(&t, 1)));
        detail::layout_push(trace.layout, TraceRole::PromptText, 1);
        if (t == vocab.image_placeholder) {
            append_rows(primary_features(model_view));
            detail::layout_push(trace.layout, TraceRole::ImagePrimary, m.cfg.primary_rows());
        }
    }

    std::mt19937_64 rng(policy.seed);
    Mat<S> last_hidden;
    int region_events = 0, reencode_events = 0;
    int bbox_start = 0;  // generated index where the current textual bbox attempt begins

    const auto inject_second_image = [&](const Mat<S>& feats, TraceRole role) {
        const std::vector<TokenId> turn{wt.id("<sep>"), vocab.image_placeholder};
        append_rows(token_rows(turn));
        detail::layout_push(trace.layout, TraceRole::PromptText, 2);
        append_rows(feats);
        detail::layout_push(trace.layout, role, static_cast<int>(feats.rows()));
        bbox_start = static_cast<int>(trace.generated.size());
    };

    while (static_cast<int>(trace.generated.size()) < limits.max_tokens) {
        TokenId next;
        if (policy.kind == DecodePolicy::Kind::Scripted &&
            trace.generated.size() < policy.script.size()) {
            // run the forward anyway: hidden states feed perception actions
            Tape<S> tape;
            auto out = m.llm_forward(tape, tape.constant(rows));
            last_hidden = out.hidden.value();
            next = policy.script[trace.generated.size()];
        } else if (policy.kind == DecodePolicy::Kind::Scripted) {
            next = vocab.eos;
            Tape<S> tape;
            auto out = m.llm_forward(tape, tape.constant(rows));
            last_hidden = out.hidden.value();
        } else {
            Tape<S> tape;
            auto out = m.llm_forward(tape, tape.constant(rows));
            last_hidden = out.hidden.value();
            const Mat<S>& logits = out.logits.value();
            next = detail::pick_token<S>(logits.row(logits.rows() - 1), policy, rng);
        }

        trace.generated.push_back(next);
        gen_row_index.push_back(static_cast<int>(rows.rows()));
        append_rows(token_rows(std::span(&next, 1)));
        detail::layout_push(trace.layout, TraceRole::Generated, 1);

        if (next == vocab.eos) {
            trace.stop = StopReason::Eos;
            return trace;
        }

        // group completion?
        std::optional<PerceptionTrigger> trig;
        if (repr == RegionRepr::Tokens || vocab.classify(next).kind != TokenKind::Text) {
            trig = scan_for_group(vocab, trace.generated);
        }
        if (repr == RegionRepr::RawBBoxText && next == wt.id(".")) {
            // a "." closes a textual bbox attempt
            const std::span<const TokenId> run(trace.generated.data() + bbox_start,
                                               trace.generated.size() - bbox_start);
            bbox_start = static_cast<int>(trace.generated.size());
            const auto parse = parse_bbox_text(wt, run, original.w, original.h);
            PerceptionEvent ev;
            ev.at_generated = static_cast<int>(trace.generated.size());
            if (parse.status == BBoxTextParse::Status::Ok) {
                ev.kind = PerceptionEvent::Kind::RegionSelection;
                ev.pixel_box = parse.box;
                if (region_events >= limits.max_region_events) {
                    trace.events.push_back(ev);
                    trace.stop = StopReason::PerceptionBudget;
                    return trace;
                }
                ev.executed = true;
                ++region_events;
                trace.events.push_back(ev);
                const Image cropped = resize_image(crop_image(original, parse.box),
                                                   m.cfg.image_size);
                inject_second_image(primary_features(cropped), TraceRole::ImageCrop);
            } else {
                ev.kind = PerceptionEvent::Kind::Malformed;
                ev.malformed_kind = parse.status == BBoxTextParse::Status::Inverted
                                        ? MalformedKind::InvertedRegion
                                        : MalformedKind::BadRegionStructure;
                trace.events.push_back(ev);
            }
            continue;
        }
        if (!trig) continue;

        PerceptionEvent ev;
        ev.at_generated = static_cast<int>(trace.generated.size());
        if (const auto* r = std::get_if<RegionTrigger>(&*trig)) {
            ev.kind = PerceptionEvent::Kind::RegionSelection;
            ev.cells = r->cells;
            const GridSpec grid(vocab.k, original.w, original.h);
            ev.pixel_box = cells_to_pixel_box(grid, r->cells);
            if (region_events >= limits.max_region_events) {
                trace.events.push_back(ev);
                trace.stop = StopReason::PerceptionBudget;
                return trace;
            }
            ev.executed = true;
            ++region_events;
            trace.events.push_back(ev);
            const Image cropped = resize_image(crop_image(original, ev.pixel_box),
                                               m.cfg.image_size);
            inject_second_image(primary_features(cropped), TraceRole::ImageCrop);
        } else if (const auto* e = std::get_if<ReEncodeTrigger>(&*trig)) {
            ev.kind = PerceptionEvent::Kind::ReEncode;
            ev.control_positions = e->control_positions;
            if (static_cast<int>(e->control_positions.size()) != m.cfg.n_ctrl) {
                ev.kind = PerceptionEvent::Kind::Malformed;
                ev.malformed_kind = MalformedKind::BadReEncodeStructure;
                trace.events.push_back(ev);
                continue;
            }
            if (reencode_events >= limits.max_reencode_events) {
                trace.events.push_back(ev);
                trace.stop = StopReason::PerceptionBudget;
                return trace;
            }
            ev.executed = true;
            ++reencode_events;
            trace.events.push_back(ev);
            // h_DC: final-layer hidden at the control rows, from the last
            // forward (whose input ended at the last control row).
            Mat<S> h_dc(m.cfg.n_ctrl, m.cfg.d_h);
            for (int i = 0; i < m.cfg.n_ctrl; ++i)
                h_dc.row(i) = last_hidden.row(gen_row_index[e->control_positions[i]]);
            trace.h_dc_rows.clear();
            for (int i = 0; i < h_dc.rows(); ++i)
                for (int j = 0; j < h_dc.cols(); ++j)
                    trace.h_dc_rows.push_back(static_cast<double>(h_dc(i, j)));
            Tape<S> tape;
            Var<S> z_d = m.re_encode(tape, model_view);
            Var<S> h_d = m.control_project(tape, z_d, tape.constant(h_dc));
            inject_second_image(Mat<S>(h_d.value()), TraceRole::ImageReEncoded);
        } else {
            ev.kind = PerceptionEvent::Kind::Malformed;
            ev.malformed_kind = std::get<MalformedGroup>(*trig).kind;
            trace.events.push_back(ev);
        }
    }
    trace.stop = StopReason::TokenBudget;
    return trace;
}

}  // namespace vpt
