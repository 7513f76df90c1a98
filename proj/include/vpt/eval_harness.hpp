#pragma once

#include <chrono>

#include "vpt/eval.hpp"
#include "vpt/trainer.hpp"

namespace vpt {

enum class EvalMode { ForcedRegion, ForcedReEncode, FreeChoice, Baseline };

inline std::string eval_mode_name(EvalMode m) {
    switch (m) {
        case EvalMode::ForcedRegion: return "forced-region";
        case EvalMode::ForcedReEncode: return "forced-reencode";
        case EvalMode::FreeChoice: return "free-choice";
        case EvalMode::Baseline: return "baseline";
    }
    return "?";
}

inline EvalMode eval_mode_from_name(const std::string& s) {
    if (s == "forced-region") return EvalMode::ForcedRegion;
    if (s == "forced-reencode") return EvalMode::ForcedReEncode;
    if (s == "free-choice") return EvalMode::FreeChoice;
    if (s == "baseline") return EvalMode::Baseline;
    throw std::invalid_argument("unknown eval mode " + s);
}

// Prompt = [<image>] question (+ the mode's instruction suffix).
inline std::vector<TokenId> make_prompt(const Vocabulary& vocab, const WordTable& wt,
                                        const SourceRecord& rec, EvalMode mode) {
    std::vector<TokenId> prompt{vocab.image_placeholder};
    std::string q = rec.question;
    if (mode == EvalMode::ForcedRegion) q += " " + region_instruction();
    if (mode == EvalMode::ForcedReEncode) q += " " + reencode_instruction();
    for (const TokenId t : wt.encode(q)) prompt.push_back(t);
    return prompt;
}

// Per-record script override for oracle tests; returning nullopt decodes
// normally.
using ScriptProvider = std::function<std::optional<std::vector<TokenId>>(const SourceRecord&)>;

struct RunEvalOptions {
    GenLimits limits{};
    RegionRepr repr = RegionRepr::Tokens;
    ScriptProvider script;                       // test seam
    std::string trace_path;                      // append JSONL traces when set
    int progress_every = 0;                      // stderr progress when > 0
};

// Greedy generation per record, exact-match scoring, region metrics from
// executed region events, invalid rate over completed region attempts.
template <typename S>
EvalReport run_eval(ToyMLLM<S>& m, const std::vector<SourceRecord>& records, EvalMode mode,
                    const RunEvalOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const WordTable& wt = default_word_table();

    struct Agg {
        int n = 0;
        int hits = 0;
        double iou_sum = 0, iogt_sum = 0;
        int iou_n = 0;
        int region_attempts = 0, region_invalid = 0;
        bool any_region_records = false;
    };
    std::map<std::string, Agg> by_task;
    int skipped = 0;

    for (size_t idx = 0; idx < records.size(); ++idx) {
        const auto& rec = records[idx];
        if (opt.progress_every > 0 && idx % opt.progress_every == 0)
            std::cerr << "[eval] " << idx << "/" << records.size() << "\r" << std::flush;
        // mode/record mismatches are counted and skipped
        if (mode == EvalMode::ForcedRegion && rec.task_type != TaskType::Region) {
            ++skipped;
            continue;
        }
        if (mode == EvalMode::ForcedReEncode && rec.task_type != TaskType::ReEncode) {
            ++skipped;
            continue;
        }

        const Image original = render(rec.scene);
        const auto prompt = make_prompt(m.vocab, wt, rec, mode);
        DecodePolicy policy = DecodePolicy::greedy();
        if (opt.script) {
            if (auto script = opt.script(rec)) policy = DecodePolicy::scripted(std::move(*script));
        }
        GenLimits limits = opt.limits;
        if (mode == EvalMode::Baseline) limits.max_region_events = limits.max_reencode_events = 0;
        const GenerationTrace trace = generate(m, original, prompt, limits, policy, opt.repr);
        if (!opt.trace_path.empty()) append_trace(opt.trace_path, trace);

        Agg& agg = by_task[rec.task_name];
        ++agg.n;
        const std::string answer = wt.decode(trace.answer_tokens(m.vocab));
        agg.hits += score_exact(answer, rec.answer);

        if (rec.task_type == TaskType::Region && mode != EvalMode::Baseline) {
            agg.any_region_records = true;
            for (const auto& e : trace.events) {
                if (e.kind == PerceptionEvent::Kind::RegionSelection) {
                    ++agg.region_attempts;
                    if (e.executed && rec.gt_box) {
                        agg.iou_sum += iou(e.pixel_box, *rec.gt_box);
                        agg.iogt_sum += iogt(e.pixel_box, *rec.gt_box);
                        ++agg.iou_n;
                    }
                } else if (e.kind == PerceptionEvent::Kind::Malformed) {
                    ++agg.region_attempts;
                    ++agg.region_invalid;
                }
            }
        }
    }
    if (opt.progress_every > 0) std::cerr << "\n";

    EvalReport report;
    report.mode = eval_mode_name(mode);
    report.config_fingerprint = m.cfg.to_json();
    if (skipped > 0)
        std::cerr << "[eval] skipped " << skipped << " records not matching mode "
                  << report.mode << "\n";
    for (const auto& [task, agg] : by_task) {
        TaskScore row;
        row.task = task;
        row.mode = report.mode;
        row.n = agg.n;
        row.score = agg.n ? static_cast<double>(agg.hits) / agg.n : 0.0;
        if (agg.any_region_records) {
            if (agg.iou_n) {
                row.mean_iou = agg.iou_sum / agg.iou_n;
                row.mean_iogt = agg.iogt_sum / agg.iou_n;
            }
            if (agg.region_attempts)
                row.invalid_rate = static_cast<double>(agg.region_invalid) / agg.region_attempts;
        }
        report.rows.push_back(std::move(row));
    }
    report.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& row : report.rows) row.runtime_s = report.runtime_s;
    return report;
}

// ---------------------------------------------------------------------------
// Training pipeline in one call, for the CLI and the sweeps.

struct PipelineConfig {
    ModelConfig model{};
    SampleMode mode = SampleMode::ForcedRegion;
    RegionRepr repr = RegionRepr::Tokens;
    double mask_modeling_ratio = 0.5;
    bool strict_control_only = false;
    bool run_align = true;
    bool run_tune_projector = false;
    PhaseConfig align{.name = "align", .epochs = 1, .learning_rate = 3e-3, .batch_size = 16,
                      .weight_decay = 0.0, .seed = 11};
    PhaseConfig finetune{.name = "finetune", .epochs = 3, .learning_rate = 1e-3, .batch_size = 16,
                         .weight_decay = 0.0, .seed = 12};
    int tune_projector_epochs = 1;
    int n_align_captions = 200;
    uint64_t data_seed = 1;  // caption/mask seeds derive from this
};

// Free-choice mixes region/re-encode/plain samples; forced modes use the
// matching record type alone; baseline strips every group.
inline std::vector<DialogueSample> build_training_samples(
    const std::vector<SourceRecord>& region_records,
    const std::vector<SourceRecord>& reencode_records, const PipelineConfig& cfg) {
    const Vocabulary vocab = extend_vocabulary(cfg.model.base_vocab, cfg.model.k);
    const WordTable& wt = default_word_table();
    const ImageRowDims dims = cfg.model.image_row_dims();
    std::vector<DialogueSample> out;

    const auto grid_for = [&](const SourceRecord& r) {
        return GridSpec(cfg.model.k, r.scene.canvas, r.scene.canvas);
    };

    switch (cfg.mode) {
        case SampleMode::ForcedRegion:
            for (const auto& r : region_records)
                out.push_back(build_region_sample(r, grid_for(r), vocab, wt,
                                                  SampleMode::ForcedRegion, dims, cfg.repr));
            break;
        case SampleMode::ForcedReEncode:
            for (const auto& r : reencode_records)
                out.push_back(build_reencode_sample(r, vocab, wt, SampleMode::ForcedReEncode, dims,
                                                    cfg.model.n_ctrl));
            break;
        case SampleMode::BaselineNoVpt:
            for (const auto& r : region_records) out.push_back(build_plain_sample(r, vocab, wt, dims));
            for (const auto& r : reencode_records)
                out.push_back(build_plain_sample(r, vocab, wt, dims));
            break;
        case SampleMode::FreeChoice: {
            // 40/40/20 region / re-encode / plain
            const size_t nr = region_records.size();
            const size_t ne = reencode_records.size();
            for (size_t i = 0; i < nr; ++i) {
                const auto& r = region_records[i];
                if (i % 5 == 4)
                    out.push_back(build_plain_sample(r, vocab, wt, dims, SampleMode::FreeChoice));
                else
                    out.push_back(build_region_sample(r, grid_for(r), vocab, wt,
                                                      SampleMode::FreeChoice, dims, cfg.repr));
            }
            for (size_t i = 0; i < ne; ++i) {
                const auto& r = reencode_records[i];
                if (i % 5 == 4)
                    out.push_back(build_plain_sample(r, vocab, wt, dims, SampleMode::FreeChoice));
                else
                    out.push_back(build_reencode_sample(r, vocab, wt, SampleMode::FreeChoice, dims,
                                                        cfg.model.n_ctrl));
            }
            break;
        }
    }
    mark_mask_modeling(out, cfg.mask_modeling_ratio, cfg.data_seed * 31 + 7);
    return out;
}

template <typename S>
struct PipelineResult {
    ToyMLLM<S> model;
    std::vector<StepLog> logs;
};

template <typename S>
PipelineResult<S> train_pipeline(const std::vector<SourceRecord>& region_records,
                                 const std::vector<SourceRecord>& reencode_records,
                                 const PipelineConfig& cfg) {
    PipelineResult<S> result{ToyMLLM<S>::init(cfg.model), {}};
    auto samples = build_training_samples(region_records, reencode_records, cfg);

    const bool uses_reencode = cfg.mode == SampleMode::ForcedReEncode ||
                               cfg.mode == SampleMode::FreeChoice;
    if (cfg.run_align && uses_reencode && cfg.model.reencoder == ReencoderKind::Separate) {
        const auto captions = gen_records(TaskKind::Caption, cfg.n_align_captions,
                                          cfg.data_seed * 97 + 3);
        auto logs = align_phase(result.model, captions, cfg.align);
        result.logs.insert(result.logs.end(), logs.begin(), logs.end());
    }
    auto logs = finetune_phase(result.model, samples, cfg.finetune, cfg.strict_control_only);
    result.logs.insert(result.logs.end(), logs.begin(), logs.end());
    if (cfg.run_tune_projector && uses_reencode) {
        auto tlogs = tune_projector_extra(result.model, samples, cfg.tune_projector_epochs,
                                          cfg.finetune.learning_rate, cfg.finetune.seed + 1,
                                          cfg.strict_control_only);
        result.logs.insert(result.logs.end(), tlogs.begin(), tlogs.end());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Ablation sweeps: identical seeds per variant, fresh training each cell.

enum class SweepAxis { K, ControlTokens, MaskModeling, Reencoder, RegionRepr };

inline std::string sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::K: return "k";
        case SweepAxis::ControlTokens: return "control_tokens";
        case SweepAxis::MaskModeling: return "mask_modeling";
        case SweepAxis::Reencoder: return "reencoder";
        case SweepAxis::RegionRepr: return "region_repr";
    }
    return "?";
}

inline SweepAxis sweep_axis_from_name(const std::string& s) {
    if (s == "k") return SweepAxis::K;
    if (s == "control_tokens") return SweepAxis::ControlTokens;
    if (s == "mask_modeling") return SweepAxis::MaskModeling;
    if (s == "reencoder") return SweepAxis::Reencoder;
    if (s == "region_repr") return SweepAxis::RegionRepr;
    throw std::invalid_argument("unknown sweep axis " + s);
}

struct SweepDataSpec {
    TaskKind task = TaskKind::LocateTinyGlyph;
    int n_train = 400;
    int n_eval = 100;
    uint64_t train_seed = 100;
    uint64_t eval_seed = 900;  // disjoint from train_seed ranges
};

template <typename S>
SweepTable sweep(SweepAxis axis, const PipelineConfig& base, const SweepDataSpec& data) {
    SweepTable table;
    table.axis = sweep_axis_name(axis);

    struct VariantDef {
        std::string label;
        PipelineConfig cfg;
        EvalMode mode;
    };
    std::vector<VariantDef> variants;
    const auto derive = [&](const std::string& label, auto&& tweak, EvalMode mode) {
        PipelineConfig cfg = base;
        tweak(cfg);
        variants.push_back({label, cfg, mode});
    };

    switch (axis) {
        case SweepAxis::K:
            for (const int k : {4, 8, 16, 32})
                derive("k=" + std::to_string(k), [k](PipelineConfig& c) { c.model.k = k; },
                       EvalMode::ForcedRegion);
            break;
        case SweepAxis::ControlTokens:
            for (const int n : {1, 2, 4})
                derive("ctrl=" + std::to_string(n), [n](PipelineConfig& c) { c.model.n_ctrl = n; },
                       EvalMode::ForcedReEncode);
            break;
        case SweepAxis::MaskModeling:
            derive("mask=on", [](PipelineConfig& c) { c.mask_modeling_ratio = 0.5; },
                   EvalMode::ForcedReEncode);
            derive("mask=off", [](PipelineConfig& c) { c.mask_modeling_ratio = 0.0; },
                   EvalMode::ForcedReEncode);
            break;
        case SweepAxis::Reencoder:
            derive("reencoder=separate",
                   [](PipelineConfig& c) { c.model.reencoder = ReencoderKind::Separate; },
                   EvalMode::ForcedReEncode);
            derive("reencoder=shared",
                   [](PipelineConfig& c) { c.model.reencoder = ReencoderKind::Shared; },
                   EvalMode::ForcedReEncode);
            break;
        case SweepAxis::RegionRepr:
            derive("repr=tokens", [](PipelineConfig& c) { c.repr = RegionRepr::Tokens; },
                   EvalMode::ForcedRegion);
            derive("repr=raw-bbox",
                   [](PipelineConfig& c) { c.repr = RegionRepr::RawBBoxText; },
                   EvalMode::ForcedRegion);
            break;
    }

    for (auto& v : variants) {
        const bool reenc = v.mode == EvalMode::ForcedReEncode;
        v.cfg.mode = reenc ? SampleMode::ForcedReEncode : SampleMode::ForcedRegion;
        const TaskKind task = reenc ? TaskKind::CountGlyphs : data.task;
        const auto train_records = gen_records(task, data.n_train, data.train_seed);
        const auto eval_records = gen_records(task, data.n_eval, data.eval_seed);
        std::cerr << "[sweep] training variant " << v.label << "\n";
        auto trained = reenc
                           ? train_pipeline<S>({}, train_records, v.cfg)
                           : train_pipeline<S>(train_records, {}, v.cfg);
        RunEvalOptions opt;
        opt.repr = v.cfg.repr;
        EvalReport rep = run_eval(trained.model, eval_records, v.mode, opt);
        table.rows.push_back(SweepRow{v.label, std::move(rep)});
    }
    return table;
}

}  // namespace vpt
