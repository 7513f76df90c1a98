#include "vpt/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <random>

#include "vpt/checkpoint.hpp"

namespace vpt {

std::vector<uint8_t> DialogueSample::loss_mask() const {
    std::vector<uint8_t> m(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) m[i] = rows[i].loss;
    return m;
}

std::vector<TokenId> DialogueSample::assistant_tokens() const {
    std::vector<TokenId> out;
    for (const auto& r : rows)
        if (r.kind == RowKind::Token &&
            (r.role == SegmentRole::AssistantVpt || r.role == SegmentRole::AssistantAnswer))
            out.push_back(r.token);
    return out;
}

bool DialogueSample::has_reencode_group() const { return n_ctrl > 0; }

std::string region_instruction() { return "please identify the region that helps answer the question"; }
std::string reencode_instruction() { return "please request extra perception features then answer the question"; }

namespace {

void push_token(std::vector<SampleRow>& rows, TokenId t, SegmentRole role, uint8_t loss) {
    rows.push_back(SampleRow{RowKind::Token, t, role, loss});
}

void push_feats(std::vector<SampleRow>& rows, RowKind kind, SegmentRole role, int count) {
    for (int i = 0; i < count; ++i) rows.push_back(SampleRow{kind, -1, role, 0});
}

void push_prompt(std::vector<SampleRow>& rows, const SourceRecord& rec, const Vocabulary& vocab,
                 const WordTable& wt, const std::string& instruction, int primary_rows) {
    push_token(rows, vocab.image_placeholder, SegmentRole::ImagePrimary, 0);
    push_feats(rows, RowKind::ImagePrimaryFeat, SegmentRole::ImagePrimary, primary_rows);
    std::string q = rec.question;
    if (!instruction.empty()) q += (q.empty() ? "" : " ") + instruction;
    for (const TokenId t : wt.encode(q)) push_token(rows, t, SegmentRole::Question, 0);
}

void push_second_image(std::vector<SampleRow>& rows, const Vocabulary& vocab, const WordTable& wt,
                       RowKind feat_kind, int feat_rows) {
    push_token(rows, wt.id("<sep>"), SegmentRole::ImageSecond, 0);
    push_token(rows, vocab.image_placeholder, SegmentRole::ImageSecond, 0);
    push_feats(rows, feat_kind, SegmentRole::ImageSecond, feat_rows);
}

void push_answer(std::vector<SampleRow>& rows, const SourceRecord& rec, const Vocabulary& vocab,
                 const WordTable& wt) {
    for (const TokenId t : wt.encode(rec.answer))
        push_token(rows, t, SegmentRole::AssistantAnswer, 1);
    push_token(rows, vocab.eos, SegmentRole::AssistantAnswer, 1);
}

}  // namespace

DialogueSample build_region_sample(const SourceRecord& rec, const GridSpec& grid,
                                   const Vocabulary& vocab, const WordTable& wt, SampleMode mode,
                                   const ImageRowDims& dims, RegionRepr repr) {
    if (!rec.gt_box) throw builder_error("build_region_sample: record has no ground-truth box");
    if (mode != SampleMode::ForcedRegion && mode != SampleMode::FreeChoice)
        throw builder_error("build_region_sample: mode must be forced-region or free-choice");

    DialogueSample s;
    s.mode = mode;
    s.repr = repr;
    s.record = rec;

    const std::string instr = mode == SampleMode::ForcedRegion ? region_instruction() : "";
    push_prompt(s.rows, rec, vocab, wt, instr, dims.primary);

    if (repr == RegionRepr::Tokens) {
        s.cells = bbox_to_cells(grid, *rec.gt_box);
        s.crop_box = cells_to_pixel_box(grid, *s.cells);
        for (const TokenId t : encode_region_tokens(vocab, *s.cells))
            push_token(s.rows, t, SegmentRole::AssistantVpt, 1);
    } else {
        s.crop_box = *rec.gt_box;
        for (const TokenId t : encode_bbox_text(wt, *rec.gt_box))
            push_token(s.rows, t, SegmentRole::AssistantVpt, 1);
    }
    push_second_image(s.rows, vocab, wt, RowKind::ImageCropFeat, dims.crop);
    push_answer(s.rows, rec, vocab, wt);
    return s;
}

DialogueSample build_reencode_sample(const SourceRecord& rec, const Vocabulary& vocab,
                                     const WordTable& wt, SampleMode mode,
                                     const ImageRowDims& dims, int n_ctrl) {
    if (n_ctrl < 1) throw builder_error("build_reencode_sample: need at least one control token");
    if (mode != SampleMode::ForcedReEncode && mode != SampleMode::FreeChoice)
        throw builder_error("build_reencode_sample: mode must be forced-reencode or free-choice");

    DialogueSample s;
    s.mode = mode;
    s.n_ctrl = n_ctrl;
    s.record = rec;

    const std::string instr = mode == SampleMode::ForcedReEncode ? reencode_instruction() : "";
    push_prompt(s.rows, rec, vocab, wt, instr, dims.primary);

    push_token(s.rows, vocab.reenc_start, SegmentRole::AssistantVpt, 1);
    for (int i = 0; i < n_ctrl; ++i)
        push_token(s.rows, vocab.reenc_control, SegmentRole::AssistantVpt, 0);
    push_token(s.rows, vocab.reenc_end, SegmentRole::AssistantVpt, 1);

    push_second_image(s.rows, vocab, wt, RowKind::ImageReEncFeat, dims.reenc);
    push_answer(s.rows, rec, vocab, wt);
    return s;
}

DialogueSample build_plain_sample(const SourceRecord& rec, const Vocabulary& vocab,
                                  const WordTable& wt, const ImageRowDims& dims, SampleMode mode) {
    DialogueSample s;
    s.mode = mode;
    s.record = rec;
    push_prompt(s.rows, rec, vocab, wt, "", dims.primary);
    push_answer(s.rows, rec, vocab, wt);
    return s;
}

void mark_mask_modeling(std::vector<DialogueSample>& samples, double ratio, uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0)
        throw std::invalid_argument("mark_mask_modeling: ratio outside [0, 1]");
    std::vector<size_t> reenc;
    for (size_t i = 0; i < samples.size(); ++i) {
        samples[i].mask_modeling = false;
        if (samples[i].has_reencode_group()) reenc.push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(reenc.begin(), reenc.end(), rng);
    const auto n_flag = static_cast<size_t>(std::lround(ratio * static_cast<double>(reenc.size())));
    for (size_t i = 0; i < n_flag && i < reenc.size(); ++i) samples[reenc[i]].mask_modeling = true;
}

MaskMat build_attention_mask(const DialogueSample& s, bool strict_control_only) {
    const int T = s.length();
    MaskMat mask(T, T);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) mask(i, j) = j <= i ? 1 : 0;
    if (!s.mask_modeling) return mask;

    for (int i = 0; i < T; ++i) {
        if (s.rows[i].role != SegmentRole::AssistantAnswer) continue;
        int allowed = 0;
        for (int j = 0; j <= i; ++j) {
            const auto& r = s.rows[j];
            bool keep;
            if (strict_control_only) {
                // control rows are the loss-free rows of the vpt group
                const bool is_control = r.role == SegmentRole::AssistantVpt && r.loss == 0;
                keep = is_control || r.role == SegmentRole::AssistantAnswer;
            } else {
                keep = r.role == SegmentRole::AssistantVpt || r.role == SegmentRole::ImageSecond ||
                       r.role == SegmentRole::AssistantAnswer;
            }
            mask(i, j) = keep ? 1 : 0;
            allowed += keep ? 1 : 0;
        }
        if (allowed == 0) throw builder_error("build_attention_mask: empty allowed set");
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Built-sample cache

namespace {

nlohmann::json sample_meta(const DialogueSample& s) {
    nlohmann::json j;
    j["mode"] = static_cast<int>(s.mode);
    j["repr"] = static_cast<int>(s.repr);
    j["mask_modeling"] = s.mask_modeling;
    j["n_ctrl"] = s.n_ctrl;
    j["record"] = nlohmann::json::parse(record_to_json(s.record));
    if (s.cells) j["cells"] = {s.cells->cx_min, s.cells->cy_min, s.cells->cx_max, s.cells->cy_max};
    if (s.crop_box)
        j["crop_box"] = {s.crop_box->x_min, s.crop_box->y_min, s.crop_box->x_max, s.crop_box->y_max};
    return j;
}

}  // namespace

void save_samples(const std::string& path, const std::vector<DialogueSample>& samples) {
    std::vector<ContainerEntry> entries;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string base = "sample" + std::to_string(i);
        Mat<double> rows(s.length(), 4);
        for (int r = 0; r < s.length(); ++r) {
            rows(r, 0) = static_cast<double>(s.rows[r].kind);
            rows(r, 1) = s.rows[r].token;
            rows(r, 2) = static_cast<double>(s.rows[r].role);
            rows(r, 3) = s.rows[r].loss;
        }
        entries.push_back(tensor_entry(base + "/rows", rows));
        ContainerEntry meta;
        meta.name = base + "/meta";
        meta.dtype = 2;
        const std::string text = sample_meta(s).dump();
        meta.raw.assign(text.begin(), text.end());
        entries.push_back(std::move(meta));
    }
    write_container(path, entries);
}

std::vector<DialogueSample> load_samples(const std::string& path) {
    const auto entries = read_container(path);
    std::map<std::string, const ContainerEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    std::vector<DialogueSample> out;
    for (size_t i = 0;; ++i) {
        const std::string base = "sample" + std::to_string(i);
        const auto rows_it = by_name.find(base + "/rows");
        if (rows_it == by_name.end()) break;
        const auto meta_it = by_name.find(base + "/meta");
        if (meta_it == by_name.end()) throw io_error("load_samples: missing meta for " + base);

        DialogueSample s;
        const auto j = nlohmann::json::parse(
            std::string(meta_it->second->raw.begin(), meta_it->second->raw.end()));
        s.mode = static_cast<SampleMode>(j.at("mode").get<int>());
        s.repr = static_cast<RegionRepr>(j.at("repr").get<int>());
        s.mask_modeling = j.at("mask_modeling").get<bool>();
        s.n_ctrl = j.at("n_ctrl").get<int>();
        s.record = record_from_json(j.at("record").dump());
        if (j.contains("cells")) {
            const auto c = j.at("cells");
            s.cells = CellBox{c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>(),
                              c.at(3).get<int>()};
        }
        if (j.contains("crop_box")) {
            const auto c = j.at("crop_box");
            s.crop_box = PixelBox{c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>(),
                                  c.at(3).get<int>()};
        }
        const Mat<double> rows = entry_tensor<double>(*rows_it->second);
        for (int r = 0; r < rows.rows(); ++r) {
            SampleRow row;
            row.kind = static_cast<RowKind>(static_cast<int>(rows(r, 0)));
            row.token = static_cast<TokenId>(rows(r, 1));
            row.role = static_cast<SegmentRole>(static_cast<int>(rows(r, 2)));
            row.loss = static_cast<uint8_t>(rows(r, 3));
            s.rows.push_back(row);
        }
        out.push_back(std::move(s));
    }
    if (out.size() * 2 != entries.size()) throw io_error("load_samples: stray entries");
    return out;
}

}  // namespace vpt
