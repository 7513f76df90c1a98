#pragma once

#include <Eigen/Core>

#include "vpt/scenes.hpp"
#include "vpt/vocab.hpp"

namespace vpt {

struct builder_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using MaskMat = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class SegmentRole : uint8_t {
    Question = 0,
    ImagePrimary = 1,
    AssistantVpt = 2,
    ImageSecond = 3,
    AssistantAnswer = 4,
};

enum class SampleMode : uint8_t {
    ForcedRegion = 0,
    ForcedReEncode = 1,
    FreeChoice = 2,
    BaselineNoVpt = 3,
};

enum class RegionRepr : uint8_t { Tokens = 0, RawBBoxText = 1 };

enum class RowKind : uint8_t {
    Token = 0,
    ImagePrimaryFeat = 1,
    ImageCropFeat = 2,
    ImageReEncFeat = 3,
};

// One embedding row of the teacher-forced sequence. Token rows carry the
// token id; feature rows are filled in by the model at forward time.
struct SampleRow {
    RowKind kind = RowKind::Token;
    TokenId token = -1;
    SegmentRole role = SegmentRole::Question;
    uint8_t loss = 0;  // 1 when this row's token is a supervision target
};

// Embedding-row counts contributed by each image pass; they come from the
// model's patch configuration.
struct ImageRowDims {
    int primary = 0;
    int crop = 0;
    int reenc = 0;
};

// Teacher-forcing layout:
//   [<image>] [primary feature rows] [question (+ forced instruction)]
//   [assistant vpt group] [<sep> <image>] [second-pass feature rows]
//   [answer tokens] [<eos>]
// The second-image turn appears only when the sample carries a vpt group.
struct DialogueSample {
    SampleMode mode = SampleMode::BaselineNoVpt;
    RegionRepr repr = RegionRepr::Tokens;
    bool mask_modeling = false;
    int n_ctrl = 0;  // control tokens in the re-encode group (0 = none)
    SourceRecord record;
    std::optional<CellBox> cells;     // region samples (token repr)
    std::optional<PixelBox> crop_box; // pixel box the second pass crops
    std::vector<SampleRow> rows;

    int length() const { return static_cast<int>(rows.size()); }
    std::vector<uint8_t> loss_mask() const;
    std::vector<TokenId> assistant_tokens() const;  // vpt group + answer + eos
    bool has_reencode_group() const;
};

DialogueSample build_region_sample(const SourceRecord& rec, const GridSpec& grid,
                                   const Vocabulary& vocab, const WordTable& wt, SampleMode mode,
                                   const ImageRowDims& dims,
                                   RegionRepr repr = RegionRepr::Tokens);

DialogueSample build_reencode_sample(const SourceRecord& rec, const Vocabulary& vocab,
                                     const WordTable& wt, SampleMode mode,
                                     const ImageRowDims& dims, int n_ctrl = 1);

DialogueSample build_plain_sample(const SourceRecord& rec, const Vocabulary& vocab,
                                  const WordTable& wt, const ImageRowDims& dims,
                                  SampleMode mode = SampleMode::BaselineNoVpt);

// Flags round(ratio * n) of the re-encode samples, chosen by seeded shuffle.
// Samples without a re-encode group are never flagged.
void mark_mask_modeling(std::vector<DialogueSample>& samples, double ratio, uint64_t seed);

// allowed(i, j) = 1 iff row i may attend to row j. Base: causal. Flagged
// samples restrict answer rows to the re-encode group, the second-image
// segment and earlier answer rows; with strict_control_only they see only
// the control token(s) and earlier answer rows.
MaskMat build_attention_mask(const DialogueSample& s, bool strict_control_only = false);

// Built-sample cache in the checkpoint container format.
void save_samples(const std::string& path, const std::vector<DialogueSample>& samples);
std::vector<DialogueSample> load_samples(const std::string& path);

// Forced-mode instruction suffixes appended to the question.
std::string region_instruction();
std::string reencode_instruction();

}  // namespace vpt
