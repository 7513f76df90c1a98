#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_support.hpp"
#include "vpt/eval_harness.hpp"

using namespace vpt;
using vpt::testing::tiny_config;

namespace {

struct Fixture {
    ModelConfig cfg = tiny_config();
    const WordTable& wt = default_word_table();
    std::vector<SourceRecord> count_recs = gen_records(TaskKind::CountGlyphs, 8, 61);
    std::vector<SourceRecord> locate_recs = gen_records(TaskKind::LocateTinyGlyph, 8, 62);

    ToyMLLM<float> model() const { return ToyMLLM<float>::init(cfg); }

    std::vector<DialogueSample> reencode_samples(int n, bool flag_all = false) const {
        const ImageRowDims dims = cfg.image_row_dims();
        const Vocabulary vocab = extend_vocabulary(cfg.base_vocab, cfg.k);
        std::vector<DialogueSample> out;
        for (int i = 0; i < n; ++i) {
            out.push_back(build_reencode_sample(count_recs[i % count_recs.size()], vocab, wt,
                                                SampleMode::ForcedReEncode, dims));
            out.back().mask_modeling = flag_all;
        }
        return out;
    }

    std::vector<DialogueSample> region_samples(int n) const {
        const ImageRowDims dims = cfg.image_row_dims();
        const Vocabulary vocab = extend_vocabulary(cfg.base_vocab, cfg.k);
        std::vector<DialogueSample> out;
        for (int i = 0; i < n; ++i) {
            const auto& r = locate_recs[i % locate_recs.size()];
            out.push_back(build_region_sample(r, GridSpec(cfg.k, r.scene.canvas, r.scene.canvas),
                                              vocab, wt, SampleMode::ForcedRegion, dims));
        }
        return out;
    }
};

bool changed(const std::map<std::string, uint64_t>& before,
             const std::map<std::string, uint64_t>& after, const std::string& prefix) {
    for (const auto& [name, h] : before)
        if (name.rfind(prefix, 0) == 0 && after.at(name) != h) return true;
    return false;
}

}  // namespace

TEST_CASE("finetune freezes the vision encoders and trains the rest") {
    Fixture f;
    auto m = f.model();
    const auto before = param_fingerprints(m.params);
    PhaseConfig cfg{.name = "finetune", .epochs = 1, .learning_rate = 1e-3, .batch_size = 4,
                    .weight_decay = 0.0, .seed = 2};
    const auto logs = finetune_phase(m, f.reencode_samples(8), cfg);
    CHECK_FALSE(logs.empty());
    const auto after = param_fingerprints(m.params);
    CHECK_FALSE(changed(before, after, "f_v."));
    CHECK_FALSE(changed(before, after, "f_d."));
    CHECK(changed(before, after, "lm."));
    CHECK(changed(before, after, "g_v."));
    CHECK(changed(before, after, "g_d."));
    CHECK(changed(before, after, "embed."));
}

TEST_CASE("align trains only g_D and its loss decreases") {
    Fixture f;
    auto m = f.model();
    const auto before = param_fingerprints(m.params);
    const auto captions = gen_records(TaskKind::Caption, 50, 17);
    PhaseConfig cfg{.name = "align", .epochs = 2, .learning_rate = 3e-3, .batch_size = 10,
                    .weight_decay = 0.0, .seed = 3};
    const auto logs = align_phase(m, captions, cfg);
    REQUIRE(logs.size() >= 6);
    const auto after = param_fingerprints(m.params);
    CHECK(changed(before, after, "g_d."));
    CHECK_FALSE(changed(before, after, "lm."));
    CHECK_FALSE(changed(before, after, "f_v."));
    CHECK_FALSE(changed(before, after, "f_d."));
    CHECK_FALSE(changed(before, after, "g_v."));
    CHECK_FALSE(changed(before, after, "embed."));

    const double head = (logs[0].loss + logs[1].loss + logs[2].loss) / 3.0;
    const auto n = logs.size();
    const double tail = (logs[n - 1].loss + logs[n - 2].loss + logs[n - 3].loss) / 3.0;
    CHECK(tail < head);

    // shared reencoder: warned no-op
    ModelConfig shared_cfg = f.cfg;
    shared_cfg.reencoder = ReencoderKind::Shared;
    auto ms = ToyMLLM<float>::init(shared_cfg);
    const auto b2 = param_fingerprints(ms.params);
    CHECK(align_phase(ms, captions, cfg).empty());
    CHECK(param_fingerprints(ms.params) == b2);
}

TEST_CASE("tune_projector_extra moves only the control key/value projection") {
    Fixture f;
    auto m = f.model();
    const auto before = param_fingerprints(m.params);
    const auto logs = tune_projector_extra(m, f.reencode_samples(6), 1, 1e-3, 5);
    CHECK_FALSE(logs.empty());
    const auto after = param_fingerprints(m.params);
    for (const auto& [name, h] : before) {
        const bool target = name.rfind("g_d.wk", 0) == 0 || name.rfind("g_d.bk", 0) == 0 ||
                            name.rfind("g_d.wv", 0) == 0 || name.rfind("g_d.bv", 0) == 0;
        if (target) CHECK(after.at(name) != h);
        else REQUIRE(after.at(name) == h);
    }
}

TEST_CASE("lr zero step leaves parameters unchanged") {
    Fixture f;
    auto m = f.model();
    const auto samples = f.reencode_samples(2);
    ImageCache cache;
    std::vector<const DialogueSample*> batch{&samples[0], &samples[1]};
    std::vector<const Image*> images{&cache.get(samples[0].record), &cache.get(samples[1].record)};
    const auto before = param_fingerprints(m.params);
    AdamW<float> opt({.lr = 0.0});
    const double loss = train_step(m, opt, batch, images, false, "t");
    CHECK(std::isfinite(loss));
    CHECK(param_fingerprints(m.params) == before);
}

TEST_CASE("batch mean weights duplicated samples consistently") {
    Fixture f;
    auto m = f.model();
    const auto samples = f.reencode_samples(2);
    ImageCache cache;
    const Image& img0 = cache.get(samples[0].record);
    const Image& img1 = cache.get(samples[1].record);

    const auto grads_of = [&](std::vector<const DialogueSample*> batch,
                              std::vector<const Image*> imgs) {
        AdamW<float> opt({.lr = 0.0});
        train_step(m, opt, batch, imgs, false, "b");
        std::map<std::string, Mat<float>> out;
        m.params.for_each([&](const Param<float>& p) { out[p.name] = p.grad; });
        return out;
    };

    const auto g_ab = grads_of({&samples[0], &samples[1]}, {&img0, &img1});
    const auto g_aabb = grads_of({&samples[0], &samples[0], &samples[1], &samples[1]},
                                 {&img0, &img0, &img1, &img1});
    for (const auto& [name, g] : g_ab) {
        const auto& g2 = g_aabb.at(name);
        REQUIRE((g - g2).cwiseAbs().maxCoeff() <= 1e-6f);
    }

    // single-sample loss equals the directly assembled forward
    Tape<float> tape;
    const float direct = sample_loss(m, tape, samples[0], img0).loss.value()(0, 0);
    AdamW<float> opt({.lr = 0.0});
    const double batch_loss = train_step(m, opt, std::vector<const DialogueSample*>{&samples[0]},
                                         std::vector<const Image*>{&img0}, false, "one");
    CHECK(batch_loss == doctest::Approx(direct).epsilon(1e-6));
}

TEST_CASE("no loss gradient at the control prediction, by analytic grad and FD") {
    Fixture f;
    auto m = ToyMLLM<double>::init(f.cfg);
    const auto samples = f.reencode_samples(1);
    const DialogueSample& s = samples[0];
    const Image img = render(s.record.scene);
    const int T = s.length();

    // probe parameter added onto the logits
    ParamSet<double> aux;
    aux.add("probe", Mat<double>::Zero(T, m.vocab.total_size));

    int ctrl_row = -1;
    for (int i = 0; i < T; ++i)
        if (s.rows[i].kind == RowKind::Token && s.rows[i].role == SegmentRole::AssistantVpt &&
            s.rows[i].loss == 0)
            ctrl_row = i;
    REQUIRE(ctrl_row > 0);
    int answer_row = -1;
    for (int i = 0; i < T; ++i)
        if (s.rows[i].role == SegmentRole::AssistantAnswer) {
            answer_row = i;
            break;
        }

    const auto build = [&](Tape<double>& t) {
        Var<double> probe = t.leaf(aux.at("probe"));
        return sample_loss(m, t, s, img, false, &probe).loss;
    };

    aux.zero_grad();
    {
        Tape<double> tape;
        Var<double> loss = build(tape);
        tape.backward(loss);
    }
    const Mat<double>& g = aux.at("probe").grad;
    // row ctrl_row-1 predicts the control token: zero gradient there
    CHECK(g.row(ctrl_row - 1).cwiseAbs().maxCoeff() == 0.0);
    // the row predicting the first answer token carries gradient
    CHECK(g.row(answer_row - 1).cwiseAbs().maxCoeff() > 0.0);

    // finite differences at the control position agree: perturbing those
    // logits does not change the loss at all
    const auto eval = [&]() {
        Tape<double> t;
        return build(t).value()(0, 0);
    };
    const double base = eval();
    for (const int col : {0, 3, static_cast<int>(m.vocab.reenc_control)}) {
        aux.at("probe").value(ctrl_row - 1, col) = 1e-3;
        CHECK(eval() == base);
        aux.at("probe").value(ctrl_row - 1, col) = -1e-3;
        CHECK(eval() == base);
        aux.at("probe").value(ctrl_row - 1, col) = 0.0;
    }
    // sanity: the probe does affect the loss at a scored position
    aux.at("probe").value(answer_row - 1, 0) = 1e-3;
    CHECK(eval() != base);
    aux.at("probe").value(answer_row - 1, 0) = 0.0;
}

TEST_CASE("flagged samples: question rows cannot reach answer logits in the full pass") {
    Fixture f;
    auto m = f.model();
    auto samples = f.reencode_samples(1, /*flag_all=*/true);
    DialogueSample& s = samples[0];
    const Image img = render(s.record.scene);

    Mat<float> rows = vpt::testing::assemble_sample_rows(m, s, img);
    const Mat<float> additive = mask_to_additive<float>(build_attention_mask(s));

    Tape<float> t1;
    auto out1 = m.llm_forward(t1, t1.constant(rows), additive);

    Mat<float> perturbed = rows;
    int question_row = -1;
    for (int i = 0; i < s.length(); ++i) {
        if (s.rows[i].role == SegmentRole::Question) {
            perturbed.row(i).setConstant(9.0f);
            question_row = i;
        }
        if (s.rows[i].role == SegmentRole::ImagePrimary) perturbed.row(i).setConstant(-7.0f);
    }
    REQUIRE(question_row >= 0);
    Tape<float> t2;
    auto out2 = m.llm_forward(t2, t2.constant(perturbed), additive);

    for (int i = 0; i < s.length(); ++i) {
        if (s.rows[i].role == SegmentRole::AssistantAnswer) {
            REQUIRE(out1.logits.value().row(i) == out2.logits.value().row(i));
        }
    }
    CHECK(out1.logits.value().row(question_row) != out2.logits.value().row(question_row));

    // unflagged: the same perturbation reaches the answer rows
    s.mask_modeling = false;
    const Mat<float> causal = mask_to_additive<float>(build_attention_mask(s));
    Tape<float> t3, t4;
    auto out3 = m.llm_forward(t3, t3.constant(rows), causal);
    auto out4 = m.llm_forward(t4, t4.constant(perturbed), causal);
    bool any_changed = false;
    for (int i = 0; i < s.length(); ++i)
        if (s.rows[i].role == SegmentRole::AssistantAnswer)
            any_changed |= out3.logits.value().row(i) != out4.logits.value().row(i);
    CHECK(any_changed);
}

TEST_CASE("flagged pipeline: question changes reach the answer only through h_DC") {
    Fixture f;
    auto m = f.model();
    auto samples = f.reencode_samples(1, /*flag_all=*/true);
    DialogueSample& s = samples[0];
    const Image img = render(s.record.scene);

    // full pipeline: changing a question token changes the loss (the control
    // path sees the question)
    Tape<float> t1;
    const float loss_a = sample_loss(m, t1, s, img).loss.value()(0, 0);
    DialogueSample s2 = s;
    for (auto& r : s2.rows)
        if (r.role == SegmentRole::Question) {
            r.token = (r.token + 1) % m.vocab.base_size;
            break;
        }
    Tape<float> t2;
    const float loss_b = sample_loss(m, t2, s2, img).loss.value()(0, 0);
    CHECK(loss_a != loss_b);

    // with the second-pass rows held fixed, the same change is invisible to
    // the answer rows (mask-permitted paths only)
    Mat<float> rows_a = vpt::testing::assemble_sample_rows(m, s, img);
    Mat<float> rows_b = rows_a;
    for (int i = 0; i < s.length(); ++i)
        if (s.rows[i].role == SegmentRole::Question) {
            rows_b.row(i) = vpt::testing::assemble_sample_rows(m, s2, img).row(i);
            break;
        }
    const Mat<float> additive = mask_to_additive<float>(build_attention_mask(s));
    Tape<float> t3, t4;
    auto out_a = m.llm_forward(t3, t3.constant(rows_a), additive);
    auto out_b = m.llm_forward(t4, t4.constant(rows_b), additive);
    for (int i = 0; i < s.length(); ++i)
        if (s.rows[i].role == SegmentRole::AssistantAnswer)
            REQUIRE(out_a.logits.value().row(i) == out_b.logits.value().row(i));
}

TEST_CASE("unflagged samples train exactly like plain causal attention") {
    Fixture f;
    auto m = f.model();
    auto samples = f.reencode_samples(1);
    const DialogueSample& s = samples[0];
    const Image img = render(s.record.scene);

    // mask_modeling off: build_attention_mask returns pure causal, and
    // sample_loss passes an empty mask; both routes give identical loss
    Tape<float> t1;
    const float implicit = sample_loss(m, t1, s, img).loss.value()(0, 0);

    Mat<float> rows = vpt::testing::assemble_sample_rows(m, s, img);
    const Mat<float> additive = mask_to_additive<float>(build_attention_mask(s));
    Tape<float> t2;
    auto lm = m.llm_forward(t2, t2.constant(rows), additive);
    std::vector<int> targets(s.length() - 1, 0);
    std::vector<uint8_t> mask(s.length() - 1, 0);
    for (int i = 0; i + 1 < s.length(); ++i)
        if (s.rows[i + 1].kind == RowKind::Token && s.rows[i + 1].loss) {
            targets[i] = s.rows[i + 1].token;
            mask[i] = 1;
        }
    const float explicit_causal =
        cross_entropy_masked(slice_rows(lm.logits, 0, s.length() - 1), targets, mask)
            .value()(0, 0);
    CHECK(implicit == explicit_causal);
}

TEST_CASE("fixed seeds reproduce the training run exactly") {
    Fixture f;
    const auto samples = f.reencode_samples(6);
    PhaseConfig cfg{.name = "finetune", .epochs = 1, .learning_rate = 1e-3, .batch_size = 3,
                    .weight_decay = 0.01, .seed = 9};
    auto m1 = f.model();
    auto m2 = f.model();
    const auto l1 = finetune_phase(m1, samples, cfg);
    const auto l2 = finetune_phase(m2, samples, cfg);
    REQUIRE(l1.size() == l2.size());
    for (size_t i = 0; i < l1.size(); ++i) REQUIRE(l1[i].loss == l2[i].loss);
    CHECK(param_fingerprints(m1.params) == param_fingerprints(m2.params));
}

TEST_CASE("empty loss mask is a training error") {
    Fixture f;
    auto m = f.model();
    auto samples = f.reencode_samples(1);
    DialogueSample s = samples[0];
    for (auto& r : s.rows) r.loss = 0;
    const Image img = render(s.record.scene);
    Tape<float> tape;
    CHECK_THROWS_AS(sample_loss(m, tape, s, img), training_error);
}
