#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <random>

#include "vpt/checkpoint.hpp"
#include "vpt/optim.hpp"
#include "vpt/tensor.hpp"

using namespace vpt;

namespace {

// Reduce any matrix var to a 1x1 scalar through constant row/col vectors.
template <typename S>
Var<S> sum_all(Tape<S>& tape, const Var<S>& x) {
    Var<S> left = tape.constant(Mat<S>::Ones(1, x.rows()));
    Var<S> right = tape.constant(Mat<S>::Ones(x.cols(), 1));
    return matmul(matmul(left, x), right);
}

template <typename S>
Param<S>& add_randn(ParamSet<S>& ps, const std::string& name, int r, int c, std::mt19937_64& rng) {
    return ps.add(name, randn<S>(r, c, rng, 0.5));
}

}  // namespace

TEST_CASE("softmax basics") {
    ParamSet<double> ps;
    ps.add("x", Mat<double>::Zero(1, 4));
    Tape<double> tape;
    Var<double> p = softmax_rows(tape.leaf(ps.at("x")));
    for (int j = 0; j < 4; ++j) CHECK(p.value()(0, j) == doctest::Approx(0.25));

    // random rows sum to one
    std::mt19937_64 rng(3);
    ps.add("y", randn<double>(5, 9, rng, 2.0));
    Var<double> q = softmax_rows(tape.leaf(ps.at("y")));
    for (int i = 0; i < 5; ++i) CHECK(q.value().row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));

    // masked entries get exactly zero probability
    Mat<double> mask = Mat<double>::Zero(5, 9);
    mask(0, 3) = mask_fill_value<double>();
    Var<double> r = softmax_with_additive_mask(tape.leaf(ps.at("y")), mask);
    CHECK(r.value()(0, 3) == 0.0);
    CHECK(r.value().row(0).sum() == doctest::Approx(1.0).epsilon(1e-6));

    // fully masked row is a caller bug
    Mat<double> all = Mat<double>::Constant(5, 9, mask_fill_value<double>());
    CHECK_THROWS_AS(softmax_with_additive_mask(tape.leaf(ps.at("y")), all), std::logic_error);
}

TEST_CASE("cross entropy masked") {
    ParamSet<double> ps;
    Mat<double> logits = Mat<double>::Zero(3, 4);
    logits(1, 2) = 50.0;  // confident correct prediction at the only scored row
    ps.add("l", logits);
    const std::vector<int> targets{0, 2, 1};

    Tape<double> tape;
    Var<double> lv = tape.leaf(ps.at("l"));
    const std::vector<uint8_t> mask{0, 1, 0};
    Var<double> loss = cross_entropy_masked(lv, targets, mask);
    CHECK(loss.value()(0, 0) == doctest::Approx(0.0).epsilon(1e-9));

    const std::vector<uint8_t> nothing{0, 0, 0};
    CHECK_THROWS_AS(cross_entropy_masked(lv, targets, nothing), training_error);

    // uniform logits: loss = log(V) at scored rows
    const std::vector<uint8_t> first{1, 0, 0};
    Var<double> l2 = cross_entropy_masked(lv, targets, first);
    CHECK(l2.value()(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // gradient at unscored rows is exactly zero
    tape.backward(l2);
    const Mat<double> g = tape.grad_of(lv);
    CHECK(g.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.row(2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.row(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("finite diff: quadratic") {
    ParamSet<double> ps;
    Mat<double> w(1, 1);
    w(0, 0) = 3.0;
    ps.add("w", w);
    const auto rep = finite_diff_check<double>(
        ps, [&](Tape<double>& t) { return matmul(t.leaf(ps.at("w")), t.leaf(ps.at("w"))); },
        1e-4);
    CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("finite diff: every op") {
    std::mt19937_64 rng(42);
    constexpr double eps = 1e-5;
    constexpr double tol = 1e-5;

    SUBCASE("matmul and matmul_nt") {
        ParamSet<double> ps;
        add_randn(ps, "a", 4, 6, rng);
        add_randn(ps, "b", 6, 5, rng);
        add_randn(ps, "c", 7, 6, rng);
        auto rep = finite_diff_check<double>(
            ps,
            [&](Tape<double>& t) {
                Var<double> ab = matmul(t.leaf(ps.at("a")), t.leaf(ps.at("b")));
                Var<double> ant = matmul_nt(t.leaf(ps.at("a")), t.leaf(ps.at("c")));
                return add(sum_all(t, gelu(ab)), sum_all(t, gelu(ant)));
            },
            eps, 64);
        CHECK(rep.max_rel_err <= tol);
    }

    SUBCASE("add, add_rowvec, scale") {
        ParamSet<double> ps;
        add_randn(ps, "a", 5, 7, rng);
        add_randn(ps, "b", 5, 7, rng);
        add_randn(ps, "r", 1, 7, rng);
        auto rep = finite_diff_check<double>(
            ps,
            [&](Tape<double>& t) {
                Var<double> s = add(t.leaf(ps.at("a")), t.leaf(ps.at("b")));
                s = add_rowvec(s, t.leaf(ps.at("r")));
                return sum_all(t, gelu(scale(s, 0.7)));
            },
            eps, 64);
        CHECK(rep.max_rel_err <= tol);
    }

    SUBCASE("layer_norm alone") {
        ParamSet<double> ps;
        add_randn(ps, "x", 6, 10, rng);
        add_randn(ps, "g", 1, 10, rng);
        add_randn(ps, "b", 1, 10, rng);
        auto rep = finite_diff_check<double>(
            ps,
            [&](Tape<double>& t) {
                return sum_all(t, gelu(layer_norm(t.leaf(ps.at("x")), t.leaf(ps.at("g")),
                                                  t.leaf(ps.at("b")))));
            },
            eps, 64);
        CHECK(rep.max_rel_err <= tol);
    }

    SUBCASE("softmax with mask") {
        ParamSet<double> ps;
        add_randn(ps, "x", 6, 6, rng);
        Mat<double> mask = Mat<double>::Zero(6, 6);
        for (int i = 0; i < 6; ++i)
            for (int j = i + 1; j < 6; ++j) mask(i, j) = mask_fill_value<double>();
        auto rep = finite_diff_check<double>(
            ps,
            [&](Tape<double>& t) {
                Var<double> p = softmax_with_additive_mask(t.leaf(ps.at("x")), mask);
                return sum_all(t, gelu(p));
            },
            eps, 36);
        CHECK(rep.max_rel_err <= tol);
    }

    SUBCASE("embedding lookup, slices, concats") {
        ParamSet<double> ps;
        add_randn(ps, "table", 9, 8, rng);
        const std::vector<int> ids{2, 7, 2, 0, 5};
        auto rep = finite_diff_check<double>(
            ps,
            [&](Tape<double>& t) {
                Var<double> e = embedding_lookup(t.leaf(ps.at("table")), ids);
                Var<double> top = slice_rows(e, 0, 3);
                Var<double> bottom = slice_rows(e, 3, 2);
                Var<double> left = slice_cols(e, 0, 4);
                Var<double> right = slice_cols(e, 4, 4);
                Var<double> joined = concat_rows({top, bottom});
                Var<double> wide = concat_cols({left, right});
                return add(sum_all(t, gelu(joined)), sum_all(t, gelu(wide)));
            },
            eps, 72);
        CHECK(rep.max_rel_err <= tol);
    }

    SUBCASE("cross entropy composite") {
        ParamSet<double> ps;
        add_randn(ps, "w", 5, 4, rng);
        const std::vector<int> targets{1, 3, 0, 2, 1};
        const std::vector<uint8_t> mask{1, 0, 1, 1, 0};
        auto rep = finite_diff_check<double>(
            ps,
            [&](Tape<double>& t) {
                Var<double> logits = scale(t.leaf(ps.at("w")), 1.3);
                return cross_entropy_masked(logits, targets, mask);
            },
            eps, 20);
        CHECK(rep.max_rel_err <= tol);
    }
}

TEST_CASE("reused leaf accumulates both paths") {
    ParamSet<double> ps;
    Mat<double> w(1, 1);
    w(0, 0) = 2.0;
    ps.add("w", w);
    Tape<double> tape;
    Var<double> a = tape.leaf(ps.at("w"));
    Var<double> b = tape.leaf(ps.at("w"));
    Var<double> prod = matmul(a, b);  // w^2, d/dw = 2w = 4
    ps.zero_grad();
    tape.backward(prod);
    CHECK(ps.at("w").grad(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("adamw") {
    SUBCASE("zero grad, zero decay: unchanged") {
        ParamSet<float> ps;
        ps.add("w", Mat<float>::Constant(2, 2, 1.5f));
        ps.zero_grad();
        AdamW<float> opt({.lr = 0.1, .weight_decay = 0.0});
        opt.step(ps);
        CHECK(ps.at("w").value == Mat<float>::Constant(2, 2, 1.5f));
    }

    SUBCASE("frozen param with nonzero grad: unchanged") {
        ParamSet<float> ps;
        auto& p = ps.add("w", Mat<float>::Constant(2, 2, 1.5f), /*trainable=*/false);
        p.zero_grad();
        p.grad.setConstant(3.0f);
        AdamW<float> opt({.lr = 0.1, .weight_decay = 0.01});
        opt.step(ps);
        CHECK(ps.at("w").value == Mat<float>::Constant(2, 2, 1.5f));
    }

    SUBCASE("missing grad for trainable param: error") {
        ParamSet<float> ps;
        ps.add("w", Mat<float>::Constant(2, 2, 1.5f));
        AdamW<float> opt({.lr = 0.1});
        CHECK_THROWS_AS(opt.step(ps), training_error);
    }

    SUBCASE("single scalar step matches the hand-computed update rule") {
        const double p0 = 0.5, g = 0.2, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
        // independent scalar route
        const double m = (1 - b1) * g;
        const double v = (1 - b2) * g * g;
        const double mhat = m / (1 - b1);
        const double vhat = v / (1 - b2);
        const double expected = p0 - lr * (mhat / (std::sqrt(vhat) + eps) + wd * p0);

        ParamSet<double> ps;
        ps.add("w", Mat<double>::Constant(1, 1, p0));
        ps.zero_grad();
        ps.at("w").grad(0, 0) = g;
        AdamW<double> opt({.lr = lr, .beta1 = b1, .beta2 = b2, .eps = eps, .weight_decay = wd});
        opt.step(ps);
        CHECK(ps.at("w").value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint container round trip is bitwise") {
    std::mt19937_64 rng(5);
    ParamSet<float> ps;
    add_randn(ps, "a.w", 7, 3, rng);
    add_randn(ps, "b.bias", 1, 9, rng);
    ps.at("a.w").value(0, 0) = -0.0f;
    ps.at("a.w").value(0, 1) = 1e-42f;  // denormal survives round trip

    const std::string path = "ckpt_test.vptc";
    save_checkpoint(path, ps, "{\"note\":42}");

    ParamSet<float> loaded;
    loaded.add("a.w", Mat<float>::Zero(7, 3));
    loaded.add("b.bias", Mat<float>::Zero(1, 9));
    const std::string cfg = load_checkpoint(path, loaded);
    CHECK(cfg == "{\"note\":42}");
    CHECK(std::memcmp(loaded.at("a.w").value.data(), ps.at("a.w").value.data(),
                      sizeof(float) * 21) == 0);
    CHECK(std::memcmp(loaded.at("b.bias").value.data(), ps.at("b.bias").value.data(),
                      sizeof(float) * 9) == 0);

    // dtype mismatch rejected
    ParamSet<double> wrong;
    wrong.add("a.w", Mat<double>::Zero(7, 3));
    wrong.add("b.bias", Mat<double>::Zero(1, 9));
    CHECK_THROWS_AS(load_checkpoint(path, wrong), io_error);

    // missing param in target set rejected
    ParamSet<float> partial;
    partial.add("a.w", Mat<float>::Zero(7, 3));
    CHECK_THROWS_AS(load_checkpoint(path, partial), io_error);

    std::remove(path.c_str());
}

TEST_CASE("randn determinism") {
    std::mt19937_64 a(1234), b(1234);
    CHECK(randn<float>(4, 4, a, 0.1) == randn<float>(4, 4, b, 0.1));
}
