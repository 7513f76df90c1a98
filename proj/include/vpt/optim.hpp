#pragma once

#include <algorithm>
#include <numeric>

#include "vpt/tensor.hpp"

namespace vpt {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled weight decay: p -= lr*wd*p, then p -= lr * mhat / (sqrt(vhat)+eps).
// Frozen parameters are untouched, moments included.
template <typename S>
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParamSet<S>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        params.for_each([&](Param<S>& p) {
            if (!p.trainable) return;
            if (!p.has_grad())
                throw training_error("AdamW: missing gradient for trainable param " + p.name);
            auto& [m, v] = moments(p);
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad.template cast<double>();
            v = cfg_.beta2 * v.array() +
                (1.0 - cfg_.beta2) * p.grad.template cast<double>().array().square();
            const Mat<double> mhat = m / bc1;
            const Mat<double> vhat = v / bc2;
            Mat<double> update = mhat.array() / (vhat.array().sqrt() + cfg_.eps);
            update += cfg_.weight_decay * p.value.template cast<double>();
            p.value -= (cfg_.lr * update).template cast<S>();
        });
    }

    long steps() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

  private:
    std::pair<Mat<double>, Mat<double>>& moments(const Param<S>& p) {
        auto it = moments_.find(p.name);
        if (it == moments_.end()) {
            it = moments_
                     .emplace(p.name, std::make_pair(Mat<double>::Zero(p.value.rows(), p.value.cols()),
                                                     Mat<double>::Zero(p.value.rows(), p.value.cols())))
                     .first;
        }
        return it->second;
    }

    AdamWConfig cfg_;
    long t_ = 0;
    std::map<std::string, std::pair<Mat<double>, Mat<double>>> moments_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_row = 0;
    int worst_col = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares the reverse-mode gradient of f against central differences on a
// random subset of coordinates (up to coords_per_tensor from each trainable
// tensor). f builds the scalar loss on a fresh tape from the live params.
// Relative error: |a - n| / max(1, |a|, |n|).
template <typename S, typename BuildLoss>
GradCheckReport finite_diff_check(ParamSet<S>& params, BuildLoss&& f, double epsilon,
                                  int coords_per_tensor = 32, uint64_t seed = 17) {
    if (epsilon <= 0) throw std::invalid_argument("finite_diff_check: epsilon must be positive");

    params.zero_grad();
    {
        Tape<S> tape;
        Var<S> loss = f(tape);
        tape.backward(loss);
    }
    const auto eval = [&]() -> double {
        Tape<S> tape;
        return static_cast<double>(f(tape).value()(0, 0));
    };

    std::mt19937_64 rng(seed);
    GradCheckReport rep;
    params.for_each([&](Param<S>& p) {
        if (!p.trainable) return;
        const int total = static_cast<int>(p.value.size());
        std::vector<int> idx(total);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        const int m = std::min(coords_per_tensor, total);
        for (int c = 0; c < m; ++c) {
            const int i = idx[c] / static_cast<int>(p.value.cols());
            const int j = idx[c] % static_cast<int>(p.value.cols());
            const S orig = p.value(i, j);
            p.value(i, j) = orig + static_cast<S>(epsilon);
            const double f_plus = eval();
            p.value(i, j) = orig - static_cast<S>(epsilon);
            const double f_minus = eval();
            p.value(i, j) = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
            const double analytic = static_cast<double>(p.grad(i, j));
            const double rel = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
                rep.worst_row = i;
                rep.worst_col = j;
                rep.analytic = analytic;
                rep.numeric = numeric;
            }
        }
    });
    return rep;
}

}  // namespace vpt
