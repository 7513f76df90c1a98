#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpt/grid_codec.hpp"

namespace vpt {

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct training_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Additive value standing in for "blocked" in attention masks.
template <typename S>
constexpr S mask_fill_value() {
    if constexpr (std::is_same_v<S, float>) return -1e9f;
    else return -1e30;
}

template <typename S>
Mat<S> randn(int rows, int cols, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat<S> m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(dist(rng));
    return m;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
struct Param {
    std::string name;
    Mat<S> value;
    Mat<S> grad;  // empty until zero_grad() or a backward pass touches it
    bool trainable = true;

    void zero_grad() { grad = Mat<S>::Zero(value.rows(), value.cols()); }
    bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
    void accumulate(const Mat<S>& g) {
        if (!has_grad()) zero_grad();
        grad += g;
    }
};

// Named parameters with deterministic iteration order.
template <typename S>
class ParamSet {
  public:
    Param<S>& add(const std::string& name, Mat<S> value, bool trainable = true) {
        auto [it, inserted] = params_.try_emplace(name);
        if (!inserted) throw std::invalid_argument("ParamSet: duplicate name " + name);
        it->second = std::make_unique<Param<S>>();
        it->second->name = name;
        it->second->value = std::move(value);
        it->second->trainable = trainable;
        return *it->second;
    }
    Param<S>& at(const std::string& name) {
        const auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("ParamSet: unknown name " + name);
        return *it->second;
    }
    const Param<S>& at(const std::string& name) const {
        return const_cast<ParamSet*>(this)->at(name);
    }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    template <typename F>
    void for_each(F&& f) {
        for (auto& [name, p] : params_) f(*p);
    }
    template <typename F>
    void for_each(F&& f) const {
        for (const auto& [name, p] : params_) f(*p);
    }

    void zero_grad() {
        for_each([](Param<S>& p) { p.zero_grad(); });
    }
    size_t size() const { return params_.size(); }
    size_t num_scalars() const {
        size_t n = 0;
        for_each([&](const Param<S>& p) { n += static_cast<size_t>(p.value.size()); });
        return n;
    }

  private:
    // unique_ptr keeps Param addresses stable; tape leaves hold raw pointers.
    std::map<std::string, std::unique_ptr<Param<S>>> params_;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape

template <typename S>
class Tape;

template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    const Mat<S>& value() const { return tape->value(id); }
    int rows() const { return static_cast<int>(value().rows()); }
    int cols() const { return static_cast<int>(value().cols()); }
};

template <typename S>
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<S> leaf(Param<S>& p) {
        const int id = push(p.value);
        nodes_[id].leaf = &p;
        return {this, id};
    }
    Var<S> constant(Mat<S> v) { return {this, push(std::move(v))}; }

    const Mat<S>& value(int id) const { return nodes_[id].value; }
    Mat<S>& grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.size() != n.value.size())
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }
    bool has_grad(int id) const { return nodes_[id].grad.size() == nodes_[id].value.size(); }
    // Gradient accumulated at a var by the last backward(); zeros if untouched.
    Mat<S> grad_of(const Var<S>& v) {
        return has_grad(v.id) ? nodes_[v.id].grad
                              : Mat<S>::Zero(nodes_[v.id].value.rows(), nodes_[v.id].value.cols());
    }

    Var<S> make(Mat<S> value, std::function<void(Tape&)> backward) {
        const int id = push(std::move(value));
        nodes_[id].backward = std::move(backward);
        return {this, id};
    }

    // Seeds the (1x1) root with 1 and sweeps the tape in reverse creation
    // order; leaf gradients are added into their Param::grad.
    void backward(const Var<S>& root) {
        if (root.tape != this) throw std::logic_error("Tape::backward: var from another tape");
        if (nodes_[root.id].value.size() != 1)
            throw shape_error("Tape::backward: root must be scalar");
        grad(root.id)(0, 0) = S(1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.grad.size() != n.value.size()) continue;  // nothing flowed here
            if (n.backward) n.backward(*this);
            if (n.leaf) n.leaf->accumulate(n.grad);
        }
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        std::function<void(Tape&)> backward;
        Param<S>* leaf = nullptr;
    };

    int push(Mat<S> v) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops. Free functions building tape nodes; gradients are exact.

namespace detail {
template <typename S>
Tape<S>* same_tape(const Var<S>& a, const Var<S>& b) {
    if (a.tape != b.tape) throw std::logic_error("op: vars from different tapes");
    return a.tape;
}
}  // namespace detail

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    Tape<S>* t = detail::same_tape(a, b);
    if (a.cols() != b.rows()) throw shape_error("matmul: inner dims differ");
    Mat<S> c = a.value() * b.value();
    const int ai = a.id, bi = b.id;
    const int ci_hint = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, bi, ci_hint](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci_hint);
        tp.grad(ai).noalias() += g * tp.value(bi).transpose();
        tp.grad(bi).noalias() += tp.value(ai).transpose() * g;
    });
}

// a * b^T
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
    Tape<S>* t = detail::same_tape(a, b);
    if (a.cols() != b.cols()) throw shape_error("matmul_nt: inner dims differ");
    Mat<S> c = a.value() * b.value().transpose();
    const int ai = a.id, bi = b.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, bi, ci](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        tp.grad(ai).noalias() += g * tp.value(bi);
        tp.grad(bi).noalias() += g.transpose() * tp.value(ai);
    });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    Tape<S>* t = detail::same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("add: shape mismatch");
    Mat<S> c = a.value() + b.value();
    const int ai = a.id, bi = b.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, bi, ci](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        tp.grad(ai) += g;
        tp.grad(bi) += g;
    });
}

// Broadcast a 1 x n row over every row of a.
template <typename S>
Var<S> add_rowvec(const Var<S>& a, const Var<S>& row) {
    Tape<S>* t = detail::same_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) throw shape_error("add_rowvec: bad row shape");
    Mat<S> c = a.value().rowwise() + row.value().row(0);
    const int ai = a.id, ri = row.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, ri, ci](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        tp.grad(ai) += g;
        tp.grad(ri).row(0) += g.colwise().sum();
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
    Tape<S>* t = a.tape;
    Mat<S> c = a.value() * s;
    const int ai = a.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, ci, s](Tape<S>& tp) { tp.grad(ai) += tp.grad(ci) * s; });
}

// tanh-form gelu
template <typename S>
Var<S> gelu(const Var<S>& a) {
    Tape<S>* t = a.tape;
    constexpr double k0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k1 = 0.044715;
    const Mat<S>& x = a.value();
    Mat<S> c(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) {
            const double v = static_cast<double>(x(i, j));
            c(i, j) = static_cast<S>(0.5 * v * (1.0 + std::tanh(k0 * (v + k1 * v * v * v))));
        }
    const int ai = a.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, ci](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        const Mat<S>& x = tp.value(ai);
        Mat<S>& da = tp.grad(ai);
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j) {
                const double v = static_cast<double>(x(i, j));
                const double u = k0 * (v + k1 * v * v * v);
                const double th = std::tanh(u);
                const double d =
                    0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k0 * (1.0 + 3.0 * k1 * v * v);
                da(i, j) += g(i, j) * static_cast<S>(d);
            }
    });
}

// Row-wise layer norm with affine output; gamma/beta are 1 x n.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta) {
    Tape<S>* t = detail::same_tape(x, gamma);
    detail::same_tape(x, beta);
    const int n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
        throw shape_error("layer_norm: gamma/beta must be 1 x cols(x)");
    constexpr double eps = 1e-5;
    const Mat<S>& xv = x.value();
    Mat<S> xhat(xv.rows(), n), c(xv.rows(), n);
    Mat<S> inv_std(xv.rows(), 1);
    for (int i = 0; i < xv.rows(); ++i) {
        const double mu = static_cast<double>(xv.row(i).template cast<double>().mean());
        double var = 0;
        for (int j = 0; j < n; ++j) {
            const double d = static_cast<double>(xv(i, j)) - mu;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(i, 0) = static_cast<S>(is);
        for (int j = 0; j < n; ++j)
            xhat(i, j) = static_cast<S>((static_cast<double>(xv(i, j)) - mu) * is);
    }
    for (int i = 0; i < xv.rows(); ++i)
        for (int j = 0; j < n; ++j)
            c(i, j) = xhat(i, j) * gamma.value()(0, j) + beta.value()(0, j);

    const int xi = x.id, gi = gamma.id, bi = beta.id;
    const int ci = static_cast<int>(t->size());
    auto xhat_s = std::make_shared<Mat<S>>(std::move(xhat));
    auto istd_s = std::make_shared<Mat<S>>(std::move(inv_std));
    return t->make(std::move(c), [xi, gi, bi, ci, xhat_s, istd_s, n](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        const Mat<S>& xh = *xhat_s;
        Mat<S>& dgamma = tp.grad(gi);
        Mat<S>& dbeta = tp.grad(bi);
        dgamma.row(0) += (g.array() * xh.array()).colwise().sum().matrix();
        dbeta.row(0) += g.colwise().sum();
        const auto& gamma_row = tp.value(gi).row(0);
        Mat<S>& dx = tp.grad(xi);
        for (int i = 0; i < g.rows(); ++i) {
            Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
                g.row(i).array() * gamma_row.array();
            const S m1 = dxhat.mean();
            const S m2 = (dxhat * xh.row(i).array()).mean();
            dx.row(i).array() +=
                (*istd_s)(i, 0) * (dxhat - m1 - xh.row(i).array() * m2);
        }
    });
}

// Gathers rows of a table parameter; gradient scatters back.
template <typename S>
Var<S> embedding_lookup(const Var<S>& table, std::span<const int> ids) {
    Tape<S>* t = table.tape;
    const int n = static_cast<int>(ids.size());
    Mat<S> c(n, table.cols());
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw out_of_range_error("embedding_lookup: id out of range");
        c.row(i) = table.value().row(ids[i]);
    }
    const int ti = table.id;
    const int ci = static_cast<int>(t->size());
    auto ids_copy = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    return t->make(std::move(c), [ti, ci, ids_copy](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        Mat<S>& dt = tp.grad(ti);
        for (size_t i = 0; i < ids_copy->size(); ++i) dt.row((*ids_copy)[i]) += g.row(i);
    });
}

// Row-wise softmax of (x + additive). The additive mask is a constant
// matrix of zeros and mask_fill_value(); masked positions get probability
// exactly 0 (vectorized exp clamps its argument and would leave subnormal
// residue otherwise). A row with every entry masked is a caller bug and
// trips a logic_error.
template <typename S>
Var<S> softmax_with_additive_mask(const Var<S>& x, const Mat<S>& additive) {
    Tape<S>* t = x.tape;
    if (additive.size() != 0 && (additive.rows() != x.rows() || additive.cols() != x.cols()))
        throw shape_error("softmax_with_additive_mask: mask shape mismatch");
    const S blocked_below = mask_fill_value<S>() / 2;
    Mat<S> z = x.value();
    if (additive.size() != 0) z += additive;
    Mat<S> p(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        S mx = std::numeric_limits<S>::lowest();
        for (int j = 0; j < z.cols(); ++j)
            if (!(additive.size() != 0 && additive(i, j) <= blocked_below))
                mx = std::max(mx, z(i, j));
        if (mx <= blocked_below)
            throw std::logic_error("softmax_with_additive_mask: fully masked row");
        S sum = S(0);
        for (int j = 0; j < z.cols(); ++j) {
            const bool blocked = additive.size() != 0 && additive(i, j) <= blocked_below;
            p(i, j) = blocked ? S(0) : std::exp(z(i, j) - mx);
            sum += p(i, j);
        }
        p.row(i) /= sum;
    }
    const int xi = x.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(p), [xi, ci](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        const Mat<S>& p = tp.value(ci);
        Mat<S>& dx = tp.grad(xi);
        for (int i = 0; i < g.rows(); ++i) {
            const S dot = g.row(i).dot(p.row(i));
            dx.row(i).array() += p.row(i).array() * (g.row(i).array() - dot);
        }
    });
}

template <typename S>
Var<S> softmax_rows(const Var<S>& x) {
    return softmax_with_additive_mask(x, Mat<S>());
}

template <typename S>
Var<S> concat_rows(std::span<const Var<S>> parts) {
    if (parts.empty()) throw shape_error("concat_rows: empty");
    Tape<S>* t = parts[0].tape;
    int rows = 0;
    const int cols = parts[0].cols();
    for (const auto& p : parts) {
        if (p.tape != t) throw std::logic_error("concat_rows: mixed tapes");
        if (p.cols() != cols) throw shape_error("concat_rows: column mismatch");
        rows += p.rows();
    }
    Mat<S> c(rows, cols);
    auto ids = std::make_shared<std::vector<std::pair<int, int>>>();  // (id, rows)
    int at = 0;
    for (const auto& p : parts) {
        c.middleRows(at, p.rows()) = p.value();
        ids->emplace_back(p.id, p.rows());
        at += p.rows();
    }
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ci, ids](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        int at = 0;
        for (const auto& [id, r] : *ids) {
            tp.grad(id) += g.middleRows(at, r);
            at += r;
        }
    });
}

template <typename S>
Var<S> concat_rows(std::initializer_list<Var<S>> parts) {
    std::vector<Var<S>> v(parts);
    return concat_rows(std::span<const Var<S>>(v));
}

template <typename S>
Var<S> concat_cols(std::span<const Var<S>> parts) {
    if (parts.empty()) throw shape_error("concat_cols: empty");
    Tape<S>* t = parts[0].tape;
    const int rows = parts[0].rows();
    int cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw shape_error("concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat<S> c(rows, cols);
    auto ids = std::make_shared<std::vector<std::pair<int, int>>>();
    int at = 0;
    for (const auto& p : parts) {
        c.middleCols(at, p.cols()) = p.value();
        ids->emplace_back(p.id, p.cols());
        at += p.cols();
    }
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ci, ids](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(ci);
        int at = 0;
        for (const auto& [id, ccols] : *ids) {
            tp.grad(id) += g.middleCols(at, ccols);
            at += ccols;
        }
    });
}

template <typename S>
Var<S> concat_cols(std::initializer_list<Var<S>> parts) {
    std::vector<Var<S>> v(parts);
    return concat_cols(std::span<const Var<S>>(v));
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, int start, int count) {
    Tape<S>* t = a.tape;
    if (start < 0 || count < 0 || start + count > a.rows())
        throw shape_error("slice_rows: range out of bounds");
    Mat<S> c = a.value().middleRows(start, count);
    const int ai = a.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, ci, start, count](Tape<S>& tp) {
        tp.grad(ai).middleRows(start, count) += tp.grad(ci);
    });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, int start, int count) {
    Tape<S>* t = a.tape;
    if (start < 0 || count < 0 || start + count > a.cols())
        throw shape_error("slice_cols: range out of bounds");
    Mat<S> c = a.value().middleCols(start, count);
    const int ai = a.id;
    const int ci = static_cast<int>(t->size());
    return t->make(std::move(c), [ai, ci, start, count](Tape<S>& tp) {
        tp.grad(ai).middleCols(start, count) += tp.grad(ci);
    });
}

// Mean cross entropy over positions with loss_mask = 1; logits row i is
// scored against targets[i]. No shift happens here; the caller aligns.
template <typename S>
Var<S> cross_entropy_masked(const Var<S>& logits, std::span<const int> targets,
                            std::span<const uint8_t> loss_mask) {
    Tape<S>* t = logits.tape;
    const int n = logits.rows();
    if (static_cast<int>(targets.size()) != n || static_cast<int>(loss_mask.size()) != n)
        throw shape_error("cross_entropy_masked: targets/mask length mismatch");
    int count = 0;
    for (const uint8_t m : loss_mask) count += m ? 1 : 0;
    if (count == 0) throw training_error("cross_entropy_masked: loss mask selects nothing");

    const Mat<S>& x = logits.value();
    double total = 0;
    for (int i = 0; i < n; ++i) {
        if (!loss_mask[i]) continue;
        if (targets[i] < 0 || targets[i] >= x.cols())
            throw out_of_range_error("cross_entropy_masked: target id out of range");
        const double mx = static_cast<double>(x.row(i).maxCoeff());
        double sum = 0;
        for (int j = 0; j < x.cols(); ++j) sum += std::exp(static_cast<double>(x(i, j)) - mx);
        total += mx + std::log(sum) - static_cast<double>(x(i, targets[i]));
    }
    Mat<S> c(1, 1);
    c(0, 0) = static_cast<S>(total / count);

    const int li = logits.id;
    const int ci = static_cast<int>(t->size());
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    auto mk = std::make_shared<std::vector<uint8_t>>(loss_mask.begin(), loss_mask.end());
    return t->make(std::move(c), [li, ci, tg, mk, count](Tape<S>& tp) {
        const S g = tp.grad(ci)(0, 0);
        const Mat<S>& x = tp.value(li);
        Mat<S>& dl = tp.grad(li);
        const S w = g / static_cast<S>(count);
        for (int i = 0; i < x.rows(); ++i) {
            if (!(*mk)[i]) continue;
            const S mx = x.row(i).maxCoeff();
            Eigen::Array<S, 1, Eigen::Dynamic> p = (x.row(i).array() - mx).exp();
            p /= p.sum();
            dl.row(i).array() += p * w;
            dl(i, (*tg)[i]) -= w;
        }
    });
}

}  // namespace vpt
