#pragma once

// Dense network primitives: MLP heads with exact backprop, softmax
// cross-entropy, the gradient reversal layer, an adaptive-moment optimizer
// and a central-difference gradient checker. Header-only, templated on the
// scalar type; the rest of the library instantiates them with double.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sitebias/errors.hpp"

namespace sitebias::nn {

enum class Activation : std::uint8_t { identity = 0, relu = 1 };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// y = x W^T + b, with W shaped (out_dim x in_dim).
template <typename Scalar>
struct DenseLayer {
    Mat<Scalar> W;
    Vec<Scalar> b;

    Eigen::Index in_dim() const { return W.cols(); }
    Eigen::Index out_dim() const { return W.rows(); }
};

/// Chain of dense layers with `activation` between layers (never after the last).
template <typename Scalar>
struct MlpHead {
    std::vector<DenseLayer<Scalar>> layers;
    Activation activation = Activation::relu;

    Eigen::Index in_dim() const { return layers.front().in_dim(); }
    Eigen::Index out_dim() const { return layers.back().out_dim(); }

    std::vector<Eigen::Index> dims() const {
        std::vector<Eigen::Index> d{in_dim()};
        for (const auto& l : layers) d.push_back(l.out_dim());
        return d;
    }

    Eigen::Index num_params() const {
        Eigen::Index n = 0;
        for (const auto& l : layers) n += l.W.size() + l.b.size();
        return n;
    }
};

template <typename Scalar>
struct LayerGrad {
    Mat<Scalar> dW;
    Vec<Scalar> db;
};

template <typename Scalar>
struct MlpGrads {
    std::vector<LayerGrad<Scalar>> layers;

    static MlpGrads zeros_like(const MlpHead<Scalar>& head) {
        MlpGrads g;
        for (const auto& l : head.layers)
            g.layers.push_back({Mat<Scalar>::Zero(l.W.rows(), l.W.cols()), Vec<Scalar>::Zero(l.b.size())});
        return g;
    }

    MlpGrads& operator+=(const MlpGrads& o) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].dW += o.layers[i].dW;
            layers[i].db += o.layers[i].db;
        }
        return *this;
    }
};

/// Inputs and pre-activations of every layer for one mini-batch.
template <typename Scalar>
struct ForwardCache {
    std::vector<Mat<Scalar>> inputs;
    std::vector<Mat<Scalar>> pre;
};

template <typename Scalar = double>
MlpHead<Scalar> init_mlp(std::span<const Eigen::Index> dims, Activation activation, std::uint64_t seed) {
    if (dims.size() < 2) throw ArgumentError("init_mlp: need at least two layer sizes");
    for (auto d : dims)
        if (d <= 0) throw ArgumentError("init_mlp: layer sizes must be positive");

    std::mt19937_64 rng(seed);
    MlpHead<Scalar> head;
    head.activation = activation;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto fan_in = dims[l];
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-s, s);
        DenseLayer<Scalar> layer;
        layer.W.resize(dims[l + 1], fan_in);
        for (Eigen::Index c = 0; c < layer.W.cols(); ++c)
            for (Eigen::Index r = 0; r < layer.W.rows(); ++r) layer.W(r, c) = static_cast<Scalar>(u(rng));
        layer.b = Vec<Scalar>::Zero(dims[l + 1]);
        head.layers.push_back(std::move(layer));
    }
    return head;
}

template <typename Scalar = double>
MlpHead<Scalar> init_mlp(std::initializer_list<Eigen::Index> dims, Activation activation, std::uint64_t seed) {
    return init_mlp<Scalar>(std::span<const Eigen::Index>(dims.begin(), dims.size()), activation, seed);
}

template <typename Scalar>
std::pair<Mat<Scalar>, ForwardCache<Scalar>> forward(const MlpHead<Scalar>& head, const Mat<Scalar>& x) {
    if (head.layers.empty()) throw ArgumentError("forward: empty head");
    if (x.cols() != head.in_dim())
        throw ArgumentError("forward: input width " + std::to_string(x.cols()) + " != " +
                            std::to_string(head.in_dim()));
    ForwardCache<Scalar> cache;
    Mat<Scalar> a = x;
    const auto last = head.layers.size() - 1;
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        const auto& layer = head.layers[l];
        Mat<Scalar> z = a * layer.W.transpose();
        z.rowwise() += layer.b.transpose();
        cache.inputs.push_back(std::move(a));
        if (l != last && head.activation == Activation::relu)
            a = z.cwiseMax(Scalar(0));
        else
            a = z;
        cache.pre.push_back(std::move(z));
    }
    return {std::move(a), std::move(cache)};
}

/// Forward pass without keeping the cache.
template <typename Scalar>
Mat<Scalar> predict(const MlpHead<Scalar>& head, const Mat<Scalar>& x) {
    return forward(head, x).first;
}

/// Exact gradients of sum(dY .* Y) w.r.t. parameters and input. ReLU uses
/// subgradient 0 at a pre-activation of exactly 0.
template <typename Scalar>
std::pair<MlpGrads<Scalar>, Mat<Scalar>> backward(const MlpHead<Scalar>& head, const ForwardCache<Scalar>& cache,
                                                  const Mat<Scalar>& dy) {
    const auto n_layers = head.layers.size();
    if (cache.inputs.size() != n_layers || cache.pre.size() != n_layers)
        throw ArgumentError("backward: cache does not match head depth");
    for (std::size_t l = 0; l < n_layers; ++l)
        if (cache.inputs[l].cols() != head.layers[l].in_dim() || cache.pre[l].cols() != head.layers[l].out_dim() ||
            cache.inputs[l].rows() != dy.rows())
            throw ArgumentError("backward: stale or mismatched cache at layer " + std::to_string(l));
    if (dy.cols() != head.out_dim()) throw ArgumentError("backward: upstream gradient width mismatch");

    MlpGrads<Scalar> grads;
    grads.layers.resize(n_layers);
    Mat<Scalar> g = dy;
    for (std::size_t i = n_layers; i-- > 0;) {
        if (i != n_layers - 1 && head.activation == Activation::relu)
            g = (cache.pre[i].array() > Scalar(0)).select(g, Scalar(0));
        grads.layers[i].dW = g.transpose() * cache.inputs[i];
        grads.layers[i].db = g.colwise().sum().transpose();
        g = g * head.layers[i].W;
    }
    return {std::move(grads), std::move(g)};
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& logits) {
    Mat<Scalar> p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

template <typename Scalar>
struct SoftmaxCe {
    Scalar loss;
    Mat<Scalar> dlogits;
};

/// Mean cross-entropy of softmax(logits) against integer labels.
template <typename Scalar>
SoftmaxCe<Scalar> softmax_ce(const Mat<Scalar>& logits, std::span<const int> labels) {
    const auto n = logits.rows();
    const auto k = logits.cols();
    if (k < 2) throw ArgumentError("softmax_ce: need at least two classes");
    if (static_cast<Eigen::Index>(labels.size()) != n) throw ArgumentError("softmax_ce: label count mismatch");
    if (n == 0) throw ArgumentError("softmax_ce: empty batch");

    const Vec<Scalar> row_max = logits.rowwise().maxCoeff();
    Mat<Scalar> shifted = logits.colwise() - row_max;
    Mat<Scalar> e = shifted.array().exp();
    const Vec<Scalar> sums = e.rowwise().sum();

    Scalar total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw ArgumentError("softmax_ce: label " + std::to_string(y) + " out of range");
        total += std::log(sums[i]) - shifted(i, y);
    }
    Mat<Scalar> d = e.array().colwise() / sums.array();
    for (Eigen::Index i = 0; i < n; ++i) d(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
    d /= static_cast<Scalar>(n);
    return {total / static_cast<Scalar>(n), std::move(d)};
}

/// Gradient reversal: identity forward.
template <typename Derived>
auto grl_forward(const Eigen::MatrixBase<Derived>& z) {
    return typename Derived::PlainObject(z);
}

/// Gradient reversal: -lambda * dZ backward.
template <typename Derived>
auto grl_backward(const Eigen::MatrixBase<Derived>& dz, double lambda) {
    using Scalar = typename Derived::Scalar;
    if (!(lambda >= 0.0)) throw ArgumentError("grl_backward: lambda must be >= 0");
    return typename Derived::PlainObject(static_cast<Scalar>(-lambda) * dz);
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators for a fixed list of heads, laid out head by head.
template <typename Scalar>
struct AdamState {
    AdamConfig config;
    std::int64_t t = 0;
    std::vector<MlpGrads<Scalar>> m;
    std::vector<MlpGrads<Scalar>> v;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(std::span<const MlpHead<Scalar>* const> heads, AdamConfig config = {}) {
    AdamState<Scalar> s;
    s.config = config;
    for (const auto* h : heads) {
        s.m.push_back(MlpGrads<Scalar>::zeros_like(*h));
        s.v.push_back(MlpGrads<Scalar>::zeros_like(*h));
    }
    return s;
}

namespace detail {

template <typename Scalar, typename P, typename G>
void adam_update(P& param, const G& grad, P& m, P& v, const AdamConfig& c, Scalar bc1, Scalar bc2) {
    m = Scalar(c.beta1) * m + Scalar(1 - c.beta1) * grad;
    v = Scalar(c.beta2) * v + Scalar(1 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= Scalar(c.lr) * (m.array() / bc1) / ((v.array() / bc2).sqrt() + Scalar(c.eps));
}

}  // namespace detail

/// One bias-corrected adaptive-moment step over every head. Throws
/// NumericalError (leaving parameters untouched) on a non-finite gradient.
template <typename Scalar>
void adam_step(std::span<MlpHead<Scalar>* const> heads, std::span<const MlpGrads<Scalar>> grads,
               AdamState<Scalar>& state) {
    if (heads.size() != grads.size() || heads.size() != state.m.size())
        throw ArgumentError("adam_step: head/gradient/state count mismatch");
    for (std::size_t h = 0; h < heads.size(); ++h) {
        if (grads[h].layers.size() != heads[h]->layers.size())
            throw ArgumentError("adam_step: gradient depth mismatch");
        for (std::size_t l = 0; l < grads[h].layers.size(); ++l) {
            const auto& g = grads[h].layers[l];
            const auto& p = heads[h]->layers[l];
            if (g.dW.rows() != p.W.rows() || g.dW.cols() != p.W.cols() || g.db.size() != p.b.size())
                throw ArgumentError("adam_step: gradient shape mismatch");
            if (!g.dW.allFinite() || !g.db.allFinite()) throw NumericalError("adam_step: non-finite gradient");
        }
    }
    ++state.t;
    const auto& c = state.config;
    const Scalar bc1 = Scalar(1 - std::pow(c.beta1, static_cast<double>(state.t)));
    const Scalar bc2 = Scalar(1 - std::pow(c.beta2, static_cast<double>(state.t)));
    for (std::size_t h = 0; h < heads.size(); ++h) {
        for (std::size_t l = 0; l < grads[h].layers.size(); ++l) {
            auto& p = heads[h]->layers[l];
            const auto& g = grads[h].layers[l];
            detail::adam_update(p.W, g.dW, state.m[h].layers[l].dW, state.v[h].layers[l].dW, c, bc1, bc2);
            detail::adam_update(p.b, g.db, state.m[h].layers[l].db, state.v[h].layers[l].db, c, bc1, bc2);
        }
    }
}

/// Parameters (or gradients) of a head as one vector: per layer, W in
/// storage order then b.
template <typename Scalar>
Vec<Scalar> flatten(const MlpHead<Scalar>& head) {
    Vec<Scalar> out(head.num_params());
    Eigen::Index o = 0;
    for (const auto& l : head.layers) {
        out.segment(o, l.W.size()) = l.W.reshaped();
        o += l.W.size();
        out.segment(o, l.b.size()) = l.b;
        o += l.b.size();
    }
    return out;
}

template <typename Scalar>
Vec<Scalar> flatten(const MlpGrads<Scalar>& grads) {
    Eigen::Index n = 0;
    for (const auto& l : grads.layers) n += l.dW.size() + l.db.size();
    Vec<Scalar> out(n);
    Eigen::Index o = 0;
    for (const auto& l : grads.layers) {
        out.segment(o, l.dW.size()) = l.dW.reshaped();
        o += l.dW.size();
        out.segment(o, l.db.size()) = l.db;
        o += l.db.size();
    }
    return out;
}

template <typename Scalar>
void unflatten(const Vec<Scalar>& flat, MlpHead<Scalar>& head) {
    if (flat.size() != head.num_params()) throw ArgumentError("unflatten: size mismatch");
    Eigen::Index o = 0;
    for (auto& l : head.layers) {
        l.W.reshaped() = flat.segment(o, l.W.size());
        o += l.W.size();
        l.b = flat.segment(o, l.b.size());
        o += l.b.size();
    }
}

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    Eigen::Index worst_index = -1;
    Eigen::Index checked = 0;
    bool passed = true;
};

/// Compares the analytic gradient returned by `loss_and_grad` against
/// central differences in every coordinate. The relative error of a
/// coordinate is |a - n| / max(|a|, |n|, denom_floor).
inline GradCheckReport grad_check(
    const std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>& loss_and_grad,
    const Eigen::VectorXd& theta, double tolerance, double h = 1e-5, double denom_floor = 1e-6) {
    const Eigen::VectorXd analytic = loss_and_grad(theta).second;
    if (analytic.size() != theta.size()) throw ArgumentError("grad_check: gradient size mismatch");
    GradCheckReport r;
    Eigen::VectorXd probe = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double up = loss_and_grad(probe).first;
        probe[i] = theta[i] - h;
        const double down = loss_and_grad(probe).first;
        probe[i] = theta[i];
        const double numeric = (up - down) / (2 * h);
        const double abs_err = std::abs(analytic[i] - numeric);
        const double rel = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), denom_floor});
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
        if (rel > r.max_rel_error || r.worst_index < 0) {
            r.max_rel_error = rel;
            r.worst_index = i;
        }
        ++r.checked;
    }
    r.passed = r.max_rel_error <= tolerance;
    return r;
}

using Head = MlpHead<double>;
using Grads = MlpGrads<double>;
using Matrix = Mat<double>;

}  // namespace sitebias::nn
