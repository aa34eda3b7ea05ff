// SPDX-License-Identifier: Apache-2.0
#include "mark/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

namespace mark {

namespace {

/// Builds an op output: rounds the wide result into 32-bit storage, keeps
/// the wide mirror for downstream precision, and records graph edges when
/// grad mode is on and any input requires grad.
Tensor op_output(const char* op, Shape shape, std::vector<double> wide,
                 std::initializer_list<const Tensor*> inputs,
                 std::function<void(const TensorNode&)> backprop) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    const size_t n = shape_numel(node->shape);
    node->data.resize(n);
    for (size_t i = 0; i < n; ++i) {
        node->data[i] = static_cast<float>(wide[i]);
        // Overflow of the 32-bit storage is just as fatal as a wide NaN.
        if (!std::isfinite(wide[i]) || !std::isfinite(node->data[i]))
            throw numeric_error(std::string(op) + " produced a non-finite value");
    }
    node->data64 = std::move(wide);
    if (grad_enabled()) {
        bool any_grad = false;
        for (const Tensor* t : inputs) any_grad = any_grad || t->requires_grad();
        if (any_grad) {
            node->requires_grad = true;
            for (const Tensor* t : inputs)
                if (t->requires_grad()) node->parents.push_back(t->node());
            node->backprop = std::move(backprop);
        }
    }
    return Tensor(std::move(node));
}

/// A parent participates in the sweep iff backward() allocated its wide
/// gradient accumulator.
bool wants_grad(const TensorNode& n) { return !n.grad64.empty(); }

void require_rank(const Tensor& t, size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank)
        throw shape_error(std::string(op) + ": " + arg + " must have rank " +
                          std::to_string(rank) + ", got shape " + shape_str(t.shape()));
}

} // namespace

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require_rank(input, 2, "dense_forward", "input");
    require_rank(weights, 2, "dense_forward", "weights");
    require_rank(bias, 1, "dense_forward", "bias");
    const size_t N = input.dim(0), I = input.dim(1), O = weights.dim(1);
    if (weights.dim(0) != I || bias.dim(0) != O)
        throw shape_error("dense_forward: input " + shape_str(input.shape()) +
                          " incompatible with weights " + shape_str(weights.shape()) +
                          " / bias " + shape_str(bias.shape()));

    const TensorNode& in = *input.node();
    const TensorNode& w = *weights.node();
    const TensorNode& b = *bias.node();
    std::vector<double> out(N * O);
    for (size_t n = 0; n < N; ++n)
        for (size_t o = 0; o < O; ++o) {
            double s = b.wide(o);
            for (size_t i = 0; i < I; ++i)
                s += in.wide(n * I + i) * w.wide(i * O + o);
            out[n * O + o] = s;
        }

    return op_output(
        "dense_forward", {N, O}, std::move(out), {&input, &weights, &bias},
        [input, weights, bias, N, I, O](const TensorNode& self) {
            TensorNode& in = *input.node();
            TensorNode& w = *weights.node();
            TensorNode& b = *bias.node();
            const std::vector<double>& g = self.grad64;
            if (wants_grad(in))
                for (size_t n = 0; n < N; ++n)
                    for (size_t i = 0; i < I; ++i) {
                        double s = 0.0;
                        for (size_t o = 0; o < O; ++o)
                            s += g[n * O + o] * w.wide(i * O + o);
                        in.grad64[n * I + i] += s;
                    }
            if (wants_grad(w))
                for (size_t i = 0; i < I; ++i)
                    for (size_t o = 0; o < O; ++o) {
                        double s = 0.0;
                        for (size_t n = 0; n < N; ++n)
                            s += in.wide(n * I + i) * g[n * O + o];
                        w.grad64[i * O + o] += s;
                    }
            if (wants_grad(b))
                for (size_t o = 0; o < O; ++o) {
                    double s = 0.0;
                    for (size_t n = 0; n < N; ++n) s += g[n * O + o];
                    b.grad64[o] += s;
                }
        });
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      int stride, int padding) {
    require_rank(input, 4, "conv2d_forward", "input");
    require_rank(kernels, 4, "conv2d_forward", "kernels");
    require_rank(bias, 1, "conv2d_forward", "bias");
    if (stride < 1)
        throw value_error("conv2d_forward: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0)
        throw value_error("conv2d_forward: padding must be >= 0, got " + std::to_string(padding));
    const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const size_t F = kernels.dim(0), KH = kernels.dim(2), KW = kernels.dim(3);
    if (kernels.dim(1) != C)
        throw shape_error("conv2d_forward: kernels " + shape_str(kernels.shape()) +
                          " do not match input channels of " + shape_str(input.shape()));
    if (bias.dim(0) != F)
        throw shape_error("conv2d_forward: bias " + shape_str(bias.shape()) +
                          " does not match kernel count " + std::to_string(F));
    const size_t P = static_cast<size_t>(padding), S = static_cast<size_t>(stride);
    if (H + 2 * P < KH || W + 2 * P < KW)
        throw shape_error("conv2d_forward: kernel " + shape_str(kernels.shape()) +
                          " larger than padded input " + shape_str(input.shape()));
    const size_t OH = (H + 2 * P - KH) / S + 1;
    const size_t OW = (W + 2 * P - KW) / S + 1;

    const TensorNode& in = *input.node();
    const TensorNode& k = *kernels.node();
    const TensorNode& b = *bias.node();
    std::vector<double> out(N * F * OH * OW);
    for (size_t n = 0; n < N; ++n)
        for (size_t f = 0; f < F; ++f)
            for (size_t oh = 0; oh < OH; ++oh)
                for (size_t ow = 0; ow < OW; ++ow) {
                    double s = b.wide(f);
                    for (size_t c = 0; c < C; ++c)
                        for (size_t i = 0; i < KH; ++i) {
                            const long y = static_cast<long>(oh * S + i) - static_cast<long>(P);
                            if (y < 0 || y >= static_cast<long>(H)) continue;
                            for (size_t j = 0; j < KW; ++j) {
                                const long x = static_cast<long>(ow * S + j) - static_cast<long>(P);
                                if (x < 0 || x >= static_cast<long>(W)) continue;
                                s += in.wide(((n * C + c) * H + static_cast<size_t>(y)) * W +
                                             static_cast<size_t>(x)) *
                                     k.wide(((f * C + c) * KH + i) * KW + j);
                            }
                        }
                    out[((n * F + f) * OH + oh) * OW + ow] = s;
                }

    return op_output(
        "conv2d_forward", {N, F, OH, OW}, std::move(out), {&input, &kernels, &bias},
        [input, kernels, bias, N, C, H, W, F, KH, KW, OH, OW, S, P](const TensorNode& self) {
            TensorNode& in = *input.node();
            TensorNode& k = *kernels.node();
            TensorNode& b = *bias.node();
            const std::vector<double>& g = self.grad64;
            const bool di = wants_grad(in), dk = wants_grad(k), db = wants_grad(b);
            for (size_t n = 0; n < N; ++n)
                for (size_t f = 0; f < F; ++f)
                    for (size_t oh = 0; oh < OH; ++oh)
                        for (size_t ow = 0; ow < OW; ++ow) {
                            const double gv = g[((n * F + f) * OH + oh) * OW + ow];
                            if (db) b.grad64[f] += gv;
                            if (!di && !dk) continue;
                            for (size_t c = 0; c < C; ++c)
                                for (size_t i = 0; i < KH; ++i) {
                                    const long y = static_cast<long>(oh * S + i) - static_cast<long>(P);
                                    if (y < 0 || y >= static_cast<long>(H)) continue;
                                    for (size_t j = 0; j < KW; ++j) {
                                        const long x = static_cast<long>(ow * S + j) - static_cast<long>(P);
                                        if (x < 0 || x >= static_cast<long>(W)) continue;
                                        const size_t ii = ((n * C + c) * H + static_cast<size_t>(y)) * W +
                                                          static_cast<size_t>(x);
                                        const size_t ki = ((f * C + c) * KH + i) * KW + j;
                                        if (di) in.grad64[ii] += k.wide(ki) * gv;
                                        if (dk) k.grad64[ki] += in.wide(ii) * gv;
                                    }
                                }
                        }
        });
}

Tensor relu(const Tensor& input) {
    const TensorNode& in = *input.node();
    const size_t n = input.numel();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        const double v = in.wide(i);
        out[i] = v > 0.0 ? v : 0.0;
    }
    return op_output("relu", input.shape(), std::move(out), {&input},
                     [input, n](const TensorNode& self) {
                         TensorNode& in = *input.node();
                         if (!wants_grad(in)) return;
                         for (size_t i = 0; i < n; ++i)
                             if (in.wide(i) > 0.0) in.grad64[i] += self.grad64[i];
                     });
}

Tensor maxpool2d(const Tensor& input, int window) {
    if (window < 1)
        throw value_error("maxpool2d: window must be >= 1, got " + std::to_string(window));
    require_rank(input, 4, "maxpool2d", "input");
    const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const size_t wnd = static_cast<size_t>(window);
    const size_t OH = H / wnd, OW = W / wnd;
    if (OH == 0 || OW == 0)
        throw shape_error("maxpool2d: window " + std::to_string(window) +
                          " exceeds input " + shape_str(input.shape()));

    const TensorNode& in = *input.node();
    std::vector<double> out(N * C * OH * OW);
    std::vector<size_t> argmax(out.size());
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t oh = 0; oh < OH; ++oh)
                for (size_t ow = 0; ow < OW; ++ow) {
                    double best = 0.0;
                    size_t best_idx = 0;
                    bool first = true;
                    for (size_t i = 0; i < wnd; ++i)
                        for (size_t j = 0; j < wnd; ++j) {
                            const size_t idx =
                                ((n * C + c) * H + oh * wnd + i) * W + ow * wnd + j;
                            const double v = in.wide(idx);
                            // strict > keeps the first occurrence on ties
                            if (first || v > best) {
                                best = v;
                                best_idx = idx;
                                first = false;
                            }
                        }
                    const size_t o = ((n * C + c) * OH + oh) * OW + ow;
                    out[o] = best;
                    argmax[o] = best_idx;
                }

    return op_output("maxpool2d", {N, C, OH, OW}, std::move(out), {&input},
                     [input, argmax = std::move(argmax)](const TensorNode& self) {
                         TensorNode& in = *input.node();
                         if (!wants_grad(in)) return;
                         for (size_t o = 0; o < argmax.size(); ++o)
                             in.grad64[argmax[o]] += self.grad64[o];
                     });
}

Tensor batchnorm_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, bool training) {
    if (input.rank() != 2 && input.rank() != 4)
        throw shape_error("batchnorm_forward: input must be N×C or N×C×H×W, got " +
                          shape_str(input.shape()));
    require_rank(gamma, 1, "batchnorm_forward", "gamma");
    require_rank(beta, 1, "batchnorm_forward", "beta");
    const size_t N = input.dim(0), C = input.dim(1);
    const size_t HW = input.numel() / (N * C);
    if (gamma.dim(0) != C || beta.dim(0) != C || state.channels() != C)
        throw shape_error("batchnorm_forward: gamma/beta/state channel count does not match input " +
                          shape_str(input.shape()));
    if (training && N < 2)
        throw value_error("batchnorm_forward: training mode requires batch size >= 2, got " +
                          std::to_string(N));

    constexpr double kEps = 1e-5;
    constexpr double kMomentum = 0.1;
    const double m = static_cast<double>(N * HW);
    const TensorNode& in = *input.node();
    const TensorNode& gm = *gamma.node();
    const TensorNode& bt = *beta.node();

    std::vector<double> mean(C, 0.0), invstd(C, 0.0);
    if (training) {
        std::vector<double> var(C, 0.0);
        for (size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (size_t n = 0; n < N; ++n)
                for (size_t e = 0; e < HW; ++e) s += in.wide((n * C + c) * HW + e);
            mean[c] = s / m;
            double sq = 0.0;
            for (size_t n = 0; n < N; ++n)
                for (size_t e = 0; e < HW; ++e) {
                    const double d = in.wide((n * C + c) * HW + e) - mean[c];
                    sq += d * d;
                }
            var[c] = sq / m;
            invstd[c] = 1.0 / std::sqrt(var[c] + kEps);
        }
        // Fold the batch statistics into the running estimates (unbiased
        // variance, matching the usual eval-time convention).
        for (size_t c = 0; c < C; ++c) {
            const double rm = (1.0 - kMomentum) * static_cast<double>(state.running_mean[c]) +
                              kMomentum * mean[c];
            const double rv = (1.0 - kMomentum) * static_cast<double>(state.running_var[c]) +
                              kMomentum * var[c] * m / (m - 1.0);
            state.running_mean[c] = static_cast<float>(rm);
            state.running_var[c] = static_cast<float>(rv);
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean[c] = static_cast<double>(state.running_mean[c]);
            invstd[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + kEps);
        }
    }

    std::vector<double> out(input.numel());
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t e = 0; e < HW; ++e) {
                const size_t idx = (n * C + c) * HW + e;
                out[idx] = (in.wide(idx) - mean[c]) * invstd[c] * gm.wide(c) + bt.wide(c);
            }

    return op_output(
        "batchnorm_forward", input.shape(), std::move(out), {&input, &gamma, &beta},
        [input, gamma, beta, N, C, HW, m, training, mean = std::move(mean),
         invstd = std::move(invstd)](const TensorNode& self) {
            TensorNode& in = *input.node();
            TensorNode& gm = *gamma.node();
            TensorNode& bt = *beta.node();
            const std::vector<double>& g = self.grad64;
            for (size_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (size_t n = 0; n < N; ++n)
                    for (size_t e = 0; e < HW; ++e) {
                        const size_t idx = (n * C + c) * HW + e;
                        const double xhat = (in.wide(idx) - mean[c]) * invstd[c];
                        sum_g += g[idx];
                        sum_gx += g[idx] * xhat;
                    }
                if (wants_grad(gm)) gm.grad64[c] += sum_gx;
                if (wants_grad(bt)) bt.grad64[c] += sum_g;
                if (!wants_grad(in)) continue;
                const double gmc = gm.wide(c);
                if (training) {
                    // Batch statistics carry gradient: the usual three-term
                    // batch-norm backward.
                    for (size_t n = 0; n < N; ++n)
                        for (size_t e = 0; e < HW; ++e) {
                            const size_t idx = (n * C + c) * HW + e;
                            const double xhat = (in.wide(idx) - mean[c]) * invstd[c];
                            in.grad64[idx] += invstd[c] * gmc *
                                              (g[idx] - sum_g / m - xhat * sum_gx / m);
                        }
                } else {
                    for (size_t n = 0; n < N; ++n)
                        for (size_t e = 0; e < HW; ++e) {
                            const size_t idx = (n * C + c) * HW + e;
                            in.grad64[idx] += invstd[c] * gmc * g[idx];
                        }
                }
            }
        });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_rank(logits, 2, "cross_entropy", "logits");
    const size_t N = logits.dim(0), C = logits.dim(1);
    if (labels.size() != N)
        throw shape_error("cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(N) + " rows");
    for (size_t n = 0; n < N; ++n)
        if (labels[n] < 0 || static_cast<size_t>(labels[n]) >= C)
            throw value_error("cross_entropy: label " + std::to_string(labels[n]) +
                              " out of range [0, " + std::to_string(C) + ")");

    const TensorNode& z = *logits.node();
    double total = 0.0;
    for (size_t n = 0; n < N; ++n) {
        double mx = z.wide(n * C);
        for (size_t c = 1; c < C; ++c) mx = std::max(mx, z.wide(n * C + c));
        double denom = 0.0;
        for (size_t c = 0; c < C; ++c) denom += std::exp(z.wide(n * C + c) - mx);
        total += mx + std::log(denom) - z.wide(n * C + static_cast<size_t>(labels[n]));
    }
    std::vector<double> out{total / static_cast<double>(N)};

    return op_output(
        "cross_entropy", {1}, std::move(out), {&logits},
        [logits, labels, N, C](const TensorNode& self) {
            TensorNode& z = *logits.node();
            if (!wants_grad(z)) return;
            const double g0 = self.grad64[0] / static_cast<double>(N);
            for (size_t n = 0; n < N; ++n) {
                double mx = z.wide(n * C);
                for (size_t c = 1; c < C; ++c) mx = std::max(mx, z.wide(n * C + c));
                double denom = 0.0;
                for (size_t c = 0; c < C; ++c) denom += std::exp(z.wide(n * C + c) - mx);
                for (size_t c = 0; c < C; ++c) {
                    const double p = std::exp(z.wide(n * C + c) - mx) / denom;
                    const double onehot = (static_cast<size_t>(labels[n]) == c) ? 1.0 : 0.0;
                    z.grad64[n * C + c] += g0 * (p - onehot);
                }
            }
        });
}

Tensor scale_channels(const Tensor& input, const Tensor& gates) {
    if (input.rank() != 2 && input.rank() != 4)
        throw shape_error("scale_channels: input must be N×C or N×C×H×W, got " +
                          shape_str(input.shape()));
    require_rank(gates, 2, "scale_channels", "gates");
    const size_t N = input.dim(0), C = input.dim(1);
    const size_t HW = input.numel() / (N * C);
    if (gates.dim(0) != N || gates.dim(1) != C)
        throw shape_error("scale_channels: gates " + shape_str(gates.shape()) +
                          " do not match input " + shape_str(input.shape()));

    const TensorNode& in = *input.node();
    const TensorNode& gt = *gates.node();
    std::vector<double> out(input.numel());
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            const double gate = gt.wide(n * C + c);
            for (size_t e = 0; e < HW; ++e) {
                const size_t idx = (n * C + c) * HW + e;
                out[idx] = in.wide(idx) * gate;
            }
        }

    return op_output("scale_channels", input.shape(), std::move(out), {&input, &gates},
                     [input, gates, N, C, HW](const TensorNode& self) {
                         TensorNode& in = *input.node();
                         TensorNode& gt = *gates.node();
                         const std::vector<double>& g = self.grad64;
                         for (size_t n = 0; n < N; ++n)
                             for (size_t c = 0; c < C; ++c) {
                                 const size_t gidx = n * C + c;
                                 double acc = 0.0;
                                 for (size_t e = 0; e < HW; ++e) {
                                     const size_t idx = gidx * HW + e;
                                     if (wants_grad(in)) in.grad64[idx] += g[idx] * gt.wide(gidx);
                                     acc += g[idx] * in.wide(idx);
                                 }
                                 if (wants_grad(gt)) gt.grad64[gidx] += acc;
                             }
                     });
}

Tensor slice_cols(const Tensor& input, size_t lo, size_t hi) {
    require_rank(input, 2, "slice_cols", "input");
    const size_t N = input.dim(0), K = input.dim(1);
    if (lo >= hi || hi > K)
        throw value_error("slice_cols: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                          ") invalid for " + std::to_string(K) + " columns");
    const size_t M = hi - lo;
    const TensorNode& in = *input.node();
    std::vector<double> out(N * M);
    for (size_t n = 0; n < N; ++n)
        for (size_t j = 0; j < M; ++j) out[n * M + j] = in.wide(n * K + lo + j);

    return op_output("slice_cols", {N, M}, std::move(out), {&input},
                     [input, N, K, M, lo](const TensorNode& self) {
                         TensorNode& in = *input.node();
                         if (!wants_grad(in)) return;
                         for (size_t n = 0; n < N; ++n)
                             for (size_t j = 0; j < M; ++j)
                                 in.grad64[n * K + lo + j] += self.grad64[n * M + j];
                     });
}

Tensor reshape(const Tensor& input, Shape new_shape) {
    if (shape_numel(new_shape) != input.numel())
        throw shape_error("reshape: cannot view " + shape_str(input.shape()) + " as " +
                          shape_str(new_shape));
    const TensorNode& in = *input.node();
    std::vector<double> out(input.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = in.wide(i);
    return op_output("reshape", std::move(new_shape), std::move(out), {&input},
                     [input](const TensorNode& self) {
                         TensorNode& in = *input.node();
                         if (!wants_grad(in)) return;
                         for (size_t i = 0; i < self.grad64.size(); ++i)
                             in.grad64[i] += self.grad64[i];
                     });
}

Tensor flatten2d(const Tensor& input) {
    if (input.rank() < 2)
        throw shape_error("flatten2d: input must have rank >= 2, got " +
                          shape_str(input.shape()));
    return reshape(input, {input.dim(0), input.numel() / input.dim(0)});
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const TensorNode& an = *a.node();
    const TensorNode& bn = *b.node();
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an.wide(i) + bn.wide(i);
    return op_output("add", a.shape(), std::move(out), {&a, &b},
                     [a, b](const TensorNode& self) {
                         TensorNode& an = *a.node();
                         TensorNode& bn = *b.node();
                         for (size_t i = 0; i < self.grad64.size(); ++i) {
                             if (wants_grad(an)) an.grad64[i] += self.grad64[i];
                             if (wants_grad(bn)) bn.grad64[i] += self.grad64[i];
                         }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const TensorNode& an = *a.node();
    const TensorNode& bn = *b.node();
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an.wide(i) * bn.wide(i);
    return op_output("mul", a.shape(), std::move(out), {&a, &b},
                     [a, b](const TensorNode& self) {
                         TensorNode& an = *a.node();
                         TensorNode& bn = *b.node();
                         for (size_t i = 0; i < self.grad64.size(); ++i) {
                             if (wants_grad(an)) an.grad64[i] += self.grad64[i] * bn.wide(i);
                             if (wants_grad(bn)) bn.grad64[i] += self.grad64[i] * an.wide(i);
                         }
                     });
}

Tensor sum(const Tensor& input) {
    const TensorNode& in = *input.node();
    double s = 0.0;
    for (size_t i = 0; i < input.numel(); ++i) s += in.wide(i);
    return op_output("sum", {1}, {s}, {&input},
                     [input](const TensorNode& self) {
                         TensorNode& in = *input.node();
                         if (!wants_grad(in)) return;
                         for (size_t i = 0; i < in.grad64.size(); ++i)
                             in.grad64[i] += self.grad64[0];
                     });
}

std::vector<int> argmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "argmax_rows", "logits");
    const size_t N = logits.dim(0), C = logits.dim(1);
    const TensorNode& z = *logits.node();
    std::vector<int> out(N);
    for (size_t n = 0; n < N; ++n) {
        size_t best = 0;
        double bv = z.wide(n * C);
        for (size_t c = 1; c < C; ++c) {
            const double v = z.wide(n * C + c);
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out[n] = static_cast<int>(best);
    }
    return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const std::vector<int> pred = argmax_rows(logits);
    if (labels.size() != pred.size())
        throw shape_error("accuracy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(pred.size()) + " rows");
    size_t hits = 0;
    for (size_t n = 0; n < pred.size(); ++n)
        if (pred[n] == labels[n]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

} // namespace mark
