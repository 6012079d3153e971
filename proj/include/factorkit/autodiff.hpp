#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "factorkit/errors.hpp"
#include "factorkit/parallel.hpp"
#include "factorkit/tensor.hpp"

namespace factorkit::ad {

// Parameter groups used to restrict a backward pass to one network's weights.
enum Group : uint32_t {
    kNone = 0,
    kEncoder = 1u << 0,
    kDecoder = 1u << 1,
    kDiscriminator = 1u << 2,
    kAuxiliary = 1u << 3,
    kOracle = 1u << 4,
    kAllGroups = 0xffffffffu,
};

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
// Col-major views: a row-major (R, C) buffer is the same memory as a
// col-major (C, R) matrix, which keeps every conv GEMM on Eigen's native
// column-major path without any transposition passes.
template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using MapCM = Eigen::Map<MatCM<T>>;
template <typename T>
using CMapCM = Eigen::Map<const MatCM<T>>;

// Reverse-mode tape. The graph is rebuilt per step; nodes are closures over
// cached forward context. backward() may be called several times per graph
// with different watch masks (one per optimized network); gradients flow only
// through nodes that both depend on a watched parameter and reach the loss,
// which keeps e.g. a discriminator-only backward from descending into the
// decoder and encoder subgraphs.
template <typename T>
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Tape() { tune_allocator(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Graphs allocate and release tens of megabytes of scratch per step.
    // Keeping large blocks on the heap (instead of per-allocation mmap)
    // lets glibc reuse them without fresh page faults.
    static void tune_allocator() {
#if defined(__GLIBC__)
        static const bool done = [] {
            mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
            mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
            return true;
        }();
        (void)done;
#endif
    }

    // --- leaves ---------------------------------------------------------

    Var leaf(Tensor<T> value) {
        Node n;
        n.value = std::move(value);
        return push(std::move(n));
    }

    // Binds an externally owned parameter. backward() accumulates into *grad.
    // Repeat bindings of the same tensor return the same node so that a
    // parameter used at several graph sites accumulates one total gradient.
    Var param(Tensor<T>* value, Tensor<T>* grad, uint32_t group) {
        auto it = param_ids_.find(value);
        if (it != param_ids_.end()) return Var{it->second};
        Node n;
        n.bound_value = value;
        n.bound_grad = grad;
        n.group = group;
        Var v = push(std::move(n));
        param_ids_.emplace(value, v.id);
        return v;
    }

    const Tensor<T>& val(Var v) const {
        const Node& n = nodes_[static_cast<size_t>(v.id)];
        return n.bound_value ? *n.bound_value : n.value;
    }

    // --- elementwise ------------------------------------------------------

    Var add(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (!va.same_shape(vb)) throw ContractError("add: shape mismatch");
        Node n;
        n.value = va;
        for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += vb[i];
        n.inputs = {a.id, b.id};
        n.back = [](Tape& t, int self) {
            const auto& g = t.grad(self);
            t.add_grad(t.input(self, 0), g);
            t.add_grad(t.input(self, 1), g);
        };
        return push(std::move(n));
    }

    Var sub(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (!va.same_shape(vb)) throw ContractError("sub: shape mismatch");
        Node n;
        n.value = va;
        for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= vb[i];
        n.inputs = {a.id, b.id};
        n.back = [](Tape& t, int self) {
            const auto& g = t.grad(self);
            t.add_grad(t.input(self, 0), g);
            if (t.wants_grad(t.input(self, 1))) {
                auto& gb = t.grad_buf(t.input(self, 1));
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
        };
        return push(std::move(n));
    }

    Var mul(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (!va.same_shape(vb)) throw ContractError("mul: shape mismatch");
        Node n;
        n.value = va;
        for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= vb[i];
        n.inputs = {a.id, b.id};
        n.back = [](Tape& t, int self) {
            const auto& g = t.grad(self);
            const int ia = t.input(self, 0);
            const int ib = t.input(self, 1);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                const auto& vb2 = t.val(Var{ib});
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
            }
            if (t.wants_grad(ib)) {
                auto& gb = t.grad_buf(ib);
                const auto& va2 = t.val(Var{ia});
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va2[i];
            }
        };
        return push(std::move(n));
    }

    Var scale(Var a, double c) {
        Node n;
        n.value = val(a);
        for (auto& v : n.value.data) v = static_cast<T>(v * c);
        n.inputs = {a.id};
        n.back = [c](Tape& t, int self) {
            const auto& g = t.grad(self);
            const int ia = t.input(self, 0);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += static_cast<T>(g[i] * c);
            }
        };
        return push(std::move(n));
    }

    Var exp(Var a) {
        Node n;
        n.value = val(a);
        for (auto& v : n.value.data) v = std::exp(v);
        n.inputs = {a.id};
        n.back = [](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& y = t.node_value(self);
            const int ia = t.input(self, 0);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
            }
        };
        return push(std::move(n));
    }

    Var leaky_relu(Var a, double slope) {
        Node n;
        n.value = val(a);
        const T s = static_cast<T>(slope);
        for (auto& v : n.value.data) v = v > T(0) ? v : v * s;
        n.inputs = {a.id};
        n.back = [s](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& y = t.node_value(self);
            const int ia = t.input(self, 0);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < g.numel(); ++i)
                    ga[i] += y[i] > T(0) ? g[i] : g[i] * s;
            }
        };
        return push(std::move(n));
    }

    Var sigmoid(Var a) {
        Node n;
        n.value = val(a);
        for (auto& v : n.value.data) {
            // Split by sign to avoid overflow in exp.
            if (v >= T(0)) {
                const T e = std::exp(-v);
                v = T(1) / (T(1) + e);
            } else {
                const T e = std::exp(v);
                v = e / (T(1) + e);
            }
        }
        n.inputs = {a.id};
        n.back = [](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& y = t.node_value(self);
            const int ia = t.input(self, 0);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
            }
        };
        return push(std::move(n));
    }

    // --- structure --------------------------------------------------------

    Var reshape(Var a, std::vector<int64_t> shape) {
        const auto& va = val(a);
        if (Tensor<T>::count(shape) != va.numel()) throw ContractError("reshape: element count mismatch");
        Node n;
        n.value = va;
        n.value.shape = std::move(shape);
        n.inputs = {a.id};
        n.back = [](Tape& t, int self) {
            const auto& g = t.grad(self);
            const int ia = t.input(self, 0);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
        };
        return push(std::move(n));
    }

    Var concat_cols(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(0) != vb.dim(0))
            throw ContractError("concat_cols: expects (B,Da) and (B,Db)");
        const int64_t rows = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
        Node n;
        n.value = Tensor<T>::uninit({rows, ca + cb});
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < ca; ++j) n.value.at(r, j) = va.at(r, j);
            for (int64_t j = 0; j < cb; ++j) n.value.at(r, ca + j) = vb.at(r, j);
        }
        n.inputs = {a.id, b.id};
        n.back = [rows, ca, cb](Tape& t, int self) {
            const auto& g = t.grad(self);
            const int ia = t.input(self, 0);
            const int ib = t.input(self, 1);
            if (t.wants_grad(ia)) {
                auto& ga = t.grad_buf(ia);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
            }
            if (t.wants_grad(ib)) {
                auto& gb = t.grad_buf(ib);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
            }
        };
        return push(std::move(n));
    }

    // Nearest-neighbour 2x upsampling of (B, C, H, W).
    Var upsample2x(Var a) {
        const auto& va = val(a);
        if (va.ndim() != 4) throw ContractError("upsample2x: expects (B,C,H,W)");
        const int64_t B = va.dim(0), C = va.dim(1), H = va.dim(2), W = va.dim(3);
        Node n;
        n.value = Tensor<T>::uninit({B, C, 2 * H, 2 * W});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T* src = va.ptr() + bc * H * W;
            T* dst = n.value.ptr() + bc * 4 * H * W;
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const T v = src[h * W + w];
                    T* d = dst + (2 * h) * 2 * W + 2 * w;
                    d[0] = v;
                    d[1] = v;
                    d[2 * W] = v;
                    d[2 * W + 1] = v;
                }
        }
        n.inputs = {a.id};
        n.back = [B, C, H, W](Tape& t, int self) {
            const int ia = t.input(self, 0);
            if (!t.wants_grad(ia)) return;
            const auto& g = t.grad(self);
            auto& ga = t.grad_buf(ia);
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T* gs = g.ptr() + bc * 4 * H * W;
                T* gd = ga.ptr() + bc * H * W;
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) {
                        const T* s = gs + (2 * h) * 2 * W + 2 * w;
                        gd[h * W + w] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
                    }
            }
        };
        return push(std::move(n));
    }

    // Depth-to-space with factor 2: (B, 4C, H, W) -> (B, C, 2H, 2W), where
    // out[b,c,2h+dy,2w+dx] = in[b, 4c + 2dy + dx, h, w].
    Var pixel_shuffle2(Var a) {
        const auto& va = val(a);
        if (va.ndim() != 4 || va.dim(1) % 4 != 0)
            throw ContractError("pixel_shuffle2: expects (B,4C,H,W)");
        const int64_t B = va.dim(0), C = va.dim(1) / 4, H = va.dim(2), W = va.dim(3);
        Node n;
        n.value = Tensor<T>::uninit({B, C, 2 * H, 2 * W});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                T* dst = n.value.ptr() + (b * C + c) * 4 * H * W;
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx) {
                        const T* src = va.ptr() + (b * 4 * C + 4 * c + 2 * dy + dx) * H * W;
                        for (int64_t h = 0; h < H; ++h)
                            for (int64_t w = 0; w < W; ++w)
                                dst[(2 * h + dy) * 2 * W + 2 * w + dx] = src[h * W + w];
                    }
            }
        n.inputs = {a.id};
        n.back = [B, C, H, W](Tape& t, int self) {
            const int ia = t.input(self, 0);
            if (!t.wants_grad(ia)) return;
            const auto& g = t.grad(self);
            auto& ga = t.grad_buf(ia);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const T* gs = g.ptr() + (b * C + c) * 4 * H * W;
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx) {
                            T* gd = ga.ptr() + (b * 4 * C + 4 * c + 2 * dy + dx) * H * W;
                            for (int64_t h = 0; h < H; ++h)
                                for (int64_t w = 0; w < W; ++w)
                                    gd[h * W + w] += gs[(2 * h + dy) * 2 * W + 2 * w + dx];
                        }
                }
        };
        return push(std::move(n));
    }

    // --- linear layers ------------------------------------------------------

    // x (B, Din) * w (Din, Dout) + b (Dout)
    Var dense(Var x, Var w, Var b) {
        const auto& vx = val(x);
        const auto& vw = val(w);
        const auto& vb = val(b);
        if (vx.ndim() != 2 || vw.ndim() != 2 || vx.dim(1) != vw.dim(0) || vb.numel() != vw.dim(1))
            throw ContractError("dense: shape mismatch x" + Tensor<T>::shape_str(vx.shape) +
                                " w" + Tensor<T>::shape_str(vw.shape));
        const int64_t B = vx.dim(0), Din = vx.dim(1), Dout = vw.dim(1);
        Node n;
        n.value = Tensor<T>::uninit({B, Dout});
        // Row-major (B, Dout) output == col-major (Dout, B) view.
        CMapCM<T> Xt(vx.ptr(), Din, B), Wt(vw.ptr(), Dout, Din);
        MapCM<T> Yt(n.value.ptr(), Dout, B);
        Yt.noalias() = Wt * Xt;
        for (int64_t r = 0; r < B; ++r)
            for (int64_t j = 0; j < Dout; ++j) n.value[r * Dout + j] += vb[j];
        n.inputs = {x.id, w.id, b.id};
        n.back = [B, Din, Dout](Tape& t, int self) {
            const auto& g = t.grad(self);
            const int ix = t.input(self, 0);
            const int iw = t.input(self, 1);
            const int ib = t.input(self, 2);
            CMapCM<T> Gt(g.ptr(), Dout, B);
            if (t.wants_grad(ix)) {
                CMapCM<T> Wt(t.val(Var{iw}).ptr(), Dout, Din);
                MapCM<T> GXt(t.grad_buf(ix).ptr(), Din, B);
                GXt.noalias() += Wt.transpose() * Gt;
            }
            if (t.wants_grad(iw)) {
                CMapCM<T> Xt(t.val(Var{ix}).ptr(), Din, B);
                MapCM<T> GWt(t.grad_buf(iw).ptr(), Dout, Din);
                GWt.noalias() += Gt * Xt.transpose();
            }
            if (t.wants_grad(ib)) {
                auto& gb = t.grad_buf(ib);
                for (int64_t r = 0; r < B; ++r)
                    for (int64_t j = 0; j < Dout; ++j) gb[j] += g[r * Dout + j];
            }
        };
        return push(std::move(n));
    }

    // x (B, Cin, H, W) * w (Cout, Cin, K, K) + b (Cout), square kernel.
    // im2col per sample; samples run in parallel, weight-gradient partials are
    // reduced serially in sample order so results are thread-count invariant.
    Var conv2d(Var x, Var w, Var b, int stride, int pad) {
        const auto& vx = val(x);
        const auto& vw = val(w);
        const auto& vb = val(b);
        if (vx.ndim() != 4 || vw.ndim() != 4 || vx.dim(1) != vw.dim(1) || vb.numel() != vw.dim(0))
            throw ContractError("conv2d: shape mismatch x" + Tensor<T>::shape_str(vx.shape) +
                                " w" + Tensor<T>::shape_str(vw.shape));
        const ConvDims d = conv_dims(vx, vw, stride, pad);
        auto ctx = std::make_shared<Tensor<T>>(Tensor<T>::uninit({d.B, d.K, d.M}));  // cached im2col
        Node n;
        n.value = Tensor<T>::uninit({d.B, d.Cout, d.Ho, d.Wo});
        Tensor<T>& value = n.value;
        const Tensor<T>* px = &vx;
        const Tensor<T>* pw = &vw;
        parallel_for(d.B, [&, this](int64_t s) {
            T* col = ctx->ptr() + s * d.K * d.M;
            im2col(px->ptr() + s * d.Cin * d.H * d.W, col, d, stride, pad);
            // out (Cout x M, row-major) == out^T (M x Cout, col-major);
            // col buffer (K x M, row-major) == col^T (M x K, col-major).
            CMapCM<T> ColT(col, d.M, d.K);
            CMapCM<T> Wt(pw->ptr(), d.K, d.Cout);
            MapCM<T> OutT(value.ptr() + s * d.Cout * d.M, d.M, d.Cout);
            OutT.noalias() = ColT * Wt;
        });
        for (int64_t s = 0; s < d.B; ++s) {
            T* out = value.ptr() + s * d.Cout * d.M;
            for (int64_t co = 0; co < d.Cout; ++co)
                for (int64_t m = 0; m < d.M; ++m) out[co * d.M + m] += vb[co];
        }
        n.inputs = {x.id, w.id, b.id};
        n.back = [ctx, d, stride, pad](Tape& t, int self) {
            const auto& g = t.grad(self);
            const int ix = t.input(self, 0);
            const int iw = t.input(self, 1);
            const int ib = t.input(self, 2);
            const bool want_x = t.wants_grad(ix);
            const bool want_w = t.wants_grad(iw);
            const bool want_b = t.wants_grad(ib);
            Tensor<T>* gx = want_x ? &t.grad_buf(ix) : nullptr;
            const Tensor<T>& vw2 = t.val(Var{iw});
            Tensor<T> partials;
            if (want_w) partials = Tensor<T>::uninit({d.B, d.Cout, d.K});
            parallel_for(d.B, [&](int64_t s) {
                CMapCM<T> Gt(g.ptr() + s * d.Cout * d.M, d.M, d.Cout);
                CMapCM<T> ColT(ctx->ptr() + s * d.K * d.M, d.M, d.K);
                if (want_w) {
                    // partial (Cout x K, row-major) == partial^T (K x Cout, col-major)
                    MapCM<T> Pt(partials.ptr() + s * d.Cout * d.K, d.K, d.Cout);
                    Pt.noalias() = ColT.transpose() * Gt;
                }
                if (want_x) {
                    MatCM<T> dcolT(d.M, d.K);
                    CMapCM<T> Wt(vw2.ptr(), d.K, d.Cout);
                    dcolT.noalias() = Gt * Wt.transpose();
                    col2im(dcolT.data(), gx->ptr() + s * d.Cin * d.H * d.W, d, stride, pad);
                }
            });
            if (want_w) {
                auto& gw = t.grad_buf(iw);
                for (int64_t s = 0; s < d.B; ++s) {
                    const T* p = partials.ptr() + s * d.Cout * d.K;
                    for (int64_t i = 0; i < d.Cout * d.K; ++i) gw[i] += p[i];
                }
            }
            if (want_b) {
                auto& gb = t.grad_buf(ib);
                for (int64_t s = 0; s < d.B; ++s) {
                    const T* gp = g.ptr() + s * d.Cout * d.M;
                    for (int64_t co = 0; co < d.Cout; ++co)
                        for (int64_t m = 0; m < d.M; ++m) gb[co] += gp[co * d.M + m];
                }
            }
        };
        return push(std::move(n));
    }

    // --- losses -------------------------------------------------------------

    // Mean negated Bernoulli log-likelihood with predictions clamped to
    // [eps, 1-eps] before the logs. Target is a constant.
    Var bce_mean(Tensor<T> target, Var pred, double eps = 1e-7) {
        const auto& vp = val(pred);
        if (!vp.same_shape(target)) throw ContractError("bce: target/prediction shape mismatch");
        const int64_t M = vp.numel();
        if (M == 0) throw ContractError("bce: empty input");
        auto tgt = std::make_shared<Tensor<T>>(std::move(target));
        const T lo = static_cast<T>(eps), hi = static_cast<T>(1.0 - eps);
        double acc = 0.0;
        for (int64_t i = 0; i < M; ++i) {
            const double p = std::min(std::max(vp[i], lo), hi);
            const double a = (*tgt)[i];
            acc += a * std::log(p) + (1.0 - a) * std::log(1.0 - p);
        }
        Node n;
        n.value = Tensor<T>::scalar(static_cast<T>(-acc / static_cast<double>(M)));
        n.inputs = {pred.id};
        n.back = [tgt, lo, hi, M](Tape& t, int self) {
            const int ip = t.input(self, 0);
            if (!t.wants_grad(ip)) return;
            const T g = t.grad(self)[0];
            const auto& vp2 = t.val(Var{ip});
            auto& gp = t.grad_buf(ip);
            const T invM = T(1) / static_cast<T>(M);
            for (int64_t i = 0; i < M; ++i) {
                const T p = vp2[i];
                if (p <= lo || p >= hi) continue;  // clamp region: zero slope
                const T a = (*tgt)[i];
                gp[i] += g * invM * ((T(1) - a) / (T(1) - p) - a / p);
            }
        };
        return push(std::move(n));
    }

    // Analytic KL( N(mu, diag sigma^2) || N(0, I) ), summed over latent dims,
    // averaged over the batch. Inputs are (B, D) mean and log-variance.
    Var kl_gauss(Var mu, Var log_var) {
        const auto& vm = val(mu);
        const auto& vl = val(log_var);
        if (!vm.same_shape(vl) || vm.ndim() != 2) throw ContractError("kl: expects matching (B,D)");
        const int64_t B = vm.dim(0);
        const int64_t N = vm.numel();
        double acc = 0.0;
        for (int64_t i = 0; i < N; ++i) {
            const double m = vm[i], lv = vl[i];
            acc += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
        }
        Node n;
        n.value = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(B)));
        n.inputs = {mu.id, log_var.id};
        n.back = [B, N](Tape& t, int self) {
            const T g = t.grad(self)[0];
            const int im = t.input(self, 0);
            const int il = t.input(self, 1);
            const T invB = T(1) / static_cast<T>(B);
            if (t.wants_grad(im)) {
                const auto& vm2 = t.val(Var{im});
                auto& gm = t.grad_buf(im);
                for (int64_t i = 0; i < N; ++i) gm[i] += g * invB * vm2[i];
            }
            if (t.wants_grad(il)) {
                const auto& vl2 = t.val(Var{il});
                auto& gl = t.grad_buf(il);
                for (int64_t i = 0; i < N; ++i)
                    gl[i] += g * invB * T(0.5) * (std::exp(vl2[i]) - T(1));
            }
        };
        return push(std::move(n));
    }

    // Weighted sum of scalar nodes.
    Var lincomb(const std::vector<std::pair<Var, double>>& terms) {
        if (terms.empty()) throw ContractError("lincomb: no terms");
        double acc = 0.0;
        Node n;
        n.inputs.reserve(terms.size());
        std::vector<double> coeffs;
        coeffs.reserve(terms.size());
        for (const auto& [v, c] : terms) {
            if (val(v).numel() != 1) throw ContractError("lincomb: non-scalar term");
            acc += c * static_cast<double>(val(v)[0]);
            n.inputs.push_back(v.id);
            coeffs.push_back(c);
        }
        n.value = Tensor<T>::scalar(static_cast<T>(acc));
        n.back = [coeffs](Tape& t, int self) {
            const T g = t.grad(self)[0];
            for (size_t k = 0; k < coeffs.size(); ++k) {
                const int ii = t.input(self, static_cast<int>(k));
                if (t.wants_grad(ii)) t.grad_buf(ii)[0] += static_cast<T>(g * coeffs[k]);
            }
        };
        return push(std::move(n));
    }

    // --- backward -----------------------------------------------------------

    // Accumulates d(loss)/d(p) into the bound grad of every parameter whose
    // group intersects `watch`. Other parameters and unreachable subgraphs are
    // skipped entirely.
    void backward(Var loss, uint32_t watch) {
        const int L = loss.id;
        if (val(loss).numel() != 1) throw ContractError("backward: loss must be scalar");
        const int N = static_cast<int>(nodes_.size());
        // relevant[i]: value depends on a watched parameter.
        for (int i = 0; i <= L; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            n.relevant = (n.group & watch) != 0;
            if (!n.relevant)
                for (int j : n.inputs)
                    if (nodes_[static_cast<size_t>(j)].relevant) {
                        n.relevant = true;
                        break;
                    }
            n.onpath = false;
        }
        for (int i = L + 1; i < N; ++i) {
            nodes_[static_cast<size_t>(i)].relevant = false;
            nodes_[static_cast<size_t>(i)].onpath = false;
        }
        if (!nodes_[static_cast<size_t>(L)].relevant) return;  // loss does not touch watched params
        nodes_[static_cast<size_t>(L)].onpath = true;
        for (int i = L; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!(n.onpath && n.relevant)) continue;
            for (int j : n.inputs)
                if (nodes_[static_cast<size_t>(j)].relevant) nodes_[static_cast<size_t>(j)].onpath = true;
        }
        // Zero scratch grads of active nodes, then seed the loss and sweep.
        for (int i = 0; i <= L; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!(n.onpath && n.relevant)) continue;
            const auto& v = n.bound_value ? *n.bound_value : n.value;
            if (!n.grad.same_shape(v)) n.grad = Tensor<T>::zeros(v.shape);
            else n.grad.fill(T(0));
        }
        nodes_[static_cast<size_t>(L)].grad[0] = T(1);
        for (int i = L; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!(n.onpath && n.relevant) || !n.back) continue;
            n.back(*this, i);
        }
        for (int i = 0; i <= L; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.bound_grad && n.onpath && (n.group & watch) != 0) {
                for (int64_t k = 0; k < n.grad.numel(); ++k) (*n.bound_grad)[k] += n.grad[k];
            }
        }
    }

    // --- internals used by op closures ---------------------------------------

    int input(int self, int k) const { return nodes_[static_cast<size_t>(self)].inputs[static_cast<size_t>(k)]; }
    bool wants_grad(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.onpath && n.relevant;
    }
    const Tensor<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    Tensor<T>& grad_buf(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Tensor<T>& node_value(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.bound_value ? *n.bound_value : n.value;
    }
    void add_grad(int id, const Tensor<T>& g) {
        if (!wants_grad(id)) return;
        auto& dst = grad_buf(id);
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> back;
        Tensor<T>* bound_value = nullptr;
        Tensor<T>* bound_grad = nullptr;
        uint32_t group = kNone;
        bool relevant = false;
        bool onpath = false;
    };

    struct ConvDims {
        int64_t B, Cin, H, W, Cout, Kk, Ho, Wo, K, M;
    };

    static ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
        ConvDims d;
        d.B = x.dim(0);
        d.Cin = x.dim(1);
        d.H = x.dim(2);
        d.W = x.dim(3);
        d.Cout = w.dim(0);
        d.Kk = w.dim(2);
        if (w.dim(2) != w.dim(3)) throw ContractError("conv2d: kernel must be square");
        if ((d.H + 2 * pad - d.Kk) % stride != 0 || (d.W + 2 * pad - d.Kk) % stride != 0)
            throw ContractError("conv2d: size/stride/pad mismatch");
        d.Ho = (d.H + 2 * pad - d.Kk) / stride + 1;
        d.Wo = (d.W + 2 * pad - d.Kk) / stride + 1;
        d.K = d.Cin * d.Kk * d.Kk;
        d.M = d.Ho * d.Wo;
        return d;
    }

    static void im2col(const T* x, T* col, const ConvDims& d, int stride, int pad) {
        for (int64_t ci = 0; ci < d.Cin; ++ci)
            for (int64_t kh = 0; kh < d.Kk; ++kh)
                for (int64_t kw = 0; kw < d.Kk; ++kw) {
                    T* row = col + ((ci * d.Kk + kh) * d.Kk + kw) * d.M;
                    for (int64_t ho = 0; ho < d.Ho; ++ho) {
                        const int64_t h = ho * stride - pad + kh;
                        if (h < 0 || h >= d.H) {
                            for (int64_t wo = 0; wo < d.Wo; ++wo) row[ho * d.Wo + wo] = T(0);
                            continue;
                        }
                        const T* src = x + (ci * d.H + h) * d.W;
                        for (int64_t wo = 0; wo < d.Wo; ++wo) {
                            const int64_t ww = wo * stride - pad + kw;
                            row[ho * d.Wo + wo] = (ww < 0 || ww >= d.W) ? T(0) : src[ww];
                        }
                    }
                }
    }

    static void col2im(const T* dcol, T* dx, const ConvDims& d, int stride, int pad) {
        for (int64_t ci = 0; ci < d.Cin; ++ci)
            for (int64_t kh = 0; kh < d.Kk; ++kh)
                for (int64_t kw = 0; kw < d.Kk; ++kw) {
                    const T* row = dcol + ((ci * d.Kk + kh) * d.Kk + kw) * d.M;
                    for (int64_t ho = 0; ho < d.Ho; ++ho) {
                        const int64_t h = ho * stride - pad + kh;
                        if (h < 0 || h >= d.H) continue;
                        T* dst = dx + (ci * d.H + h) * d.W;
                        for (int64_t wo = 0; wo < d.Wo; ++wo) {
                            const int64_t ww = wo * stride - pad + kw;
                            if (ww >= 0 && ww < d.W) dst[ww] += row[ho * d.Wo + wo];
                        }
                    }
                }
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor<T>*, int> param_ids_;
};

template <typename T>
using Var = typename Tape<T>::Var;

}  // namespace factorkit::ad
