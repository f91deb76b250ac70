#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "rawnet/tape.hpp"

namespace rawnet {

inline constexpr double kLeakySlope = 0.3;
inline constexpr double kSincFMin = 50.0; // Hz; also the minimum bandwidth

// ---------------------------------------------------------------------------
// 1-D convolution (valid correlation with optional symmetric zero padding)
// x: [B,T,Fin], w: [K,Fin,Fout] -> [B,T',Fout], T' = (T + 2*pad - K)/stride + 1
// ---------------------------------------------------------------------------

namespace detail {

// Gather the padded input window for every output step: col[t', k*Fin+c].
template <typename T>
inline void im2col(const T* x, size_t Tlen, size_t Fin, size_t K, size_t stride, size_t pad,
                   size_t Tout, T* col) {
    for (size_t to = 0; to < Tout; ++to) {
        T* row = col + to * K * Fin;
        const ptrdiff_t q0 = static_cast<ptrdiff_t>(to * stride) - static_cast<ptrdiff_t>(pad);
        for (size_t k = 0; k < K; ++k) {
            const ptrdiff_t q = q0 + static_cast<ptrdiff_t>(k);
            T* dst = row + k * Fin;
            if (q >= 0 && q < static_cast<ptrdiff_t>(Tlen)) {
                const T* src = x + static_cast<size_t>(q) * Fin;
                for (size_t c = 0; c < Fin; ++c) dst[c] = src[c];
            } else {
                for (size_t c = 0; c < Fin; ++c) dst[c] = T(0);
            }
        }
    }
}

template <typename T>
inline void col2im_acc(const T* col, size_t Tlen, size_t Fin, size_t K, size_t stride, size_t pad,
                       size_t Tout, T* dx) {
    for (size_t to = 0; to < Tout; ++to) {
        const T* row = col + to * K * Fin;
        const ptrdiff_t q0 = static_cast<ptrdiff_t>(to * stride) - static_cast<ptrdiff_t>(pad);
        for (size_t k = 0; k < K; ++k) {
            const ptrdiff_t q = q0 + static_cast<ptrdiff_t>(k);
            if (q < 0 || q >= static_cast<ptrdiff_t>(Tlen)) continue;
            T* dst = dx + static_cast<size_t>(q) * Fin;
            const T* src = row + k * Fin;
            for (size_t c = 0; c < Fin; ++c) dst[c] += src[c];
        }
    }
}

template <typename T>
inline std::vector<T>& conv_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

} // namespace detail

template <typename T>
NodeId conv1d_raw(Tape<T>& tp, NodeId x, NodeId w, size_t stride, size_t pad) {
    const Tensor<T>& X = tp.value(x);
    const Tensor<T>& W = tp.value(w);
    if (X.rank() != 3 || W.rank() != 3)
        throw ShapeError("conv1d expects x [B,T,Fin] and w [K,Fin,Fout]");
    const size_t B = X.shape[0], Tlen = X.shape[1], Fin = X.shape[2];
    const size_t K = W.shape[0], Fout = W.shape[2];
    if (W.shape[1] != Fin)
        throw ShapeError("conv1d: kernel Fin " + std::to_string(W.shape[1]) + " vs input Fin " +
                         std::to_string(Fin));
    if (stride == 0) throw ShapeError("conv1d: stride must be positive");
    if (Tlen + 2 * pad < K) throw ShapeError("conv1d: input shorter than filter");
    const size_t Tout = (Tlen + 2 * pad - K) / stride + 1;

    Tensor<T> out = Tensor<T>::zeros({B, Tout, Fout});
    std::vector<T>& col = detail::conv_scratch<T>();
    col.assign(Tout * K * Fin, T(0));
    for (size_t b = 0; b < B; ++b) {
        detail::im2col(X.ptr() + b * Tlen * Fin, Tlen, Fin, K, stride, pad, Tout, col.data());
        detail::mm_nn(col.data(), W.ptr(), out.ptr() + b * Tout * Fout, Tout, K * Fin, Fout);
    }
    check_finite(out, "conv1d");

    return tp.make_node(
        std::move(out),
        [x, w, B, Tlen, Fin, K, Fout, stride, pad, Tout](Tape<T>& tp, NodeId self) {
            const Tensor<T>& g = tp.out_grad(self);
            const Tensor<T>& X = tp.value(x);
            const Tensor<T>& W = tp.value(w);
            const bool wx = tp.wants_grad(x), ww = tp.wants_grad(w);
            std::vector<T>& col = detail::conv_scratch<T>();
            col.assign(Tout * K * Fin, T(0));
            for (size_t b = 0; b < B; ++b) {
                const T* gb = g.ptr() + b * Tout * Fout;
                if (ww) {
                    detail::im2col(X.ptr() + b * Tlen * Fin, Tlen, Fin, K, stride, pad, Tout,
                                   col.data());
                    detail::mm_tn(col.data(), gb, tp.scratch_grad(w).ptr(), K * Fin, Tout, Fout);
                }
                if (wx) {
                    std::fill(col.begin(), col.end(), T(0));
                    detail::mm_nt(gb, W.ptr(), col.data(), Tout, Fout, K * Fin);
                    detail::col2im_acc(col.data(), Tlen, Fin, K, stride, pad, Tout,
                                       tp.scratch_grad(x).ptr() + b * Tlen * Fin);
                }
            }
        },
        tp.wants_grad(x) || tp.wants_grad(w));
}

template <typename T>
NodeId conv1d(Tape<T>& tp, NodeId x, NodeId w, std::optional<NodeId> bias, size_t stride,
              size_t pad) {
    NodeId y = conv1d_raw(tp, x, w, stride, pad);
    if (bias) y = tp.add(y, *bias); // [Fout] broadcast over leading axes
    return y;
}

// ---------------------------------------------------------------------------
// Sinc filterbank materialization
// ---------------------------------------------------------------------------

// Clamping transform from raw parameters to effective cutoffs (Hz):
//   f1_raw = f_min + |p_low|
//   f2_raw = f1_raw + f_min + |p_bw|
//   f2     = min(f2_raw, sr/2 - 1)
//   f1     = min(f1_raw, f2 - f_min)
// which guarantees 0 < f1 < f2 < sr/2 for every parameter value.
inline void sinc_cutoffs(const std::vector<double>& p_low, const std::vector<double>& p_bw,
                         double sample_rate, std::vector<double>& f1, std::vector<double>& f2) {
    const double guard = 0.5 * sample_rate - 1.0;
    f1.resize(p_low.size());
    f2.resize(p_low.size());
    for (size_t i = 0; i < p_low.size(); ++i) {
        const double f1r = kSincFMin + std::abs(p_low[i]);
        const double f2r = f1r + kSincFMin + std::abs(p_bw[i]);
        f2[i] = std::min(f2r, guard);
        f1[i] = std::min(f1r, f2[i] - kSincFMin);
    }
}

// Symmetric Hamming window over filter_len taps, indexed by t in
// [-(L-1)/2, (L-1)/2].
inline double sinc_window(ptrdiff_t t, size_t filter_len) {
    return 0.54 + 0.46 * std::cos(2.0 * M_PI * static_cast<double>(t) /
                                  static_cast<double>(filter_len - 1));
}

// Windowed difference of two truncated ideal low-pass responses:
//   k(t) = (sin(2*pi*f2*t/sr) - sin(2*pi*f1*t/sr)) / (pi*t) * w(t),  t != 0
//   k(0) = 2*(f2 - f1)/sr * w(0)
inline double sinc_kernel_value(double f1, double f2, ptrdiff_t t, double sample_rate,
                                size_t filter_len) {
    const double win = sinc_window(t, filter_len);
    if (t == 0) return 2.0 * (f2 - f1) / sample_rate * win;
    const double td = static_cast<double>(t);
    const double hi = std::sin(2.0 * M_PI * f2 * td / sample_rate) / (M_PI * td);
    const double lo = std::sin(2.0 * M_PI * f1 * td / sample_rate) / (M_PI * td);
    return (hi - lo) * win;
}

// Plain (non-tape) materialization for inspection and tests.
inline std::vector<double> sinc_kernel(double f1, double f2, size_t filter_len,
                                       double sample_rate) {
    std::vector<double> k(filter_len);
    const ptrdiff_t half = static_cast<ptrdiff_t>(filter_len / 2);
    for (size_t i = 0; i < filter_len; ++i)
        k[i] = sinc_kernel_value(f1, f2, static_cast<ptrdiff_t>(i) - half, sample_rate,
                                 filter_len);
    return k;
}

// Differentiable kernel materialization: cutoff vectors [F] -> kernels
// [K,1,F]. d k(t)/d f = +-(2/sr)*cos(2*pi*f*t/sr)*w(t), valid at t = 0 too.
template <typename T>
NodeId sinc_kernels_node(Tape<T>& tp, NodeId f1, NodeId f2, size_t filter_len,
                         double sample_rate) {
    const Tensor<T>& F1 = tp.value(f1);
    const Tensor<T>& F2 = tp.value(f2);
    if (F1.shape != F2.shape || F1.rank() != 1)
        throw ShapeError("sinc_kernels: cutoff vectors must be [F]");
    if (filter_len % 2 == 0) throw ShapeError("sinc_kernels: filter_len must be odd");
    const size_t F = F1.shape[0], K = filter_len;
    const ptrdiff_t half = static_cast<ptrdiff_t>(K / 2);

    Tensor<T> out = Tensor<T>::zeros({K, 1, F});
    for (size_t i = 0; i < K; ++i) {
        const ptrdiff_t t = static_cast<ptrdiff_t>(i) - half;
        for (size_t f = 0; f < F; ++f)
            out.data[i * F + f] = static_cast<T>(sinc_kernel_value(
                static_cast<double>(F1.data[f]), static_cast<double>(F2.data[f]), t, sample_rate,
                K));
    }
    check_finite(out, "sinc_kernels");

    return tp.make_node(
        std::move(out),
        [f1, f2, K, F, half, sample_rate](Tape<T>& tp, NodeId self) {
            const Tensor<T>& g = tp.out_grad(self);
            const Tensor<T>& F1 = tp.value(f1);
            const Tensor<T>& F2 = tp.value(f2);
            const bool w1 = tp.wants_grad(f1), w2 = tp.wants_grad(f2);
            if (!w1 && !w2) return;
            Tensor<T>* d1 = w1 ? &tp.scratch_grad(f1) : nullptr;
            Tensor<T>* d2 = w2 ? &tp.scratch_grad(f2) : nullptr;
            for (size_t i = 0; i < K; ++i) {
                const double t = static_cast<double>(static_cast<ptrdiff_t>(i) - half);
                const double win = sinc_window(static_cast<ptrdiff_t>(i) - half, K);
                for (size_t f = 0; f < F; ++f) {
                    const double gv = static_cast<double>(g.data[i * F + f]);
                    if (w2)
                        d2->data[f] += static_cast<T>(
                            gv * (2.0 / sample_rate) *
                            std::cos(2.0 * M_PI * static_cast<double>(F2.data[f]) * t /
                                     sample_rate) *
                            win);
                    if (w1)
                        d1->data[f] -= static_cast<T>(
                            gv * (2.0 / sample_rate) *
                            std::cos(2.0 * M_PI * static_cast<double>(F1.data[f]) * t /
                                     sample_rate) *
                            win);
                }
            }
        },
        tp.wants_grad(f1) || tp.wants_grad(f2));
}

template <typename T>
struct SincNodes {
    NodeId kernels; // [K,1,F]
    NodeId f1;      // [F], effective lower cutoffs in Hz
    NodeId f2;      // [F], effective upper cutoffs in Hz
};

// Full materialization: raw parameters -> clamped cutoffs -> kernels.
template <typename T>
SincNodes<T> materialize_sinc(Tape<T>& tp, NodeId p_low, NodeId p_bw, size_t filter_len,
                              double sample_rate) {
    const T fmin = static_cast<T>(kSincFMin);
    const T guard = static_cast<T>(0.5 * sample_rate - 1.0);
    NodeId f1_raw = tp.add_scalar(tp.abs_(p_low), fmin);
    NodeId f2_raw = tp.add_scalar(tp.add(f1_raw, tp.abs_(p_bw)), fmin);
    NodeId f2 = tp.min_scalar(f2_raw, guard);
    NodeId f1 = tp.minimum(f1_raw, tp.add_scalar(f2, -fmin));
    NodeId k = sinc_kernels_node(tp, f1, f2, filter_len, sample_rate);
    return {k, f1, f2};
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, time) per filter
// ---------------------------------------------------------------------------

template <typename T>
struct BnRunning {
    Tensor<T> mean;
    Tensor<T> var;
};

template <typename T>
NodeId batchnorm(Tape<T>& tp, NodeId x, NodeId gamma, NodeId beta, BnRunning<T>& running,
                 T momentum, T eps, bool training) {
    const Tensor<T>& X = tp.value(x);
    if (X.rank() != 3) throw ShapeError("batchnorm expects [B,T,F]");
    const size_t B = X.shape[0], Tl = X.shape[1], F = X.shape[2];
    if (tp.value(gamma).shape != Shape{F} || tp.value(beta).shape != Shape{F})
        throw ShapeError("batchnorm: gamma/beta must be [F]");
    if (running.mean.shape != Shape{F} || running.var.shape != Shape{F})
        throw ShapeError("batchnorm: running stats must be [F]");
    const size_t N = B * Tl;

    Tensor<T> out = Tensor<T>::zeros(X.shape);
    auto xhat = std::make_shared<std::vector<T>>(X.numel());
    auto inv = std::make_shared<std::vector<T>>(F);
    const Tensor<T>& G = tp.value(gamma);
    const Tensor<T>& Bt = tp.value(beta);

    if (training) {
        if (N < 2) throw ContractError("batchnorm training requires batch*time >= 2");
        for (size_t f = 0; f < F; ++f) {
            double mu = 0.0;
            for (size_t i = 0; i < N; ++i) mu += static_cast<double>(X.data[i * F + f]);
            mu /= static_cast<double>(N);
            double var = 0.0;
            for (size_t i = 0; i < N; ++i) {
                const double d = static_cast<double>(X.data[i * F + f]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(N); // population variance
            const T invf = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            (*inv)[f] = invf;
            for (size_t i = 0; i < N; ++i) {
                const T xh = (X.data[i * F + f] - static_cast<T>(mu)) * invf;
                (*xhat)[i * F + f] = xh;
                out.data[i * F + f] = G.data[f] * xh + Bt.data[f];
            }
            running.mean.data[f] =
                (T(1) - momentum) * running.mean.data[f] + momentum * static_cast<T>(mu);
            running.var.data[f] =
                (T(1) - momentum) * running.var.data[f] + momentum * static_cast<T>(var);
        }
    } else {
        for (size_t f = 0; f < F; ++f) {
            const T invf = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(running.var.data[f]) +
                                static_cast<double>(eps)));
            (*inv)[f] = invf;
            for (size_t i = 0; i < N; ++i) {
                const T xh = (X.data[i * F + f] - running.mean.data[f]) * invf;
                (*xhat)[i * F + f] = xh;
                out.data[i * F + f] = G.data[f] * xh + Bt.data[f];
            }
        }
    }
    check_finite(out, "batchnorm");

    return tp.make_node(
        std::move(out),
        [x, gamma, beta, N, F, xhat, inv, training](Tape<T>& tp, NodeId self) {
            const Tensor<T>& g = tp.out_grad(self);
            const Tensor<T>& G = tp.value(gamma);
            const bool wx = tp.wants_grad(x);
            const bool wg = tp.wants_grad(gamma), wb = tp.wants_grad(beta);
            Tensor<T>* dgamma = wg ? &tp.scratch_grad(gamma) : nullptr;
            Tensor<T>* dbeta = wb ? &tp.scratch_grad(beta) : nullptr;
            Tensor<T>* dx = wx ? &tp.scratch_grad(x) : nullptr;
            for (size_t f = 0; f < F; ++f) {
                double sg = 0.0, sgx = 0.0;
                for (size_t i = 0; i < N; ++i) {
                    const double gv = static_cast<double>(g.data[i * F + f]);
                    sg += gv;
                    sgx += gv * static_cast<double>((*xhat)[i * F + f]);
                }
                if (wg) dgamma->data[f] += static_cast<T>(sgx);
                if (wb) dbeta->data[f] += static_cast<T>(sg);
                if (!wx) continue;
                const double gam = static_cast<double>(G.data[f]);
                const double invf = static_cast<double>((*inv)[f]);
                if (training) {
                    const double m1 = sg / static_cast<double>(N);
                    const double m2 = sgx / static_cast<double>(N);
                    for (size_t i = 0; i < N; ++i) {
                        const double gv = static_cast<double>(g.data[i * F + f]);
                        const double xh = static_cast<double>((*xhat)[i * F + f]);
                        dx->data[i * F + f] +=
                            static_cast<T>(gam * invf * (gv - m1 - xh * m2));
                    }
                } else {
                    for (size_t i = 0; i < N; ++i)
                        dx->data[i * F + f] +=
                            static_cast<T>(gam * invf) * g.data[i * F + f];
                }
            }
        },
        tp.wants_grad(x) || tp.wants_grad(gamma) || tp.wants_grad(beta));
}

// ---------------------------------------------------------------------------
// Non-overlapping max pooling along time
// ---------------------------------------------------------------------------

template <typename T>
NodeId maxpool1d(Tape<T>& tp, NodeId x, size_t width) {
    const Tensor<T>& X = tp.value(x);
    if (X.rank() != 3) throw ShapeError("maxpool1d expects [B,T,F]");
    if (width == 0) throw ShapeError("maxpool1d: width must be positive");
    const size_t B = X.shape[0], Tl = X.shape[1], F = X.shape[2];
    if (Tl < width) throw ShapeError("maxpool1d: T < width");
    const size_t To = Tl / width; // trailing remainder dropped

    Tensor<T> out = Tensor<T>::zeros({B, To, F});
    auto arg = std::make_shared<std::vector<uint32_t>>(B * To * F);
    for (size_t b = 0; b < B; ++b) {
        for (size_t to = 0; to < To; ++to) {
            for (size_t f = 0; f < F; ++f) {
                const size_t t0 = to * width;
                T best = X.at3(b, t0, f);
                uint32_t bi = 0;
                for (size_t k = 1; k < width; ++k) {
                    const T v = X.at3(b, t0 + k, f);
                    if (v > best) { // ties keep the earliest index
                        best = v;
                        bi = static_cast<uint32_t>(k);
                    }
                }
                out.at3(b, to, f) = best;
                (*arg)[(b * To + to) * F + f] = bi;
            }
        }
    }

    return tp.make_node(
        std::move(out),
        [x, B, To, F, width, arg](Tape<T>& tp, NodeId self) {
            if (!tp.wants_grad(x)) return;
            const Tensor<T>& g = tp.out_grad(self);
            Tensor<T>& dx = tp.scratch_grad(x);
            for (size_t b = 0; b < B; ++b)
                for (size_t to = 0; to < To; ++to)
                    for (size_t f = 0; f < F; ++f) {
                        const size_t t = to * width + (*arg)[(b * To + to) * F + f];
                        dx.at3(b, t, f) += g.at3(b, to, f);
                    }
        },
        tp.wants_grad(x));
}

// ---------------------------------------------------------------------------
// Fully connected: y = x W + b, x [B,in], W [in,out], b [out]
// ---------------------------------------------------------------------------

template <typename T>
NodeId fully_connected(Tape<T>& tp, NodeId x, NodeId w, NodeId b) {
    return tp.add(tp.matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// GRU, final hidden state only
// ---------------------------------------------------------------------------

struct GruNodes {
    NodeId wz, uz, bz;
    NodeId wr, ur, br;
    NodeId wh, uh, bh;
};

// Standard GRU recurrence with the reset gate applied to the previous hidden
// state before the candidate projection:
//   z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
//   r_t = sigmoid(x_t Wr + h_{t-1} Ur + br)
//   hc  = tanh(x_t Wh + (r_t*h_{t-1}) Uh + bh)
//   h_t = h_{t-1} + z_t * (hc - h_{t-1})
// h_0 = 0; returns h_T as [B,H].
template <typename T>
NodeId gru_forward(Tape<T>& tp, NodeId x, const GruNodes& g, size_t hidden) {
    const Tensor<T>& X = tp.value(x);
    if (X.rank() != 3) throw ShapeError("gru_forward expects [B,T,F]");
    const size_t B = X.shape[0], Tl = X.shape[1];
    NodeId h = tp.constant(Tensor<T>::zeros({B, hidden}));
    for (size_t t = 0; t < Tl; ++t) {
        NodeId xt = tp.slice_time(x, t);
        NodeId z = tp.sigmoid(tp.add(tp.add(tp.matmul(xt, g.wz), tp.matmul(h, g.uz)), g.bz));
        NodeId r = tp.sigmoid(tp.add(tp.add(tp.matmul(xt, g.wr), tp.matmul(h, g.ur)), g.br));
        NodeId hc = tp.tanh_(
            tp.add(tp.add(tp.matmul(xt, g.wh), tp.matmul(tp.mul(r, h), g.uh)), g.bh));
        h = tp.add(h, tp.mul(z, tp.sub(hc, h)));
    }
    return h;
}

} // namespace rawnet
