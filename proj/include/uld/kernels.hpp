#pragma once

// Data-parallel compute kernels. Every parallel kernel partitions *output*
// elements across threads and keeps the per-element accumulation order
// identical to the serial reference, so results are bitwise equal to the
// serial path for any thread count. Reductions that cross thread boundaries
// are never split.

#include <omp.h>

#include <array>
#include <cmath>
#include <cstring>
#include <limits>

#include "uld/tensor.hpp"

namespace uld::kernels {

inline bool& parallel_flag() {
    static bool enabled = true;
    return enabled;
}
inline void set_parallel(bool on) { parallel_flag() = on; }
inline bool parallel_enabled() { return parallel_flag(); }

// Below this element count a parallel region costs more than it saves.
inline constexpr int64_t kParallelCutoff = 1 << 14;

// ---------------------------------------------------------------------------
// GEMM family (row-major)
// ---------------------------------------------------------------------------

namespace ref {

/// C (+)= A[M x K] * B[K x N], plain triple loop. Reference for tests/bench.
template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(T) * static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            const T a = A[static_cast<size_t>(i) * K + k];
            const T* brow = B + static_cast<size_t>(k) * N;
            T* crow = C + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
}

}  // namespace ref

/// C (+)= A[M x K] * B[K x N]. Threads own disjoint column ranges; the
/// k-accumulation order matches ref::gemm, so output is bitwise identical.
template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    const bool par = parallel_enabled() && static_cast<int64_t>(M) * N * K > kParallelCutoff;
    constexpr int JB = 240;  // column tile, keeps an 8xJB C tile plus a B row in L1
    constexpr int IB = 8;
#pragma omp parallel for schedule(static) if (par)
    for (int j0 = 0; j0 < N; j0 += JB) {
        const int j1 = std::min(N, j0 + JB);
        if (!accumulate)
            for (int i = 0; i < M; ++i)
                std::memset(C + static_cast<size_t>(i) * N + j0, 0,
                            sizeof(T) * static_cast<size_t>(j1 - j0));
        for (int i0 = 0; i0 < M; i0 += IB) {
            const int i1 = std::min(M, i0 + IB);
            for (int k = 0; k < K; ++k) {
                const T* brow = B + static_cast<size_t>(k) * N;
                for (int i = i0; i < i1; ++i) {
                    const T a = A[static_cast<size_t>(i) * K + k];
                    T* crow = C + static_cast<size_t>(i) * N;
                    for (int j = j0; j < j1; ++j) crow[j] += a * brow[j];
                }
            }
        }
    }
}

/// C (+)= A[M x N] * B^T where B is [K2 x N]: C[i,j] = sum_n A[i,n] B[j,n].
/// Each output entry is one serial dot product (4-lane fixed-order unroll).
template <typename T>
void gemm_nt(int M, int K2, int N, const T* A, const T* B, T* C, bool accumulate) {
    const bool par = parallel_enabled() && static_cast<int64_t>(M) * K2 * N > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < K2; ++j) {
            const T* arow = A + static_cast<size_t>(i) * N;
            const T* brow = B + static_cast<size_t>(j) * N;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int n = 0;
            for (; n + 4 <= N; n += 4) {
                s0 += arow[n] * brow[n];
                s1 += arow[n + 1] * brow[n + 1];
                s2 += arow[n + 2] * brow[n + 2];
                s3 += arow[n + 3] * brow[n + 3];
            }
            T s = (s0 + s1) + (s2 + s3);
            for (; n < N; ++n) s += arow[n] * brow[n];
            T& c = C[static_cast<size_t>(i) * K2 + j];
            c = accumulate ? c + s : s;
        }
}

/// C (+)= A^T * B where A is [M x K2], B is [M x N]: C[i,j] = sum_m A[m,i] B[m,j].
template <typename T>
void gemm_tn(int K2, int N, int M, const T* A, const T* B, T* C, bool accumulate) {
    const bool par = parallel_enabled() && static_cast<int64_t>(K2) * N * M > kParallelCutoff;
    constexpr int JB = 240;
#pragma omp parallel for schedule(static) if (par)
    for (int j0 = 0; j0 < N; j0 += JB) {
        const int j1 = std::min(N, j0 + JB);
        if (!accumulate)
            for (int i = 0; i < K2; ++i)
                std::memset(C + static_cast<size_t>(i) * N + j0, 0,
                            sizeof(T) * static_cast<size_t>(j1 - j0));
        for (int m = 0; m < M; ++m) {
            const T* brow = B + static_cast<size_t>(m) * N;
            const T* arow = A + static_cast<size_t>(m) * K2;
            for (int i = 0; i < K2; ++i) {
                const T a = arow[i];
                T* crow = C + static_cast<size_t>(i) * N;
                for (int j = j0; j < j1; ++j) crow[j] += a * brow[j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM, with a naive reference
// ---------------------------------------------------------------------------

struct ConvDims {
    int N, C, H, W;      // input
    int F, KH, KW;       // filters
    int stride, pad;
    int OH, OW;
    int K2;              // C*KH*KW
    int64_t OHW;         // OH*OW
};

inline ConvDims conv_dims(const std::vector<int>& xshape, const std::vector<int>& wshape,
                          int stride, int pad) {
    ConvDims d;
    d.N = xshape[0]; d.C = xshape[1]; d.H = xshape[2]; d.W = xshape[3];
    d.F = wshape[0]; d.KH = wshape[2]; d.KW = wshape[3];
    if (wshape[1] != d.C) throw InputError("conv2d: filter channel mismatch");
    d.stride = stride; d.pad = pad;
    d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
    d.OW = (d.W + 2 * pad - d.KW) / stride + 1;
    if (d.OH <= 0 || d.OW <= 0) throw InputError("conv2d: kernel larger than padded input");
    d.K2 = d.C * d.KH * d.KW;
    d.OHW = static_cast<int64_t>(d.OH) * d.OW;
    return d;
}

/// Zero-padded patch gather for samples [n0, n1). Column g*OHW+p holds the
/// patch at output position p of sample n0+g.
template <typename T>
void im2col(const T* X, const ConvDims& d, int n0, int n1, T* cols) {
    const int64_t ncols = static_cast<int64_t>(n1 - n0) * d.OHW;
    const bool par = parallel_enabled() && ncols * d.K2 > kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int g = 0; g < n1 - n0; ++g) {
        const T* xs = X + static_cast<size_t>(n0 + g) * d.C * d.H * d.W;
        for (int c = 0; c < d.C; ++c)
            for (int kh = 0; kh < d.KH; ++kh)
                for (int kw = 0; kw < d.KW; ++kw) {
                    T* crow = cols + (static_cast<size_t>(c) * d.KH * d.KW + kh * d.KW + kw) * ncols +
                              static_cast<size_t>(g) * d.OHW;
                    for (int oh = 0; oh < d.OH; ++oh) {
                        const int ih = oh * d.stride - d.pad + kh;
                        T* dst = crow + static_cast<size_t>(oh) * d.OW;
                        if (ih < 0 || ih >= d.H) {
                            std::memset(dst, 0, sizeof(T) * d.OW);
                            continue;
                        }
                        const T* src = xs + (static_cast<size_t>(c) * d.H + ih) * d.W;
                        for (int ow = 0; ow < d.OW; ++ow) {
                            const int iw = ow * d.stride - d.pad + kw;
                            dst[ow] = (iw < 0 || iw >= d.W) ? T(0) : src[iw];
                        }
                    }
                }
    }
}

/// Scatter-add of column gradients back to image layout. Samples are
/// independent, so parallelising over g keeps writes disjoint.
template <typename T>
void col2im_add(const T* cols, const ConvDims& d, int n0, int n1, T* dX) {
    const int64_t ncols = static_cast<int64_t>(n1 - n0) * d.OHW;
    const bool par = parallel_enabled() && ncols * d.K2 > kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int g = 0; g < n1 - n0; ++g) {
        T* xs = dX + static_cast<size_t>(n0 + g) * d.C * d.H * d.W;
        for (int c = 0; c < d.C; ++c)
            for (int kh = 0; kh < d.KH; ++kh)
                for (int kw = 0; kw < d.KW; ++kw) {
                    const T* crow = cols +
                                    (static_cast<size_t>(c) * d.KH * d.KW + kh * d.KW + kw) * ncols +
                                    static_cast<size_t>(g) * d.OHW;
                    for (int oh = 0; oh < d.OH; ++oh) {
                        const int ih = oh * d.stride - d.pad + kh;
                        if (ih < 0 || ih >= d.H) continue;
                        const T* src = crow + static_cast<size_t>(oh) * d.OW;
                        T* dst = xs + (static_cast<size_t>(c) * d.H + ih) * d.W;
                        for (int ow = 0; ow < d.OW; ++ow) {
                            const int iw = ow * d.stride - d.pad + kw;
                            if (iw >= 0 && iw < d.W) dst[iw] += src[ow];
                        }
                    }
                }
    }
}

// Batch group sized so the cols buffer stays under ~256 MB.
inline int conv_group_size(const ConvDims& d, size_t elem_size) {
    const size_t per_sample = static_cast<size_t>(d.K2) * d.OHW * elem_size;
    const size_t budget = size_t(256) << 20;
    int g = per_sample ? static_cast<int>(budget / per_sample) : d.N;
    return std::max(1, std::min(g, d.N));
}

template <typename T>
void conv2d_forward(const Tensor<T>& X, const Tensor<T>& Wt, const Tensor<T>& b, int stride,
                    int pad, Tensor<T>& Y) {
    const ConvDims d = conv_dims(X.shape(), Wt.shape(), stride, pad);
    Y = Tensor<T>({d.N, d.F, d.OH, d.OW});
    const int G = conv_group_size(d, sizeof(T));
    std::vector<T> cols(static_cast<size_t>(d.K2) * G * d.OHW);
    std::vector<T> ymat(static_cast<size_t>(d.F) * G * d.OHW);
    for (int n0 = 0; n0 < d.N; n0 += G) {
        const int n1 = std::min(d.N, n0 + G);
        const int64_t ncols = static_cast<int64_t>(n1 - n0) * d.OHW;
        im2col(X.data(), d, n0, n1, cols.data());
        gemm(d.F, static_cast<int>(ncols), d.K2, Wt.data(), cols.data(), ymat.data(), false);
        const bool par = parallel_enabled() && ncols * d.F > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
        for (int g = 0; g < n1 - n0; ++g)
            for (int f = 0; f < d.F; ++f) {
                const T* src = ymat.data() + static_cast<size_t>(f) * ncols +
                               static_cast<size_t>(g) * d.OHW;
                T* dst = &Y.at(n0 + g, f, 0, 0);
                const T bias = b.empty() ? T(0) : b[f];
                for (int64_t p = 0; p < d.OHW; ++p) dst[p] = src[p] + bias;
            }
    }
}

/// Gradients of conv2d. dX may be null when the input needs no gradient.
template <typename T>
void conv2d_backward(const Tensor<T>& X, const Tensor<T>& Wt, const Tensor<T>& dY, int stride,
                     int pad, Tensor<T>* dX, Tensor<T>* dW, Tensor<T>* db) {
    const ConvDims d = conv_dims(X.shape(), Wt.shape(), stride, pad);
    const int G = conv_group_size(d, sizeof(T));
    std::vector<T> cols(static_cast<size_t>(d.K2) * G * d.OHW);
    std::vector<T> dymat(static_cast<size_t>(d.F) * G * d.OHW);
    std::vector<T> dcols;
    if (dX) dcols.resize(cols.size());
    for (int n0 = 0; n0 < d.N; n0 += G) {
        const int n1 = std::min(d.N, n0 + G);
        const int64_t ncols = static_cast<int64_t>(n1 - n0) * d.OHW;
        const bool par = parallel_enabled() && ncols * d.F > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
        for (int g = 0; g < n1 - n0; ++g)
            for (int f = 0; f < d.F; ++f) {
                const T* src = &dY.at(n0 + g, f, 0, 0);
                T* dst = dymat.data() + static_cast<size_t>(f) * ncols +
                         static_cast<size_t>(g) * d.OHW;
                std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(d.OHW));
            }
        if (dW || db) im2col(X.data(), d, n0, n1, cols.data());
        if (dW)
            gemm_nt(d.F, d.K2, static_cast<int>(ncols), dymat.data(), cols.data(), dW->data(),
                    true);
        if (db) {
            for (int f = 0; f < d.F; ++f) {
                const T* row = dymat.data() + static_cast<size_t>(f) * ncols;
                T s = 0;
                for (int64_t p = 0; p < ncols; ++p) s += row[p];
                (*db)[f] += s;
            }
        }
        if (dX) {
            gemm_tn(d.K2, static_cast<int>(ncols), d.F, Wt.data(), dymat.data(), dcols.data(),
                    false);
            col2im_add(dcols.data(), d, n0, n1, dX->data());
        }
    }
}

namespace ref {

/// Direct 7-loop convolution. Validates the im2col+GEMM path.
template <typename T>
void conv2d_naive(const Tensor<T>& X, const Tensor<T>& Wt, const Tensor<T>& b, int stride,
                  int pad, Tensor<T>& Y) {
    const ConvDims d = conv_dims(X.shape(), Wt.shape(), stride, pad);
    Y = Tensor<T>({d.N, d.F, d.OH, d.OW});
    for (int n = 0; n < d.N; ++n)
        for (int f = 0; f < d.F; ++f)
            for (int oh = 0; oh < d.OH; ++oh)
                for (int ow = 0; ow < d.OW; ++ow) {
                    T acc = b.empty() ? T(0) : b[f];
                    for (int c = 0; c < d.C; ++c)
                        for (int kh = 0; kh < d.KH; ++kh)
                            for (int kw = 0; kw < d.KW; ++kw) {
                                const int ih = oh * stride - pad + kh;
                                const int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= d.H || iw < 0 || iw >= d.W) continue;
                                acc += X.at(n, c, ih, iw) * Wt.at(f, c, kh, kw);
                            }
                    Y.at(n, f, oh, ow) = acc;
                }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// Pointwise and spatial ops
// ---------------------------------------------------------------------------

template <typename T>
void relu_forward(const Tensor<T>& X, Tensor<T>& Y) {
    Y = Tensor<T>(X.shape());
    const int64_t n = X.size();
    const bool par = parallel_enabled() && n > kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < n; ++i) Y[i] = X[i] > T(0) ? X[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& X, const Tensor<T>& dY, Tensor<T>& dX_acc) {
    const int64_t n = X.size();
    const bool par = parallel_enabled() && n > kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < n; ++i)
        if (X[i] > T(0)) dX_acc[i] += dY[i];
}

/// Per-(sample, channel) normalisation over spatial extent, with affine.
template <typename T>
void instance_norm_forward(const Tensor<T>& X, const Tensor<T>& gamma, const Tensor<T>& beta,
                           T eps, Tensor<T>& Y, Tensor<T>& mean, Tensor<T>& inv_std) {
    const int N = X.dim(0), C = X.dim(1);
    const int64_t S = static_cast<int64_t>(X.dim(2)) * X.dim(3);
    Y = Tensor<T>(X.shape());
    mean = Tensor<T>({N, C});
    inv_std = Tensor<T>({N, C});
    const bool par = parallel_enabled() && X.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* x = &X.at(n, c, 0, 0);
            T mu = 0;
            for (int64_t i = 0; i < S; ++i) mu += x[i];
            mu /= static_cast<T>(S);
            T var = 0;
            for (int64_t i = 0; i < S; ++i) var += (x[i] - mu) * (x[i] - mu);
            var /= static_cast<T>(S);
            const T inv = T(1) / std::sqrt(var + eps);
            mean[static_cast<int64_t>(n) * C + c] = mu;
            inv_std[static_cast<int64_t>(n) * C + c] = inv;
            const T g = gamma[c], bb = beta[c];
            T* y = &Y.at(n, c, 0, 0);
            for (int64_t i = 0; i < S; ++i) y[i] = g * (x[i] - mu) * inv + bb;
        }
}

template <typename T>
void instance_norm_backward(const Tensor<T>& X, const Tensor<T>& gamma, const Tensor<T>& mean,
                            const Tensor<T>& inv_std, const Tensor<T>& dY, Tensor<T>& dX_acc,
                            Tensor<T>& dgamma_acc, Tensor<T>& dbeta_acc) {
    const int N = X.dim(0), C = X.dim(1);
    const int64_t S = static_cast<int64_t>(X.dim(2)) * X.dim(3);
    // dgamma/dbeta accumulate across samples; keep that reduction serial in n.
    for (int n = 0; n < N; ++n) {
        const bool par = parallel_enabled() && C * S > kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
        for (int c = 0; c < C; ++c) {
            const T* x = &X.at(n, c, 0, 0);
            const T* dy = &dY.at(n, c, 0, 0);
            const T mu = mean[static_cast<int64_t>(n) * C + c];
            const T inv = inv_std[static_cast<int64_t>(n) * C + c];
            const T g = gamma[c];
            T sum_dy = 0, sum_dy_xhat = 0;
            for (int64_t i = 0; i < S; ++i) {
                const T xhat = (x[i] - mu) * inv;
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat;
            }
            dgamma_acc[c] += sum_dy_xhat;
            dbeta_acc[c] += sum_dy;
            T* dx = &dX_acc.at(n, c, 0, 0);
            const T invS = T(1) / static_cast<T>(S);
            for (int64_t i = 0; i < S; ++i) {
                const T xhat = (x[i] - mu) * inv;
                dx[i] += g * inv * (dy[i] - invS * sum_dy - xhat * invS * sum_dy_xhat);
            }
        }
    }
}

/// 2x2 max pooling, stride 2. Keeps argmax indices for the backward pass.
/// Ties resolve to the first element in scan order.
template <typename T>
void maxpool2x2_forward(const Tensor<T>& X, Tensor<T>& Y, std::vector<int32_t>& argmax) {
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const int OH = H / 2, OW = W / 2;
    Y = Tensor<T>({N, C, OH, OW});
    argmax.assign(static_cast<size_t>(Y.size()), 0);
    const bool par = parallel_enabled() && Y.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    int32_t bi = 0;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw) {
                            const int h = 2 * oh + dh, w = 2 * ow + dw;
                            const T v = X.at(n, c, h, w);
                            if (v > best) {
                                best = v;
                                bi = h * W + w;
                            }
                        }
                    Y.at(n, c, oh, ow) = best;
                    const int64_t oi =
                        ((static_cast<int64_t>(n) * C + c) * OH + oh) * OW + ow;
                    argmax[static_cast<size_t>(oi)] = bi;
                }
}

template <typename T>
void maxpool2x2_backward(const std::vector<int32_t>& argmax, const Tensor<T>& dY, int H, int W,
                         Tensor<T>& dX_acc) {
    const int N = dY.dim(0), C = dY.dim(1), OH = dY.dim(2), OW = dY.dim(3);
    const bool par = parallel_enabled() && dY.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* dx = &dX_acc.at(n, c, 0, 0);
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const int64_t oi =
                        ((static_cast<int64_t>(n) * C + c) * OH + oh) * OW + ow;
                    dx[argmax[static_cast<size_t>(oi)]] += dY.at(n, c, oh, ow);
                }
        }
    (void)H; (void)W;
}

template <typename T>
void upsample2x_forward(const Tensor<T>& X, Tensor<T>& Y) {
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Y = Tensor<T>({N, C, 2 * H, 2 * W});
    const bool par = parallel_enabled() && Y.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < 2 * H; ++h) {
                const T* src = &X.at(n, c, h / 2, 0);
                T* dst = &Y.at(n, c, h, 0);
                for (int w = 0; w < 2 * W; ++w) dst[w] = src[w / 2];
            }
}

template <typename T>
void upsample2x_backward(const Tensor<T>& dY, Tensor<T>& dX_acc) {
    const int N = dX_acc.dim(0), C = dX_acc.dim(1), H = dX_acc.dim(2), W = dX_acc.dim(3);
    const bool par = parallel_enabled() && dX_acc.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    T s = 0;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw) s += dY.at(n, c, 2 * h + dh, 2 * w + dw);
                    dX_acc.at(n, c, h, w) += s;
                }
}

// ---------------------------------------------------------------------------
// Landmark bottleneck kernels
// ---------------------------------------------------------------------------

/// Softmax-weighted grid centroid per channel: maps [N,K,H,W] -> coords [N,K,2]
/// as (row, col). Per-channel max subtraction keeps exp() in range.
template <typename T>
void softargmax_forward(const Tensor<T>& S, T beta, Tensor<T>& U, Tensor<T>& weights) {
    const int N = S.dim(0), K = S.dim(1), H = S.dim(2), W = S.dim(3);
    U = Tensor<T>({N, K, 2});
    weights = Tensor<T>(S.shape());
    const bool par = parallel_enabled() && S.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            const T* s = &S.at(n, k, 0, 0);
            T* w = &weights.at(n, k, 0, 0);
            const int64_t HW = static_cast<int64_t>(H) * W;
            T mx = s[0];
            for (int64_t i = 1; i < HW; ++i) mx = std::max(mx, s[i]);
            T z = 0;
            for (int64_t i = 0; i < HW; ++i) {
                w[i] = std::exp(beta * (s[i] - mx));
                z += w[i];
            }
            T ur = 0, uc = 0;
            for (int h = 0; h < H; ++h) {
                const T* wr = w + static_cast<int64_t>(h) * W;
                T rowsum = 0, colsum = 0;
                for (int x = 0; x < W; ++x) {
                    rowsum += wr[x];
                    colsum += wr[x] * static_cast<T>(x);
                }
                ur += rowsum * static_cast<T>(h);
                uc += colsum;
            }
            const T invz = T(1) / z;
            for (int64_t i = 0; i < HW; ++i) w[i] *= invz;  // keep normalized weights
            U[(static_cast<int64_t>(n) * K + k) * 2 + 0] = ur * invz;
            U[(static_cast<int64_t>(n) * K + k) * 2 + 1] = uc * invz;
        }
}

template <typename T>
void softargmax_backward(const Tensor<T>& weights, const Tensor<T>& U, T beta, const Tensor<T>& dU,
                         Tensor<T>& dS_acc) {
    const int N = weights.dim(0), K = weights.dim(1), H = weights.dim(2), W = weights.dim(3);
    const bool par = parallel_enabled() && weights.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            const T* w = &weights.at(n, k, 0, 0);
            T* ds = &dS_acc.at(n, k, 0, 0);
            const int64_t base = (static_cast<int64_t>(n) * K + k) * 2;
            const T ur = U[base + 0], uc = U[base + 1];
            const T dur = dU[base + 0], duc = dU[base + 1];
            for (int h = 0; h < H; ++h)
                for (int x = 0; x < W; ++x) {
                    const int64_t i = static_cast<int64_t>(h) * W + x;
                    ds[i] += beta * w[i] *
                             ((static_cast<T>(h) - ur) * dur + (static_cast<T>(x) - uc) * duc);
                }
        }
}

// ---------------------------------------------------------------------------
// Affine bilinear sampling (reflect-101 borders)
// ---------------------------------------------------------------------------

/// Mirror an integer index into [0, n-1] about the edge samples.
inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = i % period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

namespace ref {

/// out(x,y) = bilinear(img, a0+a1*x+a2*y, b0+b1*x+b2*y), channels-first.
template <typename T>
void warp_affine_bilinear(const Tensor<T>& img, const std::array<double, 6>& inv, Tensor<T>& out) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    out = Tensor<T>({C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double sx = inv[0] + inv[1] * x + inv[2] * y;
            const double sy = inv[3] + inv[4] * x + inv[5] * y;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double wx = sx - x0, wy = sy - y0;
            const int xa = reflect101(x0, W), xb = reflect101(x0 + 1, W);
            const int ya = reflect101(y0, H), yb = reflect101(y0 + 1, H);
            for (int c = 0; c < C; ++c) {
                const double v00 = img.at(c, ya, xa), v01 = img.at(c, ya, xb);
                const double v10 = img.at(c, yb, xa), v11 = img.at(c, yb, xb);
                out.at(c, y, x) = static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                                 wy * ((1 - wx) * v10 + wx * v11));
            }
        }
}

}  // namespace ref

template <typename T>
void warp_affine_bilinear(const Tensor<T>& img, const std::array<double, 6>& inv, Tensor<T>& out) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    out = Tensor<T>({C, H, W});
    const bool par = parallel_enabled() && img.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double sx = inv[0] + inv[1] * x + inv[2] * y;
            const double sy = inv[3] + inv[4] * x + inv[5] * y;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double wx = sx - x0, wy = sy - y0;
            const int xa = reflect101(x0, W), xb = reflect101(x0 + 1, W);
            const int ya = reflect101(y0, H), yb = reflect101(y0 + 1, H);
            for (int c = 0; c < C; ++c) {
                const double v00 = img.at(c, ya, xa), v01 = img.at(c, ya, xb);
                const double v10 = img.at(c, yb, xa), v11 = img.at(c, yb, xb);
                out.at(c, y, x) = static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                                 wy * ((1 - wx) * v10 + wx * v11));
            }
        }
}

/// Gaussian bump per landmark: coords [N,K,2] -> maps [N,K,H,W],
/// value exp(-||g - u||^2 / (2 sigma^2)).
template <typename T>
void gaussian_render_forward(const Tensor<T>& U, int H, int W, T sigma, Tensor<T>& Phi) {
    const int N = U.dim(0), K = U.dim(1);
    Phi = Tensor<T>({N, K, H, W});
    const T inv2s2 = T(1) / (T(2) * sigma * sigma);
    const bool par = parallel_enabled() && Phi.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            const int64_t base = (static_cast<int64_t>(n) * K + k) * 2;
            const T ur = U[base + 0], uc = U[base + 1];
            T* p = &Phi.at(n, k, 0, 0);
            for (int h = 0; h < H; ++h)
                for (int x = 0; x < W; ++x) {
                    const T dr = static_cast<T>(h) - ur;
                    const T dc = static_cast<T>(x) - uc;
                    p[static_cast<int64_t>(h) * W + x] = std::exp(-(dr * dr + dc * dc) * inv2s2);
                }
        }
}

template <typename T>
void gaussian_render_backward(const Tensor<T>& U, const Tensor<T>& Phi, T sigma,
                              const Tensor<T>& dPhi, Tensor<T>& dU_acc) {
    const int N = U.dim(0), K = U.dim(1), H = Phi.dim(2), W = Phi.dim(3);
    const T inv_s2 = T(1) / (sigma * sigma);
    const bool par = parallel_enabled() && Phi.size() > kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            const int64_t base = (static_cast<int64_t>(n) * K + k) * 2;
            const T ur = U[base + 0], uc = U[base + 1];
            const T* p = &Phi.at(n, k, 0, 0);
            const T* dp = &dPhi.at(n, k, 0, 0);
            T gr = 0, gc = 0;
            for (int h = 0; h < H; ++h)
                for (int x = 0; x < W; ++x) {
                    const int64_t i = static_cast<int64_t>(h) * W + x;
                    const T common = dp[i] * p[i] * inv_s2;
                    gr += common * (static_cast<T>(h) - ur);
                    gc += common * (static_cast<T>(x) - uc);
                }
            dU_acc[base + 0] += gr;
            dU_acc[base + 1] += gc;
        }
}

}  // namespace uld::kernels
