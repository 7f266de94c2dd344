#pragma once

// Matrix, normalization, convolution and sampling kernels on Tensor<T>.

#include <random>

#include "vidt/tensor.hpp"

namespace vidt {

// ---------------------------------------------------------------------------
// Matrix multiplication
// ---------------------------------------------------------------------------

namespace detail {

// All matrix kernels run saxpy-style inner loops over contiguous rows: each
// output lane is independent, so the compiler can vectorize them without
// reassociating any reduction, and the summation order stays fixed.

// C(m,n) += A(m,k) * B(k,n). Register-blocked 2 output rows x 4 k-steps so
// every streamed span of B feeds eight accumulations; the evaluation order
// is fixed, keeping runs bit-reproducible.
template <typename T>
void mm_nn(const T* A, const T* B, T* __restrict C, i64 m, i64 k, i64 n) {
    const i64 k4 = k - k % 4;
    const i64 m2 = m - m % 2;
    for (i64 i = 0; i < m2; i += 2) {
        T* __restrict c0 = C + i * n;
        T* __restrict c1 = c0 + n;
        const T* a0r = A + i * k;
        const T* a1r = a0r + k;
        i64 p = 0;
        for (; p < k4; p += 4) {
            const T x0 = a0r[p], x1 = a0r[p + 1], x2 = a0r[p + 2], x3 = a0r[p + 3];
            const T y0 = a1r[p], y1 = a1r[p + 1], y2 = a1r[p + 2], y3 = a1r[p + 3];
            const T* b0 = B + p * n;
            const T* b1 = b0 + n;
            const T* b2 = b1 + n;
            const T* b3 = b2 + n;
#pragma GCC ivdep
            for (i64 j = 0; j < n; ++j) {
                c0[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
                c1[j] += y0 * b0[j] + y1 * b1[j] + y2 * b2[j] + y3 * b3[j];
            }
        }
        for (; p < k; ++p) {
            const T x = a0r[p], y = a1r[p];
            const T* b = B + p * n;
#pragma GCC ivdep
            for (i64 j = 0; j < n; ++j) {
                c0[j] += x * b[j];
                c1[j] += y * b[j];
            }
        }
    }
    if (m % 2) {
        const i64 i = m2;
        T* __restrict c = C + i * n;
        const T* a = A + i * k;
        for (i64 p = 0; p < k; ++p) {
            const T av = a[p];
            const T* b = B + p * n;
#pragma GCC ivdep
            for (i64 j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C(m,n) += A(k,m)^T * B(k,n), blocked like mm_nn (A is read down columns)
template <typename T>
void mm_tn(const T* A, const T* B, T* __restrict C, i64 m, i64 k, i64 n) {
    const i64 k4 = k - k % 4;
    const i64 m2 = m - m % 2;
    for (i64 i = 0; i < m2; i += 2) {
        T* __restrict c0 = C + i * n;
        T* __restrict c1 = c0 + n;
        i64 p = 0;
        for (; p < k4; p += 4) {
            const T x0 = A[p * m + i], x1 = A[(p + 1) * m + i];
            const T x2 = A[(p + 2) * m + i], x3 = A[(p + 3) * m + i];
            const T y0 = A[p * m + i + 1], y1 = A[(p + 1) * m + i + 1];
            const T y2 = A[(p + 2) * m + i + 1], y3 = A[(p + 3) * m + i + 1];
            const T* b0 = B + p * n;
            const T* b1 = b0 + n;
            const T* b2 = b1 + n;
            const T* b3 = b2 + n;
#pragma GCC ivdep
            for (i64 j = 0; j < n; ++j) {
                c0[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
                c1[j] += y0 * b0[j] + y1 * b1[j] + y2 * b2[j] + y3 * b3[j];
            }
        }
        for (; p < k; ++p) {
            const T x = A[p * m + i], y = A[p * m + i + 1];
            const T* b = B + p * n;
#pragma GCC ivdep
            for (i64 j = 0; j < n; ++j) {
                c0[j] += x * b[j];
                c1[j] += y * b[j];
            }
        }
    }
    if (m % 2) {
        const i64 i = m2;
        T* __restrict c = C + i * n;
        for (i64 p = 0; p < k; ++p) {
            const T av = A[p * m + i];
            const T* b = B + p * n;
#pragma GCC ivdep
            for (i64 j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// scratch (k, n) <- B(n, k)^T, reused so C += A * B^T can run through mm_nn
template <typename T>
void transpose_into(const T* B, T* __restrict out, i64 rows, i64 cols) {
    for (i64 r = 0; r < rows; ++r)
        for (i64 c = 0; c < cols; ++c) out[c * rows + r] = B[r * cols + c];
}

// C(m,n) += A(m,k) * B(n,k)^T
template <typename T>
void mm_nt(const T* A, const T* B, T* __restrict C, i64 m, i64 k, i64 n) {
    thread_local std::vector<T> scratch;
    scratch.resize(static_cast<size_t>(k * n));
    transpose_into(B, scratch.data(), n, k);
    mm_nn(A, scratch.data(), C, m, k, n);
}

}  // namespace detail

// Batched matrix product. Accepts (B..., m, k) x (B..., k, n) with identical
// leading dims, or a rank-2 rhs shared across the batch. Gradients flow to
// both inputs.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        shape_error("matmul needs rank>=2: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const i64 m = a.shape()[a.rank() - 2];
    const i64 k = a.shape()[a.rank() - 1];
    const i64 kb = b.shape()[b.rank() - 2];
    const i64 n = b.shape()[b.rank() - 1];
    if (k != kb)
        shape_error("matmul inner dims disagree: " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    const bool shared_b = b.rank() == 2 && a.rank() > 2;
    if (!shared_b && a.rank() != b.rank())
        shape_error("matmul batch rank mismatch: " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    Shape os(a.shape().begin(), a.shape().end() - 2);
    i64 batch = 1;
    for (size_t d = 0; d + 2 < a.shape().size(); ++d) {
        batch *= a.shape()[d];
        if (!shared_b && b.shape()[d] != a.shape()[d])
            shape_error("matmul batch dims disagree: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
    }
    os.push_back(m);
    os.push_back(n);
    Tensor<T> out(os);
    for (i64 bi = 0; bi < batch; ++bi)
        detail::mm_nn(a.data() + bi * m * k, b.data() + (shared_b ? 0 : bi * k * n),
                      out.data() + bi * m * n, m, k, n);
    if (tracing(a, b)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([a, b, out, batch, m, k, n, shared_b]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            if (a.requires_grad()) {
                T* ga = a.grad();
                for (i64 bi = 0; bi < batch; ++bi)
                    detail::mm_nt(go + bi * m * n, b.data() + (shared_b ? 0 : bi * k * n),
                                  ga + bi * m * k, m, n, k);
            }
            if (b.requires_grad()) {
                T* gb = b.grad();
                for (i64 bi = 0; bi < batch; ++bi)
                    detail::mm_tn(a.data() + bi * m * k, go + bi * m * n,
                                  gb + (shared_b ? 0 : bi * k * n), k, m, n);
            }
        });
    }
    return out;
}

// Fused affine map: x(..., in) * w(in, out) + bias(out); bias optional.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
    const i64 in = w.shape()[0], out_dim = w.shape()[1];
    if (x.shape().back() != in)
        shape_error("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    const i64 rows = x.numel() / in;
    Shape os = x.shape();
    os.back() = out_dim;
    Tensor<T> out(os);
    if (bias.defined()) {
        T* ov = out.data();
        const T* bv = bias.data();
        for (i64 r = 0; r < rows; ++r) std::copy(bv, bv + out_dim, ov + r * out_dim);
    }
    detail::mm_nn(x.data(), w.data(), out.data(), rows, in, out_dim);
    const bool rg =
        x.requires_grad() || w.requires_grad() || (bias.defined() && bias.requires_grad());
    if (active_tape<T>() && rg) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, w, bias, out, rows, in, out_dim]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            if (x.requires_grad()) detail::mm_nt(go, w.data(), x.grad(), rows, out_dim, in);
            if (w.requires_grad()) detail::mm_tn(x.data(), go, w.grad(), in, rows, out_dim);
            if (bias.defined() && bias.requires_grad()) {
                T* gb = bias.grad();
                for (i64 r = 0; r < rows; ++r) {
                    const T* g = go + r * out_dim;
#pragma GCC ivdep
                    for (i64 j = 0; j < out_dim; ++j) gb[j] += g[j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    i64 outer, mid, inner;
    detail::split_axis(x.shape(), axis, outer, mid, inner);
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* yv = out.data();
    for (i64 o = 0; o < outer; ++o)
        for (i64 in = 0; in < inner; ++in) {
            const i64 base = o * mid * inner + in;
            T mx = xv[base];
            for (i64 m = 1; m < mid; ++m) mx = std::max(mx, xv[base + m * inner]);
            T den = T(0);
            for (i64 m = 0; m < mid; ++m) {
                const T e = std::exp(xv[base + m * inner] - mx);
                yv[base + m * inner] = e;
                den += e;
            }
            const T inv = T(1) / den;
            for (i64 m = 0; m < mid; ++m) yv[base + m * inner] *= inv;
        }
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, outer, mid, inner]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            const T* yv2 = out.data();
            T* gx = x.grad();
            for (i64 o = 0; o < outer; ++o)
                for (i64 in = 0; in < inner; ++in) {
                    const i64 base = o * mid * inner + in;
                    T dot = T(0);
                    for (i64 m = 0; m < mid; ++m) dot += go[base + m * inner] * yv2[base + m * inner];
                    for (i64 m = 0; m < mid; ++m)
                        gx[base + m * inner] += yv2[base + m * inner] * (go[base + m * inner] - dot);
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
    i64 outer, mid, inner;
    detail::split_axis(x.shape(), axis, outer, mid, inner);
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* yv = out.data();
    for (i64 o = 0; o < outer; ++o)
        for (i64 in = 0; in < inner; ++in) {
            const i64 base = o * mid * inner + in;
            T mx = xv[base];
            for (i64 m = 1; m < mid; ++m) mx = std::max(mx, xv[base + m * inner]);
            T den = T(0);
            for (i64 m = 0; m < mid; ++m) den += std::exp(xv[base + m * inner] - mx);
            const T lse = mx + std::log(den);
            for (i64 m = 0; m < mid; ++m) yv[base + m * inner] = xv[base + m * inner] - lse;
        }
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, outer, mid, inner]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            const T* yv2 = out.data();
            T* gx = x.grad();
            for (i64 o = 0; o < outer; ++o)
                for (i64 in = 0; in < inner; ++in) {
                    const i64 base = o * mid * inner + in;
                    T gsum = T(0);
                    for (i64 m = 0; m < mid; ++m) gsum += go[base + m * inner];
                    for (i64 m = 0; m < mid; ++m)
                        gx[base + m * inner] +=
                            go[base + m * inner] - std::exp(yv2[base + m * inner]) * gsum;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension
// ---------------------------------------------------------------------------

// gamma/beta may be undefined for a plain normalization.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const i64 cols = x.shape().back();
    const i64 rows = x.numel() / cols;
    if (gamma.defined() && gamma.numel() != cols)
        shape_error("layer_norm gamma " + shape_str(gamma.shape()) + " vs cols " +
                    std::to_string(cols));
    if (beta.defined() && beta.numel() != cols)
        shape_error("layer_norm beta " + shape_str(beta.shape()) + " vs cols " + std::to_string(cols));
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const T* xv = x.data();
    T* yv = out.data();
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = xv + r * cols;
        T mu = T(0);
        for (i64 c = 0; c < cols; ++c) mu += xr[c];
        mu /= T(cols);
        T var = T(0);
        for (i64 c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= T(cols);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[static_cast<size_t>(r)] = rs;
        for (i64 c = 0; c < cols; ++c) {
            const T h = (xr[c] - mu) * rs;
            (*xhat)[static_cast<size_t>(r * cols + c)] = h;
            yv[r * cols + c] =
                (gamma.defined() ? gamma[c] : T(1)) * h + (beta.defined() ? beta[c] : T(0));
        }
    }
    const bool rg =
        x.requires_grad() || (gamma.defined() && gamma.requires_grad()) ||
        (beta.defined() && beta.requires_grad());
    if (active_tape<T>() && rg) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, gamma, beta, out, xhat, rstd, rows, cols]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            if (gamma.defined() && gamma.requires_grad()) {
                T* gg = gamma.grad();
                for (i64 r = 0; r < rows; ++r)
                    for (i64 c = 0; c < cols; ++c)
                        gg[c] += go[r * cols + c] * (*xhat)[static_cast<size_t>(r * cols + c)];
            }
            if (beta.defined() && beta.requires_grad()) {
                T* gb = beta.grad();
                for (i64 r = 0; r < rows; ++r)
                    for (i64 c = 0; c < cols; ++c) gb[c] += go[r * cols + c];
            }
            if (x.requires_grad()) {
                T* gx = x.grad();
                for (i64 r = 0; r < rows; ++r) {
                    const T rs = (*rstd)[static_cast<size_t>(r)];
                    T gmean = T(0), gdot = T(0);
                    for (i64 c = 0; c < cols; ++c) {
                        const T gh = go[r * cols + c] * (gamma.defined() ? gamma[c] : T(1));
                        gmean += gh;
                        gdot += gh * (*xhat)[static_cast<size_t>(r * cols + c)];
                    }
                    gmean /= T(cols);
                    gdot /= T(cols);
                    for (i64 c = 0; c < cols; ++c) {
                        const T gh = go[r * cols + c] * (gamma.defined() ? gamma[c] : T(1));
                        gx[r * cols + c] +=
                            rs * (gh - gmean - (*xhat)[static_cast<size_t>(r * cols + c)] * gdot);
                    }
                }
            }
        });
    }
    return out;
}

// Group normalization over an (H, W, C) map; statistics are computed per
// channel group across all spatial positions.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (x.rank() != 3) shape_error("group_norm expects (H,W,C), got " + shape_str(x.shape()));
    const i64 c = x.shape()[2];
    if (c % groups != 0) shape_error("group_norm channels not divisible by groups");
    const i64 h = x.shape()[0], w = x.shape()[1], gc = c / groups;
    // (H,W,C) -> (C,H,W) -> (groups, gc*H*W): one group per row
    Tensor<T> t = transpose(x, {2, 0, 1});
    Tensor<T> rowed = reshape(t, {groups, gc * h * w});
    Tensor<T> normed = layer_norm(rowed, Tensor<T>{}, Tensor<T>{}, eps);
    Tensor<T> back = transpose(reshape(normed, {c, h, w}), {1, 2, 0});
    return add(mul(back, gamma), beta);
}

// ---------------------------------------------------------------------------
// Convolution (1x1 or 3x3, stride 1, same padding, HWC layout)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias = {}) {
    if (x.rank() != 3 || kernel.rank() != 4)
        shape_error("conv2d expects x(H,W,Cin) and kernel(kh,kw,Cin,Cout)");
    const i64 h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
    const i64 kh = kernel.shape()[0], kw = kernel.shape()[1];
    const i64 cout = kernel.shape()[3];
    if (kernel.shape()[2] != cin)
        shape_error("conv2d channel mismatch: " + shape_str(x.shape()) + " vs " +
                    shape_str(kernel.shape()));
    if (!((kh == 1 && kw == 1) || (kh == 3 && kw == 3)))
        throw std::invalid_argument("conv2d: unsupported kernel size " + std::to_string(kh) + "x" +
                                    std::to_string(kw) + " (only 1x1 and 3x3)");
    const i64 pad = kh / 2;
    Tensor<T> out({h, w, cout});
    const T* xv = x.data();
    const T* kv = kernel.data();
    T* ov = out.data();
    for (i64 y = 0; y < h; ++y)
        for (i64 xx = 0; xx < w; ++xx) {
            T* o = ov + (y * w + xx) * cout;
            if (bias.defined())
                for (i64 co = 0; co < cout; ++co) o[co] = bias[co];
            for (i64 ky = 0; ky < kh; ++ky) {
                const i64 sy = y + ky - pad;
                if (sy < 0 || sy >= h) continue;
                for (i64 kx = 0; kx < kw; ++kx) {
                    const i64 sx = xx + kx - pad;
                    if (sx < 0 || sx >= w) continue;
                    const T* xp = xv + (sy * w + sx) * cin;
                    const T* kp = kv + (ky * kw + kx) * cin * cout;
                    for (i64 ci = 0; ci < cin; ++ci) {
                        const T xvv = xp[ci];
                        const T* kr = kp + ci * cout;
                        for (i64 co = 0; co < cout; ++co) o[co] += xvv * kr[co];
                    }
                }
            }
        }
    const bool rg = x.requires_grad() || kernel.requires_grad() ||
                    (bias.defined() && bias.requires_grad());
    if (active_tape<T>() && rg) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, kernel, bias, out, h, w, cin, cout, kh, kw, pad]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            if (bias.defined() && bias.requires_grad()) {
                T* gb = bias.grad();
                for (i64 i = 0; i < h * w; ++i)
                    for (i64 co = 0; co < cout; ++co) gb[co] += go[i * cout + co];
            }
            const T* xv2 = x.data();
            const T* kv2 = kernel.data();
            T* gx = x.requires_grad() ? x.grad() : nullptr;
            T* gk = kernel.requires_grad() ? kernel.grad() : nullptr;
            for (i64 y = 0; y < h; ++y)
                for (i64 xx = 0; xx < w; ++xx) {
                    const T* g = go + (y * w + xx) * cout;
                    for (i64 ky = 0; ky < kh; ++ky) {
                        const i64 sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        for (i64 kx = 0; kx < kw; ++kx) {
                            const i64 sx = xx + kx - pad;
                            if (sx < 0 || sx >= w) continue;
                            const i64 xoff = (sy * w + sx) * cin;
                            const i64 koff = (ky * kw + kx) * cin * cout;
                            for (i64 ci = 0; ci < cin; ++ci) {
                                T gsum = T(0);
                                const T* kr = kv2 + koff + ci * cout;
                                if (gk) {
                                    const T xvv = xv2[xoff + ci];
                                    T* kg = gk + koff + ci * cout;
                                    for (i64 co = 0; co < cout; ++co) {
                                        kg[co] += xvv * g[co];
                                        gsum += kr[co] * g[co];
                                    }
                                } else {
                                    for (i64 co = 0; co < cout; ++co) gsum += kr[co] * g[co];
                                }
                                if (gx) gx[xoff + ci] += gsum;
                            }
                        }
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear sampling (zero padding outside the map)
// ---------------------------------------------------------------------------

namespace detail {

// Weighted contributions of the four neighbours of fractional (px, py) on an
// h x w grid; cells outside the grid read as zero.
struct BilinearCell {
    i64 ix[4];
    i64 iy[4];
    double wt[4];
    double dwx[4];  // d wt / d px
    double dwy[4];  // d wt / d py
};

inline BilinearCell bilinear_cell(double px, double py, i64 h, i64 w) {
    BilinearCell c;
    const double fx = std::floor(px), fy = std::floor(py);
    const i64 x0 = static_cast<i64>(fx), y0 = static_cast<i64>(fy);
    const double ax = px - fx, ay = py - fy;
    const i64 xs[2] = {x0, x0 + 1};
    const i64 ys[2] = {y0, y0 + 1};
    const double wx[2] = {1.0 - ax, ax};
    const double wy[2] = {1.0 - ay, ay};
    const double dx[2] = {-1.0, 1.0};
    const double dy[2] = {-1.0, 1.0};
    int k = 0;
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
            const bool inb = xs[i] >= 0 && xs[i] < w && ys[j] >= 0 && ys[j] < h;
            c.ix[k] = inb ? xs[i] : -1;
            c.iy[k] = inb ? ys[j] : -1;
            c.wt[k] = wy[j] * wx[i];
            c.dwx[k] = wy[j] * dx[i];
            c.dwy[k] = dy[j] * wx[i];
            ++k;
        }
    return c;
}

}  // namespace detail

// map (H,W,C), points (N,2) as (x,y) in pixel coordinates; integer (x,y)
// reads map[y][x] exactly. Differentiable in both the map values and the
// point coordinates.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& points) {
    if (map.rank() != 3 || points.rank() != 2 || points.shape()[1] != 2)
        shape_error("bilinear_sample expects map(H,W,C), points(N,2)");
    const i64 h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
    const i64 n = points.shape()[0];
    Tensor<T> out({n, c});
    const T* mv = map.data();
    const T* pv = points.data();
    T* ov = out.data();
    for (i64 i = 0; i < n; ++i) {
        const auto cell = detail::bilinear_cell(double(pv[i * 2]), double(pv[i * 2 + 1]), h, w);
        T* o = ov + i * c;
        for (int q = 0; q < 4; ++q) {
            if (cell.ix[q] < 0) continue;
            const T* src = mv + (cell.iy[q] * w + cell.ix[q]) * c;
            const T wt = T(cell.wt[q]);
            for (i64 ch = 0; ch < c; ++ch) o[ch] += wt * src[ch];
        }
    }
    if (tracing(map, points)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([map, points, out, h, w, c, n]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            const T* mv2 = map.data();
            const T* pv2 = points.data();
            T* gm = map.requires_grad() ? map.grad() : nullptr;
            T* gp = points.requires_grad() ? points.grad() : nullptr;
            for (i64 i = 0; i < n; ++i) {
                const auto cell =
                    detail::bilinear_cell(double(pv2[i * 2]), double(pv2[i * 2 + 1]), h, w);
                const T* g = go + i * c;
                double gx = 0.0, gy = 0.0;
                for (int q = 0; q < 4; ++q) {
                    if (cell.ix[q] < 0) continue;
                    const i64 off = (cell.iy[q] * w + cell.ix[q]) * c;
                    if (gm) {
                        const T wt = T(cell.wt[q]);
                        for (i64 ch = 0; ch < c; ++ch) gm[off + ch] += wt * g[ch];
                    }
                    if (gp) {
                        double dot = 0.0;
                        for (i64 ch = 0; ch < c; ++ch) dot += double(mv2[off + ch]) * double(g[ch]);
                        gx += cell.dwx[q] * dot;
                        gy += cell.dwy[q] * dot;
                    }
                }
                if (gp) {
                    gp[i * 2] += T(gx);
                    gp[i * 2 + 1] += T(gy);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2D resize (HWC), edge-clamped
// ---------------------------------------------------------------------------

namespace detail {
inline double resize_src(i64 o, i64 in_size, i64 out_size) {
    return (double(o) + 0.5) * double(in_size) / double(out_size) - 0.5;
}
}  // namespace detail

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, i64 oh, i64 ow) {
    if (x.rank() != 3) shape_error("resize_bilinear expects (H,W,C)");
    const i64 h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
    Tensor<T> out({oh, ow, c});
    // Precompute the per-output-cell source taps once; clamping to the edge
    // makes every tap in-bounds.
    auto taps = std::make_shared<std::vector<std::array<i64, 4>>>();
    auto wts = std::make_shared<std::vector<std::array<double, 4>>>();
    taps->reserve(static_cast<size_t>(oh * ow));
    wts->reserve(static_cast<size_t>(oh * ow));
    for (i64 oy = 0; oy < oh; ++oy) {
        const double sy = detail::resize_src(oy, h, oh);
        const i64 y0 = std::clamp<i64>(static_cast<i64>(std::floor(sy)), 0, h - 1);
        const i64 y1 = std::min<i64>(y0 + 1, h - 1);
        const double ay = std::clamp(sy - std::floor(sy), 0.0, 1.0);
        for (i64 ox = 0; ox < ow; ++ox) {
            const double sx = detail::resize_src(ox, w, ow);
            const i64 x0 = std::clamp<i64>(static_cast<i64>(std::floor(sx)), 0, w - 1);
            const i64 x1 = std::min<i64>(x0 + 1, w - 1);
            const double ax = std::clamp(sx - std::floor(sx), 0.0, 1.0);
            taps->push_back({(y0 * w + x0) * c, (y0 * w + x1) * c, (y1 * w + x0) * c,
                             (y1 * w + x1) * c});
            wts->push_back({(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax});
        }
    }
    const T* xv = x.data();
    T* ov = out.data();
    for (i64 i = 0; i < oh * ow; ++i) {
        const auto& tp = (*taps)[static_cast<size_t>(i)];
        const auto& wt = (*wts)[static_cast<size_t>(i)];
        T* o = ov + i * c;
        for (i64 ch = 0; ch < c; ++ch)
            o[ch] = T(wt[0]) * xv[tp[0] + ch] + T(wt[1]) * xv[tp[1] + ch] +
                    T(wt[2]) * xv[tp[2] + ch] + T(wt[3]) * xv[tp[3] + ch];
    }
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, taps, wts, oh, ow, c]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            T* gx = x.grad();
            for (i64 i = 0; i < oh * ow; ++i) {
                const auto& tp = (*taps)[static_cast<size_t>(i)];
                const auto& wt = (*wts)[static_cast<size_t>(i)];
                const T* g = go + i * c;
                for (int q = 0; q < 4; ++q)
                    for (i64 ch = 0; ch < c; ++ch) gx[tp[q] + ch] += T(wt[q]) * g[ch];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, i64 oh, i64 ow) {
    if (x.rank() != 3) shape_error("resize_nearest expects (H,W,C)");
    const i64 h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
    auto idx = detail::cached_index("resize_nearest", {h, w, c, oh, ow}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(oh * ow * c));
        for (i64 oy = 0; oy < oh; ++oy) {
            const i64 sy = std::clamp<i64>(
                static_cast<i64>(std::floor(detail::resize_src(oy, h, oh) + 0.5)), 0, h - 1);
            for (i64 ox = 0; ox < ow; ++ox) {
                const i64 sx = std::clamp<i64>(
                    static_cast<i64>(std::floor(detail::resize_src(ox, w, ow) + 0.5)), 0, w - 1);
                for (i64 ch = 0; ch < c; ++ch) v.push_back((sy * w + sx) * c + ch);
            }
        }
    });
    return gather_linear(x, {oh, ow, c}, idx);
}

// ---------------------------------------------------------------------------
// Fused multi-scale deformable sampling for one feature level
// ---------------------------------------------------------------------------

// value  (H, W, M*dh)  per-head channel blocks
// points (D, M, K, 2)  pixel coordinates on this level, (x, y)
// weight (D, M, K)     per-point mixing weights
// out    (D, M*dh)     out[q, m*dh+c] = sum_k weight[q,m,k] * value(points[q,m,k])[m*dh+c]
//
// Gradients flow to value, points and weight.
template <typename T>
Tensor<T> deform_sample_level(const Tensor<T>& value, const Tensor<T>& points,
                              const Tensor<T>& weight, int heads) {
    if (value.rank() != 3 || points.rank() != 4 || weight.rank() != 3)
        shape_error("deform_sample_level expects value(H,W,C), points(D,M,K,2), weight(D,M,K)");
    const i64 h = value.shape()[0], w = value.shape()[1], c = value.shape()[2];
    const i64 dq = points.shape()[0], m = points.shape()[1], k = points.shape()[2];
    if (m != heads || weight.shape()[0] != dq || weight.shape()[1] != m || weight.shape()[2] != k)
        shape_error("deform_sample_level head/point dims disagree");
    if (c % m != 0) shape_error("deform_sample_level channels not divisible by heads");
    const i64 dh = c / m;
    Tensor<T> out({dq, c});
    const T* vv = value.data();
    const T* pv = points.data();
    const T* wv = weight.data();
    T* ov = out.data();
    for (i64 q = 0; q < dq; ++q)
        for (i64 hd = 0; hd < m; ++hd) {
            T* o = ov + q * c + hd * dh;
            for (i64 p = 0; p < k; ++p) {
                const i64 poff = ((q * m + hd) * k + p) * 2;
                const T wt = wv[(q * m + hd) * k + p];
                const auto cell = detail::bilinear_cell(double(pv[poff]), double(pv[poff + 1]), h, w);
                for (int t = 0; t < 4; ++t) {
                    if (cell.ix[t] < 0) continue;
                    const T* src = vv + (cell.iy[t] * w + cell.ix[t]) * c + hd * dh;
                    const T cw = wt * T(cell.wt[t]);
                    for (i64 ch = 0; ch < dh; ++ch) o[ch] += cw * src[ch];
                }
            }
        }
    const bool rg = value.requires_grad() || points.requires_grad() || weight.requires_grad();
    if (active_tape<T>() && rg) {
        out.set_requires_grad(true);
        active_tape<T>()->record([value, points, weight, out, h, w, c, dq, m, k, dh]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            const T* vv2 = value.data();
            const T* pv2 = points.data();
            const T* wv2 = weight.data();
            T* gv = value.requires_grad() ? value.grad() : nullptr;
            T* gp = points.requires_grad() ? points.grad() : nullptr;
            T* gw = weight.requires_grad() ? weight.grad() : nullptr;
            for (i64 q = 0; q < dq; ++q)
                for (i64 hd = 0; hd < m; ++hd) {
                    const T* g = go + q * c + hd * dh;
                    for (i64 p = 0; p < k; ++p) {
                        const i64 widx = (q * m + hd) * k + p;
                        const i64 poff = widx * 2;
                        const T wt = wv2[widx];
                        const auto cell =
                            detail::bilinear_cell(double(pv2[poff]), double(pv2[poff + 1]), h, w);
                        double gx = 0.0, gy = 0.0, gwt = 0.0;
                        for (int t = 0; t < 4; ++t) {
                            if (cell.ix[t] < 0) continue;
                            const i64 off = (cell.iy[t] * w + cell.ix[t]) * c + hd * dh;
                            double dot = 0.0;
                            for (i64 ch = 0; ch < dh; ++ch)
                                dot += double(vv2[off + ch]) * double(g[ch]);
                            gwt += cell.wt[t] * dot;
                            gx += double(wt) * cell.dwx[t] * dot;
                            gy += double(wt) * cell.dwy[t] * dot;
                            if (gv) {
                                const T cw = wt * T(cell.wt[t]);
                                for (i64 ch = 0; ch < dh; ++ch) gv[off + ch] += cw * g[ch];
                            }
                        }
                        if (gp) {
                            gp[poff] += T(gx);
                            gp[poff + 1] += T(gy);
                        }
                        if (gw) gw[widx] += T(gwt);
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Constant builders
// ---------------------------------------------------------------------------

// DETR-style 2D sinusoidal encoding table of shape (h, w, d): the first d/2
// channels encode y, the rest x, with sin on even and cos on odd channels.
template <typename T>
Tensor<T> sinusoidal_encoding_2d(i64 h, i64 w, i64 d, double temperature = 10000.0) {
    if (d % 2 != 0) shape_error("sinusoidal encoding needs even dim");
    const i64 half = d / 2;
    constexpr double two_pi = 6.283185307179586477;
    Tensor<T> out({h, w, d});
    std::vector<double> dim_t(static_cast<size_t>(half));
    for (i64 i = 0; i < half; ++i)
        dim_t[static_cast<size_t>(i)] = std::pow(temperature, 2.0 * double(i / 2) / double(half));
    T* ov = out.data();
    for (i64 y = 0; y < h; ++y) {
        const double ye = (double(y) + 1.0) / double(h) * two_pi;
        for (i64 x = 0; x < w; ++x) {
            const double xe = (double(x) + 1.0) / double(w) * two_pi;
            T* o = ov + (y * w + x) * d;
            for (i64 i = 0; i < half; ++i) {
                const double vy = ye / dim_t[static_cast<size_t>(i)];
                const double vx = xe / dim_t[static_cast<size_t>(i)];
                o[i] = T(i % 2 == 0 ? std::sin(vy) : std::cos(vy));
                o[half + i] = T(i % 2 == 0 ? std::sin(vx) : std::cos(vx));
            }
        }
    }
    return out;
}

// Seeded inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng) {
    Tensor<T> mask(shape, T(1));
    if (p <= 0.0) return mask;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const T keep = T(1.0 / (1.0 - p));
    T* mv = mask.data();
    const i64 n = mask.numel();
    for (i64 i = 0; i < n; ++i) mv[i] = uni(rng) < p ? T(0) : keep;
    return mask;
}

// Training-mode dropout; identity when training=false or p=0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::mt19937_64& rng) {
    if (!training || p <= 0.0) return x;
    return mul(x, dropout_mask<T>(x.shape(), p, rng));
}

}  // namespace vidt
