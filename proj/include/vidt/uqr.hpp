#pragma once

// Unified query representation: instance masks as truncated DCT coefficient
// vectors. Encoding transforms a square binary mask S via F = A S A^T with
// the orthonormal type-II DCT matrix A and keeps the first n coefficients in
// zigzag order; decoding zero-fills the rest and inverts exactly
// (A^-1 = A^T).
//
// Objects are encoded in their box-cropped frame and pasted back through the
// predicted box, so the vector length is independent of object scale.

#include "vidt/ops.hpp"

namespace vidt {

// Orthonormal type-II DCT matrix: A[j][i] = c_j cos(pi (2i+1) j / (2m)).
template <typename T>
Tensor<T> dct_matrix(i64 m) {
    Tensor<T> a({m, m});
    const double pi = 3.14159265358979323846;
    for (i64 j = 0; j < m; ++j) {
        const double cj = std::sqrt((j == 0 ? 1.0 : 2.0) / double(m));
        for (i64 i = 0; i < m; ++i)
            a.at(j, i) = T(cj * std::cos(pi * (2.0 * double(i) + 1.0) * double(j) /
                                         (2.0 * double(m))));
    }
    return a;
}

// Zigzag scan over an m x m grid starting at (0,0): linear indices in visit
// order, each cell exactly once.
inline std::vector<i64> zigzag_order(i64 m) {
    std::vector<i64> order;
    order.reserve(static_cast<size_t>(m * m));
    for (i64 s = 0; s <= 2 * (m - 1); ++s) {
        if (s % 2 == 0) {  // walk up-right
            for (i64 y = std::min(s, m - 1); y >= std::max<i64>(0, s - m + 1); --y)
                order.push_back(y * m + (s - y));
        } else {  // walk down-left
            for (i64 x = std::min(s, m - 1); x >= std::max<i64>(0, s - m + 1); --x)
                order.push_back((s - x) * m + x);
        }
    }
    return order;
}

struct MaskVector {
    std::vector<double> coefficients;  // zigzag order, low frequencies first
    i64 resolution = 64;               // side of the square source frame
};

// mask (m, m) with values in [0,1]; n coefficients kept.
template <typename T>
MaskVector dct_encode(const Tensor<T>& mask, i64 n) {
    if (mask.rank() != 2 || mask.shape()[0] != mask.shape()[1])
        shape_error("dct_encode expects a square mask, got " + shape_str(mask.shape()));
    const i64 m = mask.shape()[0];
    if (n > m * m)
        throw std::invalid_argument("dct_encode: n=" + std::to_string(n) +
                                    " exceeds mask capacity " + std::to_string(m * m));
    Tensor<T> a = dct_matrix<T>(m);
    Tensor<T> f = matmul(matmul(a, mask), transpose(a, {1, 0}));
    const auto order = zigzag_order(m);
    MaskVector v;
    v.resolution = m;
    v.coefficients.resize(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) v.coefficients[static_cast<size_t>(i)] = double(f[order[static_cast<size_t>(i)]]);
    return v;
}

// Inverse: zero-fill the unsampled coefficients and transform back. Returns
// the real-valued reconstruction; threshold at 0.5 for a binary mask.
template <typename T>
Tensor<T> dct_decode(const MaskVector& v) {
    const i64 m = v.resolution;
    Tensor<T> f({m, m});
    const auto order = zigzag_order(m);
    const i64 n = std::min<i64>(static_cast<i64>(v.coefficients.size()), m * m);
    for (i64 i = 0; i < n; ++i)
        f[order[static_cast<size_t>(i)]] = T(v.coefficients[static_cast<size_t>(i)]);
    Tensor<T> a = dct_matrix<T>(m);
    return matmul(matmul(transpose(a, {1, 0}), f), a);
}

template <typename T>
Tensor<T> threshold_mask(const Tensor<T>& real_mask, T thresh = T(0.5)) {
    Tensor<T> out(real_mask.shape());
    for (i64 i = 0; i < real_mask.numel(); ++i) out[i] = real_mask[i] >= thresh ? T(1) : T(0);
    return out;
}

namespace detail {

struct PixelBox {
    i64 x0, y0, w, h;
};

inline PixelBox box_to_pixels(const std::array<double, 4>& cxcywh, i64 img_h, i64 img_w) {
    const double cx = cxcywh[0] * double(img_w), cy = cxcywh[1] * double(img_h);
    const double bw = cxcywh[2] * double(img_w), bh = cxcywh[3] * double(img_h);
    i64 x0 = static_cast<i64>(std::floor(cx - bw / 2.0));
    i64 y0 = static_cast<i64>(std::floor(cy - bh / 2.0));
    i64 x1 = static_cast<i64>(std::ceil(cx + bw / 2.0));
    i64 y1 = static_cast<i64>(std::ceil(cy + bh / 2.0));
    x0 = std::clamp<i64>(x0, 0, img_w - 1);
    y0 = std::clamp<i64>(y0, 0, img_h - 1);
    x1 = std::clamp<i64>(x1, x0 + 1, img_w);
    y1 = std::clamp<i64>(y1, y0 + 1, img_h);
    return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace detail

// Crop a full-image mask to the object's box, resample to res x res
// (nearest) and encode n coefficients.
template <typename T>
MaskVector encode_object_mask(const Tensor<T>& full_mask, const std::array<double, 4>& box_cxcywh,
                              i64 res, i64 n) {
    const i64 img_h = full_mask.shape()[0], img_w = full_mask.shape()[1];
    const auto pb = detail::box_to_pixels(box_cxcywh, img_h, img_w);
    Tensor<T> crop({res, res});
    for (i64 y = 0; y < res; ++y) {
        const i64 sy = pb.y0 + std::min<i64>(pb.h - 1, y * pb.h / res);
        for (i64 x = 0; x < res; ++x) {
            const i64 sx = pb.x0 + std::min<i64>(pb.w - 1, x * pb.w / res);
            crop.at(y, x) = full_mask.at(sy, sx);
        }
    }
    return dct_encode(crop, n);
}

// Decode a predicted vector into the full image frame through its box.
template <typename T>
Tensor<T> paste_object_mask(const MaskVector& v, const std::array<double, 4>& box_cxcywh,
                            i64 img_h, i64 img_w, T thresh = T(0.5)) {
    Tensor<T> local = dct_decode<T>(v);
    const i64 res = v.resolution;
    const auto pb = detail::box_to_pixels(box_cxcywh, img_h, img_w);
    Tensor<T> full({img_h, img_w});
    for (i64 y = 0; y < pb.h; ++y) {
        const i64 sy = std::min<i64>(res - 1, y * res / pb.h);
        for (i64 x = 0; x < pb.w; ++x) {
            const i64 sx = std::min<i64>(res - 1, x * res / pb.w);
            if (local.at(sy, sx) >= thresh) full.at(pb.y0 + y, pb.x0 + x) = T(1);
        }
    }
    return full;
}

}  // namespace vidt
