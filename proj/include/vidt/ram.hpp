#pragma once

// Reconfigured attention: the three decomposed operations over PATCH and
// DET tokens with one shared projection set per block.
//
//   - PATCH x PATCH: windowed local self-attention with relative position
//     bias (shifted windows handled by the caller via cyclic roll + mask).
//   - DET x DET: global self-attention over the fixed DET set, learnable
//     positional encoding on queries/keys.
//   - bound DET x [DET, PATCH]: one softmax over the concatenated keys and
//     values; replaces the separate DET self- and cross-attention wherever
//     cross-attention is enabled.
//
// Executed kernels report their MAC counts to the active FlopLedger.

#include <optional>

#include "vidt/flops.hpp"
#include "vidt/nn.hpp"
#include "vidt/ops.hpp"

namespace vidt {

constexpr double kMaskedLogit = -1e9;
// Logit clip applied in single precision only; double-precision runs stay
// exact for the oracle comparisons.
constexpr double kLogitClip = 50.0;

enum class SpatialMode { None, PreAddition, PostAddition };
enum class SpatialKind { Sinusoidal, Learnable };

struct SpatialPolicy {
    SpatialMode mode = SpatialMode::PreAddition;
    SpatialKind kind = SpatialKind::Sinusoidal;
};

inline SpatialPolicy spatial_policy_from_string(const std::string& s) {
    if (s == "none") return {SpatialMode::None, SpatialKind::Sinusoidal};
    if (s == "pre_sin") return {SpatialMode::PreAddition, SpatialKind::Sinusoidal};
    if (s == "pre_learn") return {SpatialMode::PreAddition, SpatialKind::Learnable};
    if (s == "post_sin") return {SpatialMode::PostAddition, SpatialKind::Sinusoidal};
    if (s == "post_learn") return {SpatialMode::PostAddition, SpatialKind::Learnable};
    throw std::invalid_argument("unknown spatial encoding policy '" + s +
                                "' (none, pre_sin, pre_learn, post_sin, post_learn)");
}

inline std::string spatial_policy_to_string(const SpatialPolicy& p) {
    if (p.mode == SpatialMode::None) return "none";
    const std::string kind = p.kind == SpatialKind::Sinusoidal ? "sin" : "learn";
    return (p.mode == SpatialMode::PreAddition ? "pre_" : "post_") + kind;
}

// One shared Q/K/V/out projection set; both token kinds go through it.
template <typename T>
struct RamProjections {
    LinearLayer<T> q, k, v, out;
    i64 dim = 0;
    int heads = 1;

    void init(i64 d, int nh, std::mt19937_64& rng) {
        dim = d;
        heads = nh;
        q.init(d, d, rng);
        k.init(d, d, rng);
        v.init(d, d, rng);
        out.init(d, d, rng);
    }

    void collect(const std::string& prefix, ParamSet<T>& out_set) {
        q.collect(prefix + ".q", out_set);
        k.collect(prefix + ".k", out_set);
        v.collect(prefix + ".v", out_set);
        out.collect(prefix + ".out", out_set);
    }

    i64 numel() const { return q.numel() + k.numel() + v.numel() + out.numel(); }
};

namespace detail {

// (B, Tn, d) -> (B, nh, Tn, dh)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int nh) {
    const i64 b = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
    return transpose(reshape(x, {b, t, nh, d / nh}), {0, 2, 1, 3});
}

// (B, nh, Tn, dh) -> (B, Tn, d)
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    const i64 b = x.shape()[0], nh = x.shape()[1], t = x.shape()[2], dh = x.shape()[3];
    return reshape(transpose(x, {0, 2, 1, 3}), {b, t, nh * dh});
}

}  // namespace detail

// Scaled dot-product attention over pre-projected embeddings.
// q_in (B, Tq, d); k_in/v_in (B, Tk, d). `bias` is added to the logits and
// must broadcast against (B, nh, Tq, Tk) from the trailing dimensions
// (e.g. (nh,Tq,Tk) relative bias or (Tk) key mask). Returns (B, Tq, d);
// `attn_out` receives the softmax weights when non-null.
template <typename T>
Tensor<T> multi_head_attention(const RamProjections<T>& proj, const Tensor<T>& q_in,
                               const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const Tensor<T>& bias = {}, Tensor<T>* attn_out = nullptr) {
    const int nh = proj.heads;
    const i64 d = proj.dim;
    const i64 dh = d / nh;
    Tensor<T> q = detail::split_heads(proj.q(q_in), nh);
    Tensor<T> k = detail::split_heads(proj.k(k_in), nh);
    Tensor<T> v = detail::split_heads(proj.v(v_in), nh);
    Tensor<T> logits = scale(matmul(q, transpose(k, {0, 1, 3, 2})), T(1) / T(std::sqrt(double(dh))));
    if constexpr (std::is_same_v<T, float>) logits = clamp(logits, T(-kLogitClip), T(kLogitClip));
    if (bias.defined()) logits = add(logits, bias);
    Tensor<T> attn = softmax(logits, -1);
    if (attn_out) *attn_out = attn.detach();
    return proj.out(detail::merge_heads(matmul(attn, v)));
}

// MAC accounting for one multi-head attention with distinct query/key sets:
//   projections: (q_tokens + 2*k_tokens + q_tokens) * d^2
//   logits + weighted values: 2 * q_tokens * k_tokens * d
inline std::uint64_t attention_macs(std::uint64_t q_tokens, std::uint64_t k_tokens,
                                    std::uint64_t d) {
    return 2 * q_tokens * d * d + 2 * k_tokens * d * d + 2 * q_tokens * k_tokens * d;
}

// ---------------------------------------------------------------------------
// Relative position bias for windowed attention
// ---------------------------------------------------------------------------

// Index of each in-window token pair (i, j) into the (2k-1)^2 offset table.
inline std::shared_ptr<const std::vector<i64>> relative_index_table(int k) {
    return detail::cached_index("relpos_pairs", {k}, [&](std::vector<i64>& idx) {
        const i64 span = 2 * k - 1;
        idx.reserve(static_cast<size_t>(k) * k * k * k);
        for (int yi = 0; yi < k; ++yi)
            for (int xi = 0; xi < k; ++xi)
                for (int yj = 0; yj < k; ++yj)
                    for (int xj = 0; xj < k; ++xj)
                        idx.push_back((yi - yj + k - 1) * span + (xi - xj + k - 1));
    });
}

// table ((2k-1)^2, nh) -> bias (nh, k^2, k^2), differentiable in the table.
template <typename T>
Tensor<T> relative_position_bias(const Tensor<T>& table, int k, int nh) {
    const i64 kk = i64(k) * k;
    auto lin = detail::cached_index("relpos_bias", {k, nh}, [&](std::vector<i64>& v) {
        const auto pair_idx = relative_index_table(k);
        v.reserve(static_cast<size_t>(kk * kk * nh));
        for (i64 p = 0; p < kk * kk; ++p) {
            const i64 off = (*pair_idx)[static_cast<size_t>(p)];
            for (int h = 0; h < nh; ++h) v.push_back(off * nh + h);
        }
    });
    Tensor<T> gathered = gather_linear(table, {kk, kk, nh}, lin);
    return transpose(gathered, {2, 0, 1});
}

// ---------------------------------------------------------------------------
// The three attention operations
// ---------------------------------------------------------------------------

// windows (nw, k^2, d); bias broadcastable against (nw, nh, k^2, k^2)
// (relative position bias, plus shift/validity masks merged by the caller).
template <typename T>
Tensor<T> patch_patch_attention(const RamProjections<T>& proj, const Tensor<T>& windows,
                                const Tensor<T>& bias, int stage) {
    const i64 nw = windows.shape()[0], kk = windows.shape()[1];
    note_macs(AttnKind::PatchPatch, stage,
              std::uint64_t(nw) * attention_macs(std::uint64_t(kk), std::uint64_t(kk),
                                                 std::uint64_t(proj.dim)));
    return multi_head_attention(proj, windows, windows, windows, bias);
}

// det (D, d) with its learnable positional encoding added to queries/keys.
template <typename T>
Tensor<T> det_det_attention(const RamProjections<T>& proj, const Tensor<T>& det,
                            const Tensor<T>& det_pos, int stage) {
    const i64 dq = det.shape()[0], d = det.shape()[1];
    note_macs(AttnKind::DetDet, stage,
              attention_macs(std::uint64_t(dq), std::uint64_t(dq), std::uint64_t(d)));
    Tensor<T> qk = reshape(add(det, det_pos), {1, dq, d});
    Tensor<T> v = reshape(det, {1, dq, d});
    return reshape(multi_head_attention(proj, qk, qk, v), {dq, d});
}

// DET x [DET, PATCH] with a single softmax over the concatenated keys
// and values. `spatial` is the positional table for the patch tokens,
// applied before (pre) or after (post) the key projection, or skipped.
// `key_mask` is an additive (D + P) vector masking invalid patch cells.
// When `attn_out` is non-null it receives the head-averaged softmax
// weights of shape (D, D + P).
template <typename T>
Tensor<T> bound_det_attention(const RamProjections<T>& proj, const Tensor<T>& det,
                              const Tensor<T>& det_pos, const Tensor<T>& patch_flat,
                              const Tensor<T>& spatial_flat, SpatialMode mode,
                              const Tensor<T>& key_mask, int stage,
                              Tensor<T>* attn_out = nullptr) {
    const i64 dq = det.shape()[0], d = det.shape()[1];
    const i64 p = patch_flat.shape()[0];
    note_macs(AttnKind::DetDet, stage,
              attention_macs(std::uint64_t(dq), std::uint64_t(dq), std::uint64_t(d)));
    note_macs(AttnKind::DetPatch, stage,
              2 * std::uint64_t(p) * d * d + 2 * std::uint64_t(dq) * std::uint64_t(p) * d);

    const int nh = proj.heads;
    const i64 dh = d / nh;
    Tensor<T> det_qk = add(det, det_pos);
    Tensor<T> q = detail::split_heads(reshape(proj.q(det_qk), {1, dq, d}), nh);

    Tensor<T> patch_for_key =
        mode == SpatialMode::PreAddition ? add(patch_flat, spatial_flat) : patch_flat;
    Tensor<T> k_patch = proj.k(patch_for_key);
    if (mode == SpatialMode::PostAddition) k_patch = add(k_patch, spatial_flat);
    Tensor<T> k_cat = concat<T>({proj.k(det_qk), k_patch}, 0);
    Tensor<T> v_cat = concat<T>({proj.v(det), proj.v(patch_flat)}, 0);

    Tensor<T> k = detail::split_heads(reshape(k_cat, {1, dq + p, d}), nh);
    Tensor<T> v = detail::split_heads(reshape(v_cat, {1, dq + p, d}), nh);
    Tensor<T> logits = scale(matmul(q, transpose(k, {0, 1, 3, 2})), T(1) / T(std::sqrt(double(dh))));
    if constexpr (std::is_same_v<T, float>) logits = clamp(logits, T(-kLogitClip), T(kLogitClip));
    if (key_mask.defined()) logits = add(logits, key_mask);
    Tensor<T> attn = softmax(logits, -1);
    if (attn_out) {
        Tensor<T> avg = scale(sum_axis(attn.detach(), 1), T(1) / T(nh));
        *attn_out = reshape(avg, {dq, dq + p});
    }
    return reshape(proj.out(detail::merge_heads(matmul(attn, v))), {dq, d});
}

// Joint global attention over the appended [PATCH, DET] sequence; the
// reference mode used by the profiler to reproduce the quadratic baseline.
template <typename T>
Tensor<T> yolos_joint_attention(const RamProjections<T>& proj, const Tensor<T>& tokens) {
    const i64 t = tokens.shape()[0], d = tokens.shape()[1];
    note_macs(AttnKind::YolosJoint, 0,
              attention_macs(std::uint64_t(t), std::uint64_t(t), std::uint64_t(d)));
    Tensor<T> x = reshape(tokens, {1, t, d});
    return reshape(multi_head_attention(proj, x, x, x), {t, d});
}

// ---------------------------------------------------------------------------
// Window machinery (partition / reverse / roll / pad)
// ---------------------------------------------------------------------------

// zero-pad an (h, w, d) map on the bottom/right to (hp, wp)
template <typename T>
Tensor<T> pad_map(const Tensor<T>& map, i64 hp, i64 wp) {
    const i64 h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
    if (hp == h && wp == w) return map;
    auto idx = detail::cached_index("pad_map", {h, w, d, hp, wp}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(hp * wp * d));
        for (i64 y = 0; y < hp; ++y)
            for (i64 x = 0; x < wp; ++x)
                for (i64 c = 0; c < d; ++c)
                    v.push_back(y < h && x < w ? (y * w + x) * d + c : -1);
    });
    return gather_linear(map, {hp, wp, d}, idx);
}

template <typename T>
Tensor<T> crop_map(const Tensor<T>& map, i64 h, i64 w) {
    if (map.shape()[0] == h && map.shape()[1] == w) return map;
    return slice(slice(map, 0, 0, h), 1, 0, w);
}

// cyclic shift by (dy, dx): out[y][x] = in[(y+dy) mod h][(x+dx) mod w]
template <typename T>
Tensor<T> roll_map(const Tensor<T>& map, i64 dy, i64 dx) {
    if (dy == 0 && dx == 0) return map;
    const i64 h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
    auto idx = detail::cached_index("roll_map", {h, w, d, dy, dx}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(h * w * d));
        for (i64 y = 0; y < h; ++y) {
            const i64 sy = ((y + dy) % h + h) % h;
            for (i64 x = 0; x < w; ++x) {
                const i64 sx = ((x + dx) % w + w) % w;
                for (i64 c = 0; c < d; ++c) v.push_back((sy * w + sx) * d + c);
            }
        }
    });
    return gather_linear(map, {h, w, d}, idx);
}

// (h, w, d) with h, w divisible by k -> (nw, k*k, d)
template <typename T>
Tensor<T> window_partition(const Tensor<T>& map, int k) {
    const i64 h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
    if (h % k != 0 || w % k != 0)
        shape_error("window_partition: " + shape_str(map.shape()) + " not divisible by k=" +
                    std::to_string(k));
    const i64 gh = h / k, gw = w / k;
    auto idx = detail::cached_index("window_partition", {h, w, d, k}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(h * w * d));
        for (i64 wy = 0; wy < gh; ++wy)
            for (i64 wx = 0; wx < gw; ++wx)
                for (i64 iy = 0; iy < k; ++iy)
                    for (i64 ix = 0; ix < k; ++ix) {
                        const i64 src = ((wy * k + iy) * w + (wx * k + ix)) * d;
                        for (i64 c = 0; c < d; ++c) v.push_back(src + c);
                    }
    });
    return gather_linear(map, {gh * gw, i64(k) * k, d}, idx);
}

// exact inverse of window_partition
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, int k, i64 h, i64 w) {
    const i64 d = windows.shape()[2];
    const i64 gw = w / k;
    auto idx = detail::cached_index("window_reverse", {h, w, d, k}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(h * w * d));
        for (i64 y = 0; y < h; ++y)
            for (i64 x = 0; x < w; ++x) {
                const i64 win = (y / k) * gw + (x / k);
                const i64 tok = (y % k) * k + (x % k);
                for (i64 c = 0; c < d; ++c) v.push_back((win * k * k + tok) * d + c);
            }
    });
    return gather_linear(windows, {h, w, d}, idx);
}

// Additive key mask for shifted-window attention on a padded (hp, wp) grid:
// region bands follow the cyclic-shift construction, so token pairs whose
// pre-shift windows differ cannot attend; cells beyond (valid_h, valid_w)
// (map padding) are masked as keys everywhere. Returns (nw, k^2, k^2), or
// an undefined tensor when nothing is masked.
template <typename T>
Tensor<T> window_attention_mask(i64 hp, i64 wp, int k, int shift, i64 valid_h, i64 valid_w) {
    const bool any_pad = valid_h < hp || valid_w < wp;
    if (shift == 0 && !any_pad) return {};
    // region id per padded cell (before roll)
    std::vector<int> region(static_cast<size_t>(hp * wp), 0);
    if (shift > 0) {
        auto band = [&](i64 pos, i64 size) {
            if (pos < size - k) return 0;
            if (pos < size - shift) return 1;
            return 2;
        };
        for (i64 y = 0; y < hp; ++y)
            for (i64 x = 0; x < wp; ++x)
                region[static_cast<size_t>(y * wp + x)] = band(y, hp) * 3 + band(x, wp);
    }
    const i64 gh = hp / k, gw = wp / k;
    const i64 kk = i64(k) * k;
    Tensor<T> mask({gh * gw, kk, kk});
    T* mv = mask.data();
    // region ids live on the rolled canvas, so contiguous source runs keep
    // one id; cell validity is a property of the source cell
    auto source = [&](i64 y, i64 x, i64& oy, i64& ox) {
        oy = (y + shift) % hp;
        ox = (x + shift) % wp;
    };
    for (i64 wy = 0; wy < gh; ++wy)
        for (i64 wx = 0; wx < gw; ++wx) {
            const i64 win = wy * gw + wx;
            for (i64 i = 0; i < kk; ++i) {
                const i64 yi = wy * k + i / k, xi = wx * k + i % k;
                const int ri = region[static_cast<size_t>(yi * wp + xi)];
                for (i64 j = 0; j < kk; ++j) {
                    const i64 yj = wy * k + j / k, xj = wx * k + j % k;
                    const int rj = region[static_cast<size_t>(yj * wp + xj)];
                    i64 syj, sxj;
                    source(yj, xj, syj, sxj);
                    const bool invalid_key = syj >= valid_h || sxj >= valid_w;
                    mv[(win * kk + i) * kk + j] = (ri != rj || invalid_key) ? T(kMaskedLogit) : T(0);
                }
            }
        }
    return mask;
}

// (nw, k^2, k^2) constant mask tiled per head to (nw, nh, k^2, k^2) so it can
// carry the broadcastable relative position bias on top.
template <typename T>
Tensor<T> tile_window_mask(const Tensor<T>& mask, int nh) {
    const i64 nw = mask.shape()[0], kk = mask.shape()[1];
    auto idx = detail::cached_index("tile_window_mask", {nw, kk, nh}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(nw * nh * kk * kk));
        for (i64 w = 0; w < nw; ++w)
            for (int h = 0; h < nh; ++h)
                for (i64 p = 0; p < kk * kk; ++p) v.push_back(w * kk * kk + p);
    });
    return gather_linear(mask, {nw, nh, kk, kk}, idx);
}

// Full windowed PATCH x PATCH pass over an (h, w, d) map: pad to window
// multiples, cyclic-shift when requested, attend per window with relative
// position bias and shift/validity masks, undo the shift and crop.
// The shift collapses to zero when one window already covers the map.
template <typename T>
Tensor<T> windowed_patch_attention(const RamProjections<T>& proj, const Tensor<T>& map,
                                   const Tensor<T>& rel_pos_table, int k, int shift,
                                   i64 valid_h, i64 valid_w, int stage) {
    const i64 h = map.shape()[0], w = map.shape()[1];
    const int nh = proj.heads;
    const int s = (h <= k && w <= k) ? 0 : shift;
    const i64 hp = (h + k - 1) / k * k, wp = (w + k - 1) / k * k;
    Tensor<T> canvas = pad_map(map, hp, wp);
    if (s > 0) canvas = roll_map(canvas, s, s);
    Tensor<T> bias = relative_position_bias(rel_pos_table, k, nh);
    Tensor<T> mask = window_attention_mask<T>(hp, wp, k, s, valid_h, valid_w);
    if (mask.defined()) bias = add(tile_window_mask(mask, nh), bias);
    Tensor<T> attn = patch_patch_attention(proj, window_partition(canvas, k), bias, stage);
    Tensor<T> back = window_reverse(attn, k, hp, wp);
    if (s > 0) back = roll_map(back, -s, -s);
    return crop_map(back, h, w);
}

}  // namespace vidt
