#pragma once

// Hierarchical windowed-attention backbone hosting the reconfigured
// attention blocks. Four stages; PATCH tokens shrink x1/4 per stage while
// the DET set keeps its size and doubles its embedding by duplication.

#include <array>

#include "vidt/ram.hpp"

namespace vidt {

struct StagePreset {
    std::string name;
    i64 channels = 48;                       // stage-1 dim, doubled per stage
    std::array<int, 4> depths = {2, 2, 6, 2};
    std::array<int, 4> heads = {3, 6, 12, 24};
};

// swin_pico is a desk-scale preset for CPU tests, not a published
// configuration; the others follow the published channel/depth table.
inline StagePreset stage_preset(const std::string& name) {
    if (name == "swin_pico") return {name, 24, {2, 2, 2, 2}, {3, 6, 12, 24}};
    if (name == "swin_nano") return {name, 48, {2, 2, 6, 2}, {3, 6, 12, 24}};
    if (name == "swin_tiny") return {name, 96, {2, 2, 6, 2}, {3, 6, 12, 24}};
    if (name == "swin_small") return {name, 128, {2, 2, 18, 2}, {4, 8, 16, 32}};
    if (name == "swin_base") return {name, 192, {2, 2, 18, 2}, {6, 12, 24, 48}};
    throw std::invalid_argument("unknown backbone preset '" + name + "'");
}

struct BackboneConfig {
    StagePreset preset = stage_preset("swin_nano");
    int window = 7;
    std::array<bool, 4> cross_attention = {false, false, false, true};
    std::array<bool, 4> det_self_attention = {true, true, true, true};
    SpatialPolicy policy;

    i64 stage_dim(int stage) const { return preset.channels << stage; }
    i64 out_dim() const { return preset.channels << 3; }
};

template <typename T>
struct TokenState {
    std::array<Tensor<T>, 4> patch_maps;      // (h_l, w_l, d_l), output-normed
    std::array<std::array<i64, 2>, 4> valid;  // un-padded cell extent per level
    Tensor<T> det;                            // (D, 8 * d1)
    // head-averaged DET->PATCH attention per cross-enabled stage, one entry
    // per block: (stage, map_h, map_w, weights (D, D + P))
    struct AttnCapture {
        int stage;
        i64 h, w;
        Tensor<T> weights;
    };
    std::vector<AttnCapture> cross_attention;
};

namespace detail {

inline i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }
inline i64 round_up(i64 a, i64 b) { return ceil_div(a, b) * b; }

// 2x2 neighborhood concat: (h, w, d) -> (h/2, w/2, 4d)
template <typename T>
Tensor<T> merge_cells(const Tensor<T>& map) {
    const i64 h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
    const i64 oh = h / 2, ow = w / 2;
    auto idx = vidt::detail::cached_index("merge_cells", {h, w, d}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(oh * ow * 4 * d));
        const std::array<std::array<i64, 2>, 4> offs = {{{0, 0}, {1, 0}, {0, 1}, {1, 1}}};
        for (i64 y = 0; y < oh; ++y)
            for (i64 x = 0; x < ow; ++x)
                for (const auto& o : offs) {
                    const i64 src = ((2 * y + o[0]) * w + (2 * x + o[1])) * d;
                    for (i64 c = 0; c < d; ++c) v.push_back(src + c);
                }
    });
    return gather_linear(map, {oh, ow, 4 * d}, idx);
}

// [a1..ad] -> [a1..ad, a1..ad]; lets DET tokens track the PATCH embedding
// dimension without touching any projection layer.
template <typename T>
Tensor<T> det_dim_duplicate(const Tensor<T>& det) {
    const i64 n = det.shape()[0], d = det.shape()[1];
    auto idx = vidt::detail::cached_index("det_duplicate", {n, d}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(n * 2 * d));
        for (i64 r = 0; r < n; ++r)
            for (i64 j = 0; j < 2 * d; ++j) v.push_back(r * d + (j % d));
    });
    return gather_linear(det, {n, 2 * d}, idx);
}

// additive (D + P) key mask hiding padded patch cells from the bound attention
template <typename T>
Tensor<T> padded_key_mask(i64 det_count, i64 h, i64 w, i64 valid_h, i64 valid_w) {
    if (valid_h >= h && valid_w >= w) return {};
    Tensor<T> mask({det_count + h * w});
    for (i64 y = 0; y < h; ++y)
        for (i64 x = 0; x < w; ++x)
            if (y >= valid_h || x >= valid_w) mask[det_count + y * w + x] = T(kMaskedLogit);
    return mask;
}

}  // namespace detail

template <typename T>
struct SwinBlock {
    LayerNormLayer<T> ln1, ln2;
    RamProjections<T> proj;
    Tensor<T> rel_pos_table;  // ((2k-1)^2, nh), zero-initialized
    LinearLayer<T> fc1, fc2;  // MLP with 4x expansion, shared by both token kinds
    int stage = 0;
    int window = 7;
    int shift = 0;
    bool cross = false;
    bool det_self = true;

    void init(i64 dim, int nh, int k, int stage_id, int shift_size, bool cross_enabled,
              bool det_self_enabled, std::mt19937_64& rng) {
        stage = stage_id;
        window = k;
        shift = shift_size;
        cross = cross_enabled;
        det_self = det_self_enabled;
        ln1.init(dim);
        ln2.init(dim);
        proj.init(dim, nh, rng);
        rel_pos_table = Tensor<T>({i64(2 * k - 1) * (2 * k - 1), nh});
        fc1.init(dim, 4 * dim, rng);
        fc2.init(4 * dim, dim, rng);
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        ln1.collect(prefix + ".ln1", out);
        proj.collect(prefix + ".attn", out);
        out.add(prefix + ".rel_pos", rel_pos_table);
        ln2.collect(prefix + ".ln2", out);
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }

    // map (h, w, d), det (D, d); spatial_flat is the (h*w, d) positional
    // table when cross-attention runs here. Returns the updated pair.
    std::pair<Tensor<T>, Tensor<T>> forward(
        const Tensor<T>& map, const Tensor<T>& det, const Tensor<T>& det_pos,
        const Tensor<T>& spatial_flat, SpatialMode spatial_mode, i64 valid_h, i64 valid_w,
        typename TokenState<T>::AttnCapture* capture = nullptr) const {
        const i64 h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
        const i64 det_count = det.shape()[0];

        Tensor<T> tokens = concat<T>({reshape(map, {h * w, d}), det}, 0);
        Tensor<T> normed = ln1(tokens);
        Tensor<T> patch_n = slice(normed, 0, 0, h * w);
        Tensor<T> det_n = slice(normed, 0, h * w, det_count);

        Tensor<T> patch_attn =
            reshape(windowed_patch_attention(proj, reshape(patch_n, {h, w, d}), rel_pos_table,
                                             window, shift, valid_h, valid_w, stage),
                    {h * w, d});

        // DET path: bound attention where cross is enabled, otherwise plain
        // DET self-attention (or nothing when both are off)
        Tensor<T> det_attn;
        if (cross) {
            Tensor<T> key_mask = detail::padded_key_mask<T>(det_count, h, w, valid_h, valid_w);
            Tensor<T> attn_weights;
            det_attn = bound_det_attention(proj, det_n, det_pos, patch_n, spatial_flat,
                                           spatial_mode, key_mask, stage,
                                           capture ? &attn_weights : nullptr);
            if (capture) {
                capture->stage = stage;
                capture->h = h;
                capture->w = w;
                capture->weights = attn_weights;
            }
        } else if (det_self) {
            det_attn = det_det_attention(proj, det_n, det_pos, stage);
        } else {
            det_attn = Tensor<T>({det_count, d});
        }

        tokens = add(tokens, concat<T>({patch_attn, det_attn}, 0));
        tokens = add(tokens, fc2(gelu(fc1(ln2(tokens)))));
        Tensor<T> out_map = reshape(slice(tokens, 0, 0, h * w), {h, w, d});
        Tensor<T> out_det = slice(tokens, 0, h * w, det_count);
        return {out_map, out_det};
    }
};

template <typename T>
class SwinBackbone {
public:
    void init(const BackboneConfig& cfg, std::mt19937_64& rng) {
        cfg_ = cfg;
        const i64 d1 = cfg.preset.channels;
        patch_proj_.init(4 * 4 * 3, d1, rng);
        patch_norm_.init(d1);
        for (int st = 0; st < 4; ++st) {
            const i64 d = cfg.stage_dim(st);
            stages_[st].resize(cfg.preset.depths[st]);
            for (int b = 0; b < cfg.preset.depths[st]; ++b)
                stages_[st][b].init(d, cfg.preset.heads[st], cfg.window, st,
                                    b % 2 == 1 ? cfg.window / 2 : 0, cfg.cross_attention[st],
                                    cfg.det_self_attention[st], rng);
            out_norms_[st].init(d);
            if (st < 3) {
                merge_norms_[st].init(4 * d);
                merge_reduce_[st].init(4 * d, 2 * d, rng, /*bias=*/false);
            }
            if (cfg.policy.kind == SpatialKind::Learnable && cfg.cross_attention[st]) {
                learn_rows_[st] = Tensor<T>({kMaxLearnableExtent, d / 2});
                learn_cols_[st] = Tensor<T>({kMaxLearnableExtent, d / 2});
                fill_trunc_normal(learn_rows_[st], 0.02, rng);
                fill_trunc_normal(learn_cols_[st], 0.02, rng);
            }
        }
    }

    const BackboneConfig& config() const { return cfg_; }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        patch_proj_.collect(prefix + ".patch_embed", out);
        patch_norm_.collect(prefix + ".patch_norm", out);
        for (int st = 0; st < 4; ++st) {
            const std::string sp = prefix + ".stage" + std::to_string(st + 1);
            for (size_t b = 0; b < stages_[st].size(); ++b)
                stages_[st][b].collect(sp + ".block" + std::to_string(b), out);
            out_norms_[st].collect(sp + ".out_norm", out);
            if (st < 3) {
                merge_norms_[st].collect(sp + ".merge_norm", out);
                merge_reduce_[st].collect(sp + ".merge_reduce", out);
            }
            if (learn_rows_[st].defined()) {
                out.add(sp + ".spatial_rows", learn_rows_[st]);
                out.add(sp + ".spatial_cols", learn_cols_[st]);
            }
        }
    }

    i64 param_count() {
        ParamSet<T> ps;
        collect("bb", ps);
        return ps.count();
    }

    // image (H, W, 3), already scaled to model range; det/det_pos (D, d1).
    TokenState<T> forward(const Tensor<T>& image, const Tensor<T>& det_tokens,
                          const Tensor<T>& det_positional, bool capture_attention = false) const {
        const i64 img_h = image.shape()[0], img_w = image.shape()[1];
        const i64 det_count = det_tokens.shape()[0];
        Tensor<T> padded =
            pad_map(image, detail::round_up(img_h, 32), detail::round_up(img_w, 32));
        Tensor<T> map = embed_patches(padded);
        i64 valid_h = detail::ceil_div(img_h, 4), valid_w = detail::ceil_div(img_w, 4);

        Tensor<T> det = det_tokens;
        Tensor<T> det_pos = det_positional;
        TokenState<T> state;
        for (int st = 0; st < 4; ++st) {
            const i64 h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
            Tensor<T> spatial;
            if (cfg_.cross_attention[st] && cfg_.policy.mode != SpatialMode::None)
                spatial = reshape(spatial_table(st, h, w, d), {h * w, d});
            for (const auto& block : stages_[st]) {
                typename TokenState<T>::AttnCapture cap;
                auto [m2, d2] = block.forward(map, det, det_pos, spatial, cfg_.policy.mode,
                                              valid_h, valid_w,
                                              capture_attention && block.cross ? &cap : nullptr);
                map = m2;
                det = d2;
                if (capture_attention && block.cross) state.cross_attention.push_back(cap);
                if (det.shape()[0] != det_count)
                    throw std::logic_error("DET token count changed across stages");
            }
            state.patch_maps[st] = out_norms_[st](map);
            state.valid[st] = {valid_h, valid_w};
            if (st < 3) {
                map = merge_reduce_[st](merge_norms_[st](detail::merge_cells(map)));
                det = detail::det_dim_duplicate(det);
                det_pos = detail::det_dim_duplicate(det_pos);
                valid_h = detail::ceil_div(valid_h, 2);
                valid_w = detail::ceil_div(valid_w, 2);
            }
        }
        state.det = det;
        return state;
    }

private:
    static constexpr i64 kMaxLearnableExtent = 128;

    Tensor<T> embed_patches(const Tensor<T>& img) const {
        const i64 h = img.shape()[0], w = img.shape()[1];
        const i64 gh = h / 4, gw = w / 4;
        auto idx = vidt::detail::cached_index("patch_embed", {h, w}, [&](std::vector<i64>& v) {
            v.reserve(static_cast<size_t>(gh * gw * 48));
            for (i64 py = 0; py < gh; ++py)
                for (i64 px = 0; px < gw; ++px)
                    for (i64 dy = 0; dy < 4; ++dy)
                        for (i64 dx = 0; dx < 4; ++dx)
                            for (i64 c = 0; c < 3; ++c)
                                v.push_back(((py * 4 + dy) * w + (px * 4 + dx)) * 3 + c);
        });
        Tensor<T> patches = gather_linear(img, {gh * gw, 48}, idx);
        return reshape(patch_norm_(patch_proj_(patches)), {gh, gw, cfg_.preset.channels});
    }

    Tensor<T> spatial_table(int stage, i64 h, i64 w, i64 d) const {
        if (cfg_.policy.kind == SpatialKind::Sinusoidal) {
            thread_local std::map<std::array<i64, 3>, Tensor<T>> cache;
            auto it = cache.find({h, w, d});
            if (it == cache.end())
                it = cache.emplace(std::array<i64, 3>{h, w, d}, sinusoidal_encoding_2d<T>(h, w, d))
                         .first;
            return it->second;
        }
        if (h > kMaxLearnableExtent || w > kMaxLearnableExtent)
            throw std::invalid_argument("learnable spatial encoding supports maps up to 128x128");
        // pos[y][x] = [rows[y], cols[x]]
        auto ridx = std::make_shared<std::vector<i64>>();
        auto cidx = std::make_shared<std::vector<i64>>();
        const i64 half = d / 2;
        for (i64 y = 0; y < h; ++y)
            for (i64 x = 0; x < w; ++x) {
                for (i64 c = 0; c < half; ++c) ridx->push_back(y * half + c);
                for (i64 c = 0; c < half; ++c) cidx->push_back(x * half + c);
            }
        Tensor<T> rows = gather_linear(learn_rows_[stage], {h, w, half}, ridx);
        Tensor<T> cols = gather_linear(learn_cols_[stage], {h, w, half}, cidx);
        return concat<T>({rows, cols}, 2);
    }

    BackboneConfig cfg_;
    LinearLayer<T> patch_proj_;
    LayerNormLayer<T> patch_norm_;
    std::array<std::vector<SwinBlock<T>>, 4> stages_;
    std::array<LayerNormLayer<T>, 4> out_norms_;
    std::array<LayerNormLayer<T>, 3> merge_norms_;
    std::array<LinearLayer<T>, 3> merge_reduce_;
    std::array<Tensor<T>, 4> learn_rows_, learn_cols_;
};

}  // namespace vidt
