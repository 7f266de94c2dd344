#pragma once

// Encoder-free neck: a stack of deformable-transformer decoding layers over
// the multi-scale PATCH maps and the DET tokens, with per-layer detection
// heads, iterative box refinement and inference-time layer drop.

#include "vidt/nn.hpp"
#include "vidt/ram.hpp"

namespace vidt {

namespace detail {

// (n, c) -> (n, reps, c)
template <typename T>
Tensor<T> tile_mid(const Tensor<T>& x, i64 reps) {
    const i64 n = x.shape()[0], c = x.shape()[1];
    auto idx = vidt::detail::cached_index("tile_mid", {n, reps, c}, [&](std::vector<i64>& v) {
        v.reserve(static_cast<size_t>(n * reps * c));
        for (i64 r = 0; r < n; ++r)
            for (i64 m = 0; m < reps; ++m)
                for (i64 j = 0; j < c; ++j) v.push_back(r * c + j);
    });
    return gather_linear(x, {n, reps, c}, idx);
}

}  // namespace detail

// box = sigmoid(inverse_sigmoid(prev) + delta), all in normalized cxcywh
template <typename T>
Tensor<T> refine_box(const Tensor<T>& prev, const Tensor<T>& delta) {
    return sigmoid(add(inverse_sigmoid(prev), delta));
}

// Multi-scale deformable attention: per head, a weighted sum over K sampled
// points on each of the L value maps around the query's reference point.
template <typename T>
struct MsDeformAttn {
    int heads = 8;
    int points = 4;
    int levels = 4;
    i64 width = 256;
    LinearLayer<T> value_proj, output_proj, offset_linear, weight_linear;

    void init(i64 dim, int num_levels, int m, int k, std::mt19937_64& rng) {
        width = dim;
        heads = m;
        points = k;
        levels = num_levels;
        value_proj.init_xavier(dim, dim, rng);
        output_proj.init_xavier(dim, dim, rng);
        offset_linear.init_xavier(dim, i64(m) * num_levels * k * 2, rng);
        weight_linear.init_xavier(dim, i64(m) * num_levels * k, rng);
        // start sampling on a small ring around the reference point:
        // zero weights, per-head direction bias scaled by the point index
        std::fill(offset_linear.w.vec().begin(), offset_linear.w.vec().end(), T(0));
        std::fill(weight_linear.w.vec().begin(), weight_linear.w.vec().end(), T(0));
        std::fill(weight_linear.b.vec().begin(), weight_linear.b.vec().end(), T(0));
        for (int m_i = 0; m_i < m; ++m_i) {
            const double theta = 2.0 * 3.14159265358979323846 * m_i / m;
            double dx = std::cos(theta), dy = std::sin(theta);
            const double norm = std::max(std::abs(dx), std::abs(dy));
            dx /= norm;
            dy /= norm;
            for (int l = 0; l < num_levels; ++l)
                for (int k_i = 0; k_i < k; ++k_i) {
                    const i64 base = ((i64(m_i) * num_levels + l) * k + k_i) * 2;
                    offset_linear.b[base] = T(dx * (k_i + 1));
                    offset_linear.b[base + 1] = T(dy * (k_i + 1));
                }
        }
    }

    // query (D, width): content + positional; maps: L feature maps
    // (h_l, w_l, width); valid: un-padded extent per level; ref (D, 2) center
    // or (D, 4) cxcywh, normalized to [0,1] over the valid extent.
    Tensor<T> forward(const Tensor<T>& query, const std::vector<Tensor<T>>& maps,
                      const std::vector<std::array<i64, 2>>& valid, const Tensor<T>& ref) const {
        const i64 dq = query.shape()[0];
        const int L = static_cast<int>(maps.size());
        const i64 m = heads, k = points;
        if (L != levels) shape_error("ms_deform_attn built for " + std::to_string(levels) +
                                     " levels, got " + std::to_string(L));
        Tensor<T> offsets = reshape(offset_linear(query), {dq, m, i64(L), k, 2});
        Tensor<T> weights =
            softmax(reshape(weight_linear(query), {dq, m, i64(L) * k}), -1);  // over L*K slots
        const bool has_size = ref.shape()[1] == 4;
        Tensor<T> center = has_size ? slice(ref, 1, 0, 2) : ref;
        Tensor<T> size = has_size ? slice(ref, 1, 2, 2) : Tensor<T>{};
        Tensor<T> center_t = reshape(detail::tile_mid(center, m * k), {dq, m, k, 2});
        Tensor<T> size_t;
        if (has_size) size_t = reshape(detail::tile_mid(size, m * k), {dq, m, k, 2});

        Tensor<T> out;
        for (int l = 0; l < L; ++l) {
            const i64 h = maps[l].shape()[0], w = maps[l].shape()[1];
            Tensor<T> value =
                reshape(value_proj(reshape(maps[l], {h * w, width})), {h, w, width});
            Tensor<T> off_l = reshape(slice(offsets, 2, l, 1), {dq, m, k, 2});
            Tensor<T> w_l = reshape(slice(reshape(weights, {dq, m, i64(L), k}), 2, l, 1),
                                    {dq, m, k});
            // pixel location: phi_l(p) + offset, offsets in level-l pixels
            Tensor<T> extent = Tensor<T>::from_data({2}, {T(valid[l][1]), T(valid[l][0])});
            Tensor<T> px;
            if (!has_size) {
                px = add(add_scalar(mul(center_t, extent), T(-0.5)), off_l);
            } else {
                // scale offsets by the box size, as in box-refined sampling
                Tensor<T> shifted =
                    add(center_t, mul(scale(off_l, T(0.5) / T(k)), size_t));
                px = add_scalar(mul(shifted, extent), T(-0.5));
            }
            Tensor<T> lvl = deform_sample_level(value, px, w_l, heads);
            out = out.defined() ? add(out, lvl) : lvl;
        }
        return output_proj(out);
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        value_proj.collect(prefix + ".value", out);
        output_proj.collect(prefix + ".output", out);
        offset_linear.collect(prefix + ".offsets", out);
        weight_linear.collect(prefix + ".weights", out);
    }
};

// One decoding layer: DET self-attention first, then multi-scale deformable
// cross-attention, then the point-wise FFN; residual + dropout + post-norm
// around each.
template <typename T>
struct DeformableDecoderLayer {
    RamProjections<T> self_attn;
    MsDeformAttn<T> cross;
    LayerNormLayer<T> norm1, norm2, norm3;
    LinearLayer<T> ffn1, ffn2;
    double dropout_p = 0.1;

    void init(i64 dim, i64 ffn_dim, int levels, int m, int k, double dropout,
              std::mt19937_64& rng) {
        dropout_p = dropout;
        self_attn.init(dim, m, rng);
        for (auto* lin : {&self_attn.q, &self_attn.k, &self_attn.v, &self_attn.out})
            fill_xavier_uniform(lin->w, dim, dim, rng);
        cross.init(dim, levels, m, k, rng);
        norm1.init(dim);
        norm2.init(dim);
        norm3.init(dim);
        ffn1.init_xavier(dim, ffn_dim, rng);
        ffn2.init_xavier(ffn_dim, dim, rng);
    }

    Tensor<T> forward(const Tensor<T>& det, const Tensor<T>& query_pos,
                      const std::vector<Tensor<T>>& maps,
                      const std::vector<std::array<i64, 2>>& valid, const Tensor<T>& ref,
                      bool training, std::mt19937_64& rng) const {
        const i64 dq = det.shape()[0], d = det.shape()[1];
        Tensor<T> qk = reshape(add(det, query_pos), {1, dq, d});
        Tensor<T> sa = reshape(
            multi_head_attention(self_attn, qk, qk, reshape(det, {1, dq, d})), {dq, d});
        Tensor<T> x = norm1(add(det, dropout(sa, dropout_p, training, rng)));
        Tensor<T> ca = cross.forward(add(x, query_pos), maps, valid, ref);
        x = norm2(add(x, dropout(ca, dropout_p, training, rng)));
        Tensor<T> ff = ffn2(dropout(relu(ffn1(x)), dropout_p, training, rng));
        return norm3(add(x, dropout(ff, dropout_p, training, rng)));
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        self_attn.collect(prefix + ".self", out);
        cross.collect(prefix + ".cross", out);
        norm1.collect(prefix + ".norm1", out);
        norm2.collect(prefix + ".norm2", out);
        norm3.collect(prefix + ".norm3", out);
        ffn1.collect(prefix + ".ffn1", out);
        ffn2.collect(prefix + ".ffn2", out);
    }
};

struct NeckConfig {
    int num_layers = 6;
    int heads = 8;
    int points = 4;
    i64 width = 256;
    i64 ffn_dim = 1024;
    double dropout = 0.1;
    bool box_refine = true;
    int num_classes = 2;
    bool focal = true;  // no background class with the deformable neck
    i64 det_tokens = 100;
};

template <typename T>
struct DecodeOutput {
    std::vector<Tensor<T>> det_layers;     // (D, width) per decoding layer
    std::vector<Tensor<T>> boxes;          // (D, 4) cxcywh per layer
    std::vector<Tensor<T>> class_logits;   // (D, classes) per layer
    Tensor<T> init_reference;              // (D, 2)
};

template <typename T>
class DeformableNeck {
public:
    void init(const NeckConfig& cfg, const std::array<i64, 4>& map_dims, i64 det_dim,
              bool external_projection, std::mt19937_64& rng) {
        cfg_ = cfg;
        external_projection_ = external_projection;
        if (!external_projection_) {
            for (int l = 0; l < 4; ++l) {
                input_proj_[l].init_xavier(map_dims[l], cfg.width, rng);
                input_norm_[l].init(cfg.width, 32);
            }
        }
        det_proj_.init_xavier(det_dim, cfg.width, rng);
        query_pos_ = Tensor<T>({cfg.det_tokens, cfg.width});
        fill_trunc_normal(query_pos_, 0.02, rng);
        ref_head_.init_xavier(cfg.width, 2, rng);
        layers_.resize(cfg.num_layers);
        class_heads_.resize(cfg.num_layers);
        box_heads_.resize(cfg.num_layers);
        const i64 out_classes = cfg.focal ? cfg.num_classes : cfg.num_classes + 1;
        for (int j = 0; j < cfg.num_layers; ++j) {
            layers_[j].init(cfg.width, cfg.ffn_dim, 4, cfg.heads, cfg.points, cfg.dropout, rng);
            class_heads_[j].init_xavier(cfg.width, out_classes, rng);
            if (cfg.focal) {
                // focal prior: start every class logit near p=0.01
                const T bias = T(-std::log((1.0 - 0.01) / 0.01));
                std::fill(class_heads_[j].b.vec().begin(), class_heads_[j].b.vec().end(), bias);
            }
            box_heads_[j].init(cfg.width, cfg.width, 4, 3, rng);
            auto& last = box_heads_[j].layers.back();
            std::fill(last.w.vec().begin(), last.w.vec().end(), T(0));
            std::fill(last.b.vec().begin(), last.b.vec().end(), T(0));
            if (cfg.box_refine) {
                last.b[2] = T(-2);
                last.b[3] = T(-2);
            }
        }
    }

    const NeckConfig& config() const { return cfg_; }

    // Drops the top `n_drop` decoding layers: inference then ends at the
    // remaining top layer's head, and the dropped layers' parameters leave
    // the serialized set.
    void set_layer_drop(int n_drop) {
        if (n_drop < 0 || n_drop >= cfg_.num_layers)
            throw std::invalid_argument("n_drop must be in [0, " +
                                        std::to_string(cfg_.num_layers - 1) + "], got " +
                                        std::to_string(n_drop));
        n_drop_ = n_drop;
    }
    int layer_drop() const { return n_drop_; }
    int active_layers() const { return cfg_.num_layers - n_drop_; }

    DecodeOutput<T> decode(const Tensor<T>& det_tokens, const std::vector<Tensor<T>>& raw_maps,
                           const std::vector<std::array<i64, 2>>& valid, bool training,
                           std::mt19937_64& rng) const {
        std::vector<Tensor<T>> maps(raw_maps.size());
        for (size_t l = 0; l < raw_maps.size(); ++l) {
            if (external_projection_) {
                maps[l] = raw_maps[l];
            } else {
                const i64 h = raw_maps[l].shape()[0], w = raw_maps[l].shape()[1];
                const i64 d = raw_maps[l].shape()[2];
                Tensor<T> proj = input_proj_[l](reshape(raw_maps[l], {h * w, d}));
                maps[l] = input_norm_[l](reshape(proj, {h, w, cfg_.width}));
            }
            if (maps[l].shape()[2] != cfg_.width)
                shape_error("neck expects width-" + std::to_string(cfg_.width) + " maps");
        }
        DecodeOutput<T> out;
        Tensor<T> x = det_proj_(det_tokens);
        Tensor<T> ref = sigmoid(ref_head_(query_pos_));  // (D, 2)
        out.init_reference = ref;
        const int steps = active_layers();
        for (int j = 0; j < steps; ++j) {
            x = layers_[j].forward(x, query_pos_, maps, valid, ref, training, rng);
            out.det_layers.push_back(x);
            out.class_logits.push_back(class_heads_[j](x));
            Tensor<T> delta = box_heads_[j](x);
            Tensor<T> box;
            if (cfg_.box_refine) {
                Tensor<T> base;
                if (ref.shape()[1] == 2) {
                    base = concat<T>({inverse_sigmoid(ref), Tensor<T>({cfg_.det_tokens, 2})}, 1);
                } else {
                    base = inverse_sigmoid(ref);
                }
                box = sigmoid(add(delta, base));
                ref = box.detach();  // widened to 4 coordinates from here on
            } else {
                Tensor<T> base =
                    concat<T>({inverse_sigmoid(ref), Tensor<T>({cfg_.det_tokens, 2})}, 1);
                box = sigmoid(add(delta, base));
            }
            out.boxes.push_back(box);
        }
        return out;
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        if (!external_projection_) {
            for (int l = 0; l < 4; ++l) {
                input_proj_[l].collect(prefix + ".input_proj" + std::to_string(l), out);
                input_norm_[l].collect(prefix + ".input_norm" + std::to_string(l), out);
            }
        }
        det_proj_.collect(prefix + ".det_proj", out);
        out.add(prefix + ".query_pos", query_pos_);
        ref_head_.collect(prefix + ".ref_head", out);
        for (int j = 0; j < active_layers(); ++j) {
            const std::string lp = prefix + ".layer" + std::to_string(j);
            layers_[j].collect(lp, out);
            class_heads_[j].collect(lp + ".class_head", out);
            box_heads_[j].collect(lp + ".box_head", out);
        }
    }

    i64 param_count() {
        ParamSet<T> ps;
        collect("neck", ps);
        return ps.count();
    }

private:
    NeckConfig cfg_;
    bool external_projection_ = false;
    int n_drop_ = 0;
    std::array<LinearLayer<T>, 4> input_proj_;
    std::array<GroupNormLayer<T>, 4> input_norm_;
    LinearLayer<T> det_proj_;
    Tensor<T> query_pos_;
    LinearLayer<T> ref_head_;
    std::vector<DeformableDecoderLayer<T>> layers_;
    std::vector<LinearLayer<T>> class_heads_;
    std::vector<MlpHead<T>> box_heads_;
};

}  // namespace vidt
