#pragma once

// Full detector: backbone with reconfigured attention, optional pyramid
// fusion, deformable decoding neck with per-layer heads, and the optional
// mask / IoU / token-labeling branches.

#include "vidt/backbone.hpp"
#include "vidt/config.hpp"
#include "vidt/data.hpp"
#include "vidt/epff.hpp"
#include "vidt/eval.hpp"
#include "vidt/losses.hpp"
#include "vidt/neck.hpp"
#include "vidt/uqr.hpp"

namespace vidt {

struct ModelConfig {
    BackboneConfig backbone;
    NeckConfig neck;
    bool epff = false;
    bool uqr = false;
    i64 mask_coeffs = 256;
    i64 mask_resolution = 64;
    bool iou_aware = false;
    bool token_labeling = false;
    bool aux_loss = true;
    int n_drop = 0;

    ClassLossMode class_mode() const {
        return neck.focal ? ClassLossMode::FocalNoBackground
                          : ClassLossMode::CrossEntropyWithBackground;
    }
};

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema = {
        {"model",
         {"preset", "window", "det_tokens", "cross_stages", "det_self_stages", "spatial_policy",
          "neck_layers", "neck_heads", "neck_points", "neck_width", "neck_ffn", "neck_dropout",
          "box_refine", "aux_loss", "epff", "uqr", "mask_coeffs", "mask_resolution", "iou_aware",
          "token_labeling", "classes", "class_loss", "n_drop"}},
        {"train",
         {"epochs", "batch_size", "lr", "weight_decay", "clip", "seed", "threads", "augment",
          "eval_every", "checkpoint_every", "lambda_cl", "lambda_l1", "lambda_iou", "lambda_seg",
          "lambda_aware", "lambda_token"}},
        {"data",
         {"source", "synth_seed", "synth_train", "synth_val", "image_size", "coco_train",
          "coco_val"}},
    };
    return schema;
}

inline ModelConfig model_config_from(const Config& cfg) {
    cfg.validate(config_schema());
    ModelConfig mc;
    mc.backbone.preset = stage_preset(cfg.get_str("model", "preset", "swin_nano"));
    mc.backbone.window = static_cast<int>(cfg.get_int("model", "window", 7));
    auto stages_from = [&](const std::string& key, std::array<bool, 4> fallback) {
        if (!cfg.has("model", key)) return fallback;
        std::array<bool, 4> out = {false, false, false, false};
        for (int s : cfg.get_int_list("model", key, {})) {
            if (s < 1 || s > 4)
                config_error(key + ": stage ids are 1..4, got " + std::to_string(s));
            out[static_cast<size_t>(s - 1)] = true;
        }
        return out;
    };
    mc.backbone.cross_attention = stages_from("cross_stages", {false, false, false, true});
    mc.backbone.det_self_attention = stages_from("det_self_stages", {true, true, true, true});
    mc.backbone.policy =
        spatial_policy_from_string(cfg.get_str("model", "spatial_policy", "pre_sin"));
    mc.neck.num_layers = static_cast<int>(cfg.get_int("model", "neck_layers", 6));
    mc.neck.heads = static_cast<int>(cfg.get_int("model", "neck_heads", 8));
    mc.neck.points = static_cast<int>(cfg.get_int("model", "neck_points", 4));
    mc.neck.width = cfg.get_int("model", "neck_width", 256);
    mc.neck.ffn_dim = cfg.get_int("model", "neck_ffn", 1024);
    mc.neck.dropout = cfg.get_double("model", "neck_dropout", 0.1);
    mc.neck.box_refine = cfg.get_bool("model", "box_refine", true);
    mc.neck.det_tokens = cfg.get_int("model", "det_tokens", 100);
    mc.neck.num_classes = static_cast<int>(cfg.get_int("model", "classes", 2));
    const std::string cl = cfg.get_str("model", "class_loss", "focal");
    if (cl != "focal" && cl != "ce") config_error("class_loss must be focal or ce");
    mc.neck.focal = cl == "focal";
    mc.aux_loss = cfg.get_bool("model", "aux_loss", true);
    mc.epff = cfg.get_bool("model", "epff", false);
    mc.uqr = cfg.get_bool("model", "uqr", false);
    mc.mask_coeffs = cfg.get_int("model", "mask_coeffs", 256);
    mc.mask_resolution = cfg.get_int("model", "mask_resolution", 64);
    mc.iou_aware = cfg.get_bool("model", "iou_aware", false);
    mc.token_labeling = cfg.get_bool("model", "token_labeling", false);
    mc.n_drop = static_cast<int>(cfg.get_int("model", "n_drop", 0));
    return mc;
}

template <typename T>
struct ModelOutput {
    DecodeOutput<T> dec;
    Tensor<T> iou_logits;               // (D, 1) from the top layer, if enabled
    Tensor<T> mask_vectors;             // (D, n) from the top layer, if enabled
    std::vector<Tensor<T>> token_logits;  // per level (P_l, c), training only
    TokenState<T> tokens;
};

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    Tensor<T> t({img.h, img.w, 3});
    for (i64 i = 0; i < t.numel(); ++i)
        t[i] = T(img.rgb[static_cast<size_t>(i)]) / T(255) - T(0.5);
    return t;
}

template <typename T>
class VidtModel {
public:
    void init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg_ = cfg;
        std::mt19937_64 rng = substream(seed, "model_init");
        const i64 d1 = cfg.backbone.preset.channels;
        det_tokens_ = Tensor<T>({cfg.neck.det_tokens, d1});
        det_pos_ = Tensor<T>({cfg.neck.det_tokens, d1});
        fill_trunc_normal(det_tokens_, 0.02, rng);
        fill_trunc_normal(det_pos_, 0.02, rng);
        backbone_.init(cfg.backbone, rng);
        if (cfg.epff) {
            epff_.emplace();
            epff_->init({d1, 2 * d1, 4 * d1, 8 * d1}, cfg.neck.width, rng);
        }
        neck_.init(cfg.neck, {d1, 2 * d1, 4 * d1, 8 * d1}, 8 * d1, cfg.epff, rng);
        neck_.set_layer_drop(cfg.n_drop);
        if (cfg.iou_aware) iou_head_.init(cfg.neck.width, cfg.neck.width, 1, 2, rng);
        if (cfg.uqr) mask_head_.init(cfg.neck.width, cfg.neck.width, cfg.mask_coeffs, 3, rng);
        if (cfg.token_labeling)
            for (int l = 0; l < 4; ++l)
                token_heads_[l].init_xavier(d1 << l, cfg.neck.num_classes, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    void set_layer_drop(int n_drop) {
        cfg_.n_drop = n_drop;
        neck_.set_layer_drop(n_drop);
    }

    ModelOutput<T> forward(const Image& img, bool training, std::mt19937_64& rng,
                           bool capture_attention = false) const {
        ModelOutput<T> out;
        out.tokens = backbone_.forward(image_to_tensor<T>(img), det_tokens_, det_pos_,
                                       capture_attention);
        std::vector<Tensor<T>> maps;
        if (epff_) {
            maps = epff_->fuse(out.tokens.patch_maps);
        } else {
            maps.assign(out.tokens.patch_maps.begin(), out.tokens.patch_maps.end());
        }
        std::vector<std::array<i64, 2>> valid(out.tokens.valid.begin(), out.tokens.valid.end());
        out.dec = neck_.decode(out.tokens.det, maps, valid, training, rng);
        if (cfg_.iou_aware) out.iou_logits = iou_head_(out.dec.det_layers.back());
        if (cfg_.uqr) out.mask_vectors = mask_head_(out.dec.det_layers.back());
        if (cfg_.token_labeling && training)
            for (int l = 0; l < 4; ++l) {
                const auto& m = out.tokens.patch_maps[l];
                out.token_logits.push_back(token_heads_[l](
                    reshape(m, {m.shape()[0] * m.shape()[1], m.shape()[2]})));
            }
        return out;
    }

    // Ground truth in loss form: matched boxes/classes plus, when active,
    // per-object DCT vectors and per-level soft token labels.
    ImageTargets<T> targets_for(const DetectionSample& sample) const {
        ImageTargets<T> tgt;
        for (const auto& o : sample.objects) {
            tgt.classes.push_back(o.category);
            tgt.boxes.push_back(o.box_cxcywh);
        }
        if (cfg_.uqr && !sample.objects.empty()) {
            tgt.mask_vectors = Tensor<T>({i64(sample.objects.size()), cfg_.mask_coeffs});
            for (size_t gi = 0; gi < sample.objects.size(); ++gi) {
                const auto& o = sample.objects[gi];
                Tensor<T> full({sample.image.h, sample.image.w});
                if (o.has_mask)
                    for (i64 i = 0; i < full.numel(); ++i)
                        full[i] = T(o.mask.bits[static_cast<size_t>(i)]);
                MaskVector v =
                    encode_object_mask(full, o.box_cxcywh, cfg_.mask_resolution, cfg_.mask_coeffs);
                for (i64 c = 0; c < cfg_.mask_coeffs; ++c)
                    tgt.mask_vectors.at(i64(gi), c) = T(v.coefficients[static_cast<size_t>(c)]);
            }
        }
        if (cfg_.token_labeling) {
            const i64 hp = detail::round_up(sample.image.h, 32);
            const i64 wp = detail::round_up(sample.image.w, 32);
            for (int l = 0; l < 4; ++l) {
                const i64 stride = 4 << l;
                const i64 mh = hp / stride, mw = wp / stride;
                Tensor<T> labels({mh * mw, i64(cfg_.neck.num_classes)});
                for (const auto& o : sample.objects) {
                    if (!o.has_mask) continue;
                    for (i64 ty = 0; ty < mh; ++ty)
                        for (i64 tx = 0; tx < mw; ++tx) {
                            i64 covered = 0;
                            for (i64 y = ty * stride; y < (ty + 1) * stride; ++y)
                                for (i64 x = tx * stride; x < (tx + 1) * stride; ++x)
                                    if (y < sample.image.h && x < sample.image.w &&
                                        o.mask.at(y, x))
                                        ++covered;
                            if (covered > 0) {
                                T& cell = labels.at(ty * mw + tx, o.category);
                                cell = std::min(T(1), cell + T(covered) / T(stride * stride));
                            }
                        }
                }
                tgt.token_labels.push_back(labels);
            }
        }
        return tgt;
    }

    LossBreakdown<T> loss(const ModelOutput<T>& out, const ImageTargets<T>& tgt,
                          const LossWeights& w) const {
        return joint_loss(out.dec, tgt, w, cfg_.class_mode(), out.iou_logits, out.mask_vectors,
                          out.token_logits, cfg_.aux_loss);
    }

    // Top-layer predictions as scored detections; masks decode through the
    // predicted box when the mask branch is active.
    std::vector<Detection> detections(const ModelOutput<T>& out, const DetectionSample& sample,
                                      double mask_score_floor = 0.05) const {
        std::vector<Detection> dets;
        const Tensor<T>& logits = out.dec.class_logits.back();
        const Tensor<T>& boxes = out.dec.boxes.back();
        const i64 slots = logits.shape()[0];
        const i64 nc = logits.shape()[1];
        for (i64 s = 0; s < slots; ++s) {
            Detection d;
            d.image_id = sample.id;
            if (cfg_.neck.focal) {
                double best = -1e30;
                for (i64 c = 0; c < nc; ++c)
                    if (double(logits.at(s, c)) > best) {
                        best = double(logits.at(s, c));
                        d.category = static_cast<int>(c);
                    }
                d.score = 1.0 / (1.0 + std::exp(-best));
            } else {
                double mx = -1e30;
                for (i64 c = 0; c < nc; ++c) mx = std::max(mx, double(logits.at(s, c)));
                double den = 0.0;
                for (i64 c = 0; c < nc; ++c) den += std::exp(double(logits.at(s, c)) - mx);
                double best = -1.0;
                for (i64 c = 0; c + 1 < nc; ++c) {  // skip the background column
                    const double p = std::exp(double(logits.at(s, c)) - mx) / den;
                    if (p > best) {
                        best = p;
                        d.category = static_cast<int>(c);
                    }
                }
                d.score = best;
            }
            d.box_cxcywh = {double(boxes.at(s, 0)), double(boxes.at(s, 1)),
                            double(boxes.at(s, 2)), double(boxes.at(s, 3))};
            if (cfg_.uqr && out.mask_vectors.defined() && d.score >= mask_score_floor) {
                MaskVector v;
                v.resolution = cfg_.mask_resolution;
                v.coefficients.resize(static_cast<size_t>(cfg_.mask_coeffs));
                for (i64 c = 0; c < cfg_.mask_coeffs; ++c)
                    v.coefficients[static_cast<size_t>(c)] = double(out.mask_vectors.at(s, c));
                Tensor<T> pasted =
                    paste_object_mask<T>(v, d.box_cxcywh, sample.image.h, sample.image.w);
                BitMask bm;
                bm.h = sample.image.h;
                bm.w = sample.image.w;
                bm.bits.resize(static_cast<size_t>(bm.h * bm.w));
                for (i64 i = 0; i < pasted.numel(); ++i) bm.bits[static_cast<size_t>(i)] =
                    pasted[i] >= T(0.5) ? 1 : 0;
                d.mask = std::move(bm);
            }
            dets.push_back(std::move(d));
        }
        return dets;
    }

    void collect(ParamSet<T>& out) {
        out.add("det_tokens", det_tokens_);
        out.add("det_pos", det_pos_);
        backbone_.collect("backbone", out);
        if (epff_) epff_->collect("epff", out);
        neck_.collect("neck", out);
        if (cfg_.iou_aware) iou_head_.collect("iou_head", out);
        if (cfg_.uqr) mask_head_.collect("mask_head", out);
        if (cfg_.token_labeling)
            for (int l = 0; l < 4; ++l)
                token_heads_[l].collect("token_head" + std::to_string(l), out);
    }

    i64 param_count() {
        ParamSet<T> ps;
        collect(ps);
        return ps.count();
    }

private:
    ModelConfig cfg_;
    Tensor<T> det_tokens_, det_pos_;
    SwinBackbone<T> backbone_;
    std::optional<Epff<T>> epff_;
    DeformableNeck<T> neck_;
    MlpHead<T> iou_head_;
    MlpHead<T> mask_head_;
    std::array<LinearLayer<T>, 4> token_heads_;
};

}  // namespace vidt
