#pragma once

// Set-prediction supervision: Hungarian matching per decoding layer, the
// classification / L1 / GIoU detection triple, and the auxiliary objectives
// (mask-vector L1, IoU-aware BCE, token labeling focal).

#include <map>

#include "vidt/neck.hpp"
#include "vidt/ops.hpp"

namespace vidt {

struct LossWeights {
    double cl = 1.0;
    double l1 = 5.0;
    double iou = 2.0;
    double seg = 3.0;
    double aware = 2.0;
    double token = 2.0;
    // Matching reuses the l1/giou weights; the class term carries its own
    // weight in the assignment cost (set-prediction convention).
    double match_cl = 2.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

enum class ClassLossMode { CrossEntropyWithBackground, FocalNoBackground };

struct MatchResult {
    std::vector<int> assignment;  // assignment[gt_index] = prediction slot
    double cost = 0.0;
};

// Exact minimal-cost injective assignment of rows (ground truths) to columns
// (prediction slots) by shortest augmenting paths with potentials.
inline MatchResult hungarian_match(const std::vector<double>& cost, int rows, int cols) {
    if (rows > cols)
        throw std::invalid_argument("hungarian_match: infeasible, " + std::to_string(rows) +
                                    " rows > " + std::to_string(cols) + " columns");
    if (static_cast<int>(cost.size()) != rows * cols)
        throw std::invalid_argument("hungarian_match: cost size mismatch");
    const double inf = std::numeric_limits<double>::infinity();
    // 1-indexed potentials; column 0 is the virtual start
    std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
    std::vector<int> match(cols + 1, 0);  // match[j] = row occupying column j
    std::vector<int> way(cols + 1, 0);
    for (int i = 1; i <= rows; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(cols + 1, inf);
        std::vector<char> used(cols + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= cols; ++j) {
                if (used[j]) continue;
                const double cur = cost[static_cast<size_t>((i0 - 1) * cols + (j - 1))] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    MatchResult res;
    res.assignment.assign(rows, -1);
    for (int j = 1; j <= cols; ++j)
        if (match[j] > 0) res.assignment[static_cast<size_t>(match[j] - 1)] = j - 1;
    for (int i = 0; i < rows; ++i)
        res.cost += cost[static_cast<size_t>(i * cols + res.assignment[static_cast<size_t>(i)])];
    return res;
}

// ---------------------------------------------------------------------------
// Box utilities
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> box_cxcywh_to_xyxy(const Tensor<T>& b) {
    Tensor<T> cx = slice(b, 1, 0, 1), cy = slice(b, 1, 1, 1);
    Tensor<T> hw = scale(slice(b, 1, 2, 1), T(0.5)), hh = scale(slice(b, 1, 3, 1), T(0.5));
    return concat<T>({sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)}, 1);
}

// 1 - (IoU - |enclosing \ union| / |enclosing|) per row; boxes cxcywh.
// Degenerate areas are floored at eps.
template <typename T>
Tensor<T> giou_loss(const Tensor<T>& pred_cxcywh, const Tensor<T>& gt_cxcywh, T eps = T(1e-7)) {
    Tensor<T> p = box_cxcywh_to_xyxy(pred_cxcywh);
    Tensor<T> g = box_cxcywh_to_xyxy(gt_cxcywh);
    auto col = [](const Tensor<T>& t, i64 c) { return slice(t, 1, c, 1); };
    Tensor<T> px1 = col(p, 0), py1 = col(p, 1), px2 = col(p, 2), py2 = col(p, 3);
    Tensor<T> gx1 = col(g, 0), gy1 = col(g, 1), gx2 = col(g, 2), gy2 = col(g, 3);
    Tensor<T> iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)));
    Tensor<T> ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)));
    Tensor<T> inter = mul(iw, ih);
    Tensor<T> eps_t(inter.shape(), eps);
    Tensor<T> area_p = maximum(mul(sub(px2, px1), sub(py2, py1)), eps_t);
    Tensor<T> area_g = maximum(mul(sub(gx2, gx1), sub(gy2, gy1)), eps_t);
    Tensor<T> uni = maximum(sub(add(area_p, area_g), inter), eps_t);
    Tensor<T> iou = div(inter, uni);
    Tensor<T> ew = sub(maximum(px2, gx2), minimum(px1, gx1));
    Tensor<T> eh = sub(maximum(py2, gy2), minimum(py1, gy1));
    Tensor<T> enc = maximum(mul(ew, eh), eps_t);
    Tensor<T> giou = sub(iou, div(sub(enc, uni), enc));
    return reshape(add_scalar(neg(giou), T(1)), {pred_cxcywh.shape()[0]});
}

// Plain-double IoU of two cxcywh boxes, for matching costs and targets.
inline double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ax1 = a[0] - a[2] / 2, ay1 = a[1] - a[3] / 2, ax2 = a[0] + a[2] / 2,
                 ay2 = a[1] + a[3] / 2;
    const double bx1 = b[0] - b[2] / 2, by1 = b[1] - b[3] / 2, bx2 = b[0] + b[2] / 2,
                 by2 = b[1] + b[3] / 2;
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = iw * ih;
    const double uni = std::max(1e-12, (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter);
    return inter / uni;
}

inline double box_giou_loss(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ax1 = a[0] - a[2] / 2, ay1 = a[1] - a[3] / 2, ax2 = a[0] + a[2] / 2,
                 ay2 = a[1] + a[3] / 2;
    const double bx1 = b[0] - b[2] / 2, by1 = b[1] - b[3] / 2, bx2 = b[0] + b[2] / 2,
                 by2 = b[1] + b[3] / 2;
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = iw * ih;
    const double uni =
        std::max(1e-7, (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter);
    const double ew = std::max(ax2, bx2) - std::min(ax1, bx1);
    const double eh = std::max(ay2, by2) - std::min(ay1, by1);
    const double enc = std::max(1e-7, ew * eh);
    return 1.0 - (inter / uni - (enc - uni) / enc);
}

// ---------------------------------------------------------------------------
// Elementwise loss builders
// ---------------------------------------------------------------------------

// Focal loss against (soft) targets in [0,1], summed over all entries:
//   t * alpha * (1-p)^gamma * -log(p) + (1-t) * (1-alpha) * p^gamma * -log(1-p)
// gamma is fixed at 2.
template <typename T>
Tensor<T> focal_loss_sum(const Tensor<T>& logits, const Tensor<T>& targets, double alpha) {
    Tensor<T> p = sigmoid(logits);
    Tensor<T> log_p = neg(softplus(neg(logits)));     // log sigmoid(x)
    Tensor<T> log_np = neg(softplus(logits));         // log (1 - sigmoid(x))
    Tensor<T> q = add_scalar(neg(p), T(1));           // 1 - p
    Tensor<T> pos = mul(mul(targets, mul(q, q)), neg(log_p));
    Tensor<T> negt = add_scalar(neg(targets), T(1));
    Tensor<T> negl = mul(mul(negt, mul(p, p)), neg(log_np));
    return sum_all(add(scale(pos, T(alpha)), scale(negl, T(1.0 - alpha))));
}

// BCE(sigmoid(logit), target) summed: softplus(x) - x * t per element.
template <typename T>
Tensor<T> bce_with_logits_sum(const Tensor<T>& logits, const Tensor<T>& targets) {
    return sum_all(sub(softplus(logits), mul(logits, targets)));
}

// ---------------------------------------------------------------------------
// Matching cost and per-layer detection loss
// ---------------------------------------------------------------------------

template <typename T>
struct ImageTargets {
    std::vector<int> classes;              // B entries in [0, num_classes)
    std::vector<std::array<double, 4>> boxes;  // cxcywh normalized
    Tensor<T> mask_vectors;                // (B, n) ground-truth DCT vectors, optional
    std::vector<Tensor<T>> token_labels;   // per level (P_l, c) soft labels, optional
};

// Cost over (gt, slot) pairs from the same three terms as the loss; class
// cost is focal-style in focal mode, -P_hat in cross-entropy mode.
template <typename T>
std::vector<double> build_match_cost(const Tensor<T>& class_logits, const Tensor<T>& boxes,
                                     const ImageTargets<T>& tgt, const LossWeights& w,
                                     ClassLossMode mode) {
    const i64 slots = class_logits.shape()[0];
    const int b = static_cast<int>(tgt.classes.size());
    std::vector<double> cost(static_cast<size_t>(b) * slots, 0.0);
    const i64 nc = class_logits.shape()[1];
    std::vector<double> probs(static_cast<size_t>(slots * nc));
    if (mode == ClassLossMode::FocalNoBackground) {
        for (i64 i = 0; i < slots * nc; ++i)
            probs[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-double(class_logits[i])));
    } else {
        for (i64 s = 0; s < slots; ++s) {
            double mx = -1e30;
            for (i64 c = 0; c < nc; ++c) mx = std::max(mx, double(class_logits[s * nc + c]));
            double den = 0.0;
            for (i64 c = 0; c < nc; ++c) den += std::exp(double(class_logits[s * nc + c]) - mx);
            for (i64 c = 0; c < nc; ++c)
                probs[static_cast<size_t>(s * nc + c)] =
                    std::exp(double(class_logits[s * nc + c]) - mx) / den;
        }
    }
    for (int gi = 0; gi < b; ++gi) {
        const int cls = tgt.classes[static_cast<size_t>(gi)];
        for (i64 s = 0; s < slots; ++s) {
            double class_cost;
            const double p = probs[static_cast<size_t>(s * nc + cls)];
            if (mode == ClassLossMode::FocalNoBackground) {
                const double pos =
                    w.focal_alpha * std::pow(1.0 - p, w.focal_gamma) * (-std::log(p + 1e-8));
                const double neg =
                    (1.0 - w.focal_alpha) * std::pow(p, w.focal_gamma) * (-std::log(1.0 - p + 1e-8));
                class_cost = pos - neg;
            } else {
                class_cost = -p;
            }
            std::array<double, 4> pb = {double(boxes[s * 4 + 0]), double(boxes[s * 4 + 1]),
                                        double(boxes[s * 4 + 2]), double(boxes[s * 4 + 3])};
            double l1 = 0.0;
            for (int c = 0; c < 4; ++c) l1 += std::abs(pb[static_cast<size_t>(c)] - tgt.boxes[static_cast<size_t>(gi)][static_cast<size_t>(c)]);
            cost[static_cast<size_t>(gi * slots + s)] =
                w.match_cl * class_cost + w.l1 * l1 +
                w.iou * box_giou_loss(pb, tgt.boxes[static_cast<size_t>(gi)]);
        }
    }
    return cost;
}

template <typename T>
struct DetectionLossParts {
    Tensor<T> classification, l1, giou;
    MatchResult match;
};

// One layer's detection loss under a fresh Hungarian assignment.
template <typename T>
DetectionLossParts<T> detection_loss(const Tensor<T>& class_logits, const Tensor<T>& boxes,
                                     const ImageTargets<T>& tgt, const LossWeights& w,
                                     ClassLossMode mode) {
    const i64 slots = class_logits.shape()[0];
    const i64 nc = class_logits.shape()[1];
    const int b = static_cast<int>(tgt.classes.size());
    DetectionLossParts<T> parts;
    if (b > 0) {
        const auto cost = build_match_cost(class_logits.detach(), boxes.detach(), tgt, w, mode);
        parts.match = hungarian_match(cost, b, static_cast<int>(slots));
    }
    const double norm = std::max(1, b);

    if (mode == ClassLossMode::FocalNoBackground) {
        Tensor<T> onehot({slots, nc});
        for (int gi = 0; gi < b; ++gi)
            onehot.at(parts.match.assignment[static_cast<size_t>(gi)],
                      tgt.classes[static_cast<size_t>(gi)]) = T(1);
        parts.classification = scale(focal_loss_sum(class_logits, onehot, w.focal_alpha),
                                     T(1.0 / norm));
    } else {
        // background = last class for every unmatched slot
        Tensor<T> onehot({slots, nc});
        std::vector<char> used(static_cast<size_t>(slots), 0);
        for (int gi = 0; gi < b; ++gi) {
            onehot.at(parts.match.assignment[static_cast<size_t>(gi)],
                      tgt.classes[static_cast<size_t>(gi)]) = T(1);
            used[static_cast<size_t>(parts.match.assignment[static_cast<size_t>(gi)])] = 1;
        }
        for (i64 s = 0; s < slots; ++s)
            if (!used[static_cast<size_t>(s)]) onehot.at(s, nc - 1) = T(1);
        parts.classification =
            scale(neg(sum_all(mul(onehot, log_softmax(class_logits, -1)))), T(1.0 / slots));
    }

    if (b > 0) {
        auto idx = std::make_shared<std::vector<i64>>();
        for (int gi = 0; gi < b; ++gi)
            for (i64 c = 0; c < 4; ++c)
                idx->push_back(parts.match.assignment[static_cast<size_t>(gi)] * 4 + c);
        Tensor<T> matched = gather_linear(boxes, {i64(b), 4}, idx);
        Tensor<T> gt({i64(b), 4});
        for (int gi = 0; gi < b; ++gi)
            for (int c = 0; c < 4; ++c)
                gt.at(gi, c) = T(tgt.boxes[static_cast<size_t>(gi)][static_cast<size_t>(c)]);
        parts.l1 = scale(sum_all(abs_val(sub(matched, gt))), T(1.0 / norm));
        parts.giou = scale(sum_all(giou_loss(matched, gt)), T(1.0 / norm));
    } else {
        parts.l1 = Tensor<T>::scalar(T(0));
        parts.giou = Tensor<T>::scalar(T(0));
    }
    return parts;
}

// Mean over matched objects of BCE(predicted IoU logit, actual box IoU).
// Targets come from detached boxes; the branch trains, the boxes do not
// chase their own score.
template <typename T>
Tensor<T> iou_aware_loss(const Tensor<T>& iou_logits, const Tensor<T>& boxes,
                         const ImageTargets<T>& tgt, const MatchResult& match) {
    const int b = static_cast<int>(tgt.classes.size());
    if (b == 0) return Tensor<T>::scalar(T(0));
    auto idx = std::make_shared<std::vector<i64>>();
    Tensor<T> targets({i64(b)});
    for (int gi = 0; gi < b; ++gi) {
        const i64 s = match.assignment[static_cast<size_t>(gi)];
        idx->push_back(s);
        std::array<double, 4> pb = {double(boxes[s * 4]), double(boxes[s * 4 + 1]),
                                    double(boxes[s * 4 + 2]), double(boxes[s * 4 + 3])};
        targets[gi] = T(box_iou(pb, tgt.boxes[static_cast<size_t>(gi)]));
    }
    Tensor<T> matched = gather_linear(reshape(iou_logits, {iou_logits.numel()}), {i64(b)}, idx);
    return scale(bce_with_logits_sum(matched, targets), T(1.0 / b));
}

// Eq.-style token labeling: mean over levels of the mean per-token focal
// loss against interpolated soft class labels.
template <typename T>
Tensor<T> token_labeling_loss(const std::vector<Tensor<T>>& token_logits,
                              const std::vector<Tensor<T>>& token_labels, double alpha) {
    if (token_logits.empty() || token_logits.size() != token_labels.size())
        shape_error("token_labeling_loss: level count mismatch");
    Tensor<T> total;
    for (size_t l = 0; l < token_logits.size(); ++l) {
        const i64 tokens = token_logits[l].shape()[0];
        Tensor<T> lvl = scale(focal_loss_sum(token_logits[l], token_labels[l], alpha),
                              T(1.0 / double(tokens)));
        total = total.defined() ? add(total, lvl) : lvl;
    }
    return scale(total, T(1.0 / double(token_logits.size())));
}

// ---------------------------------------------------------------------------
// Joint loss over all decoding layers plus the optional extras
// ---------------------------------------------------------------------------

template <typename T>
struct LossBreakdown {
    Tensor<T> total;
    std::map<std::string, double> parts;
    MatchResult final_match;  // assignment at the top decoding layer
};

template <typename T>
LossBreakdown<T> joint_loss(const DecodeOutput<T>& dec, const ImageTargets<T>& tgt,
                            const LossWeights& w, ClassLossMode mode,
                            const Tensor<T>& iou_logits = {},      // (D, 1)
                            const Tensor<T>& mask_pred = {},       // (D, n)
                            const std::vector<Tensor<T>>& token_logits = {},
                            bool aux_loss = true) {
    LossBreakdown<T> out;
    const size_t layers = dec.boxes.size();
    const size_t first = aux_loss ? 0 : layers - 1;
    Tensor<T> total;
    for (size_t j = first; j < layers; ++j) {
        auto parts = detection_loss(dec.class_logits[j], dec.boxes[j], tgt, w, mode);
        Tensor<T> det = add(scale(parts.classification, T(w.cl)),
                            add(scale(parts.l1, T(w.l1)), scale(parts.giou, T(w.iou))));
        total = total.defined() ? add(total, det) : det;
        if (j == layers - 1) {
            out.final_match = parts.match;
            out.parts["class"] = double(parts.classification.item());
            out.parts["l1"] = double(parts.l1.item());
            out.parts["giou"] = double(parts.giou.item());
        }
    }
    if (iou_logits.defined()) {
        Tensor<T> aware =
            iou_aware_loss(iou_logits, dec.boxes.back().detach(), tgt, out.final_match);
        out.parts["iou_aware"] = double(aware.item());
        total = add(total, scale(aware, T(w.aware)));
    }
    if (mask_pred.defined() && tgt.mask_vectors.defined() && !tgt.classes.empty()) {
        const int b = static_cast<int>(tgt.classes.size());
        const i64 n = mask_pred.shape()[1];
        auto idx = std::make_shared<std::vector<i64>>();
        for (int gi = 0; gi < b; ++gi)
            for (i64 c = 0; c < n; ++c)
                idx->push_back(out.final_match.assignment[static_cast<size_t>(gi)] * n + c);
        Tensor<T> matched = gather_linear(mask_pred, {i64(b), n}, idx);
        Tensor<T> seg = mean_all(abs_val(sub(matched, tgt.mask_vectors)));
        out.parts["seg"] = double(seg.item());
        total = add(total, scale(seg, T(w.seg)));
    }
    if (!token_logits.empty() && !tgt.token_labels.empty()) {
        Tensor<T> tok = token_labeling_loss(token_logits, tgt.token_labels, w.focal_alpha);
        out.parts["token"] = double(tok.item());
        total = add(total, scale(tok, T(w.token)));
    }
    out.total = total;
    out.parts["total"] = double(total.item());
    return out;
}

}  // namespace vidt
