#pragma once

// Average-precision evaluation: greedy score-ordered matching per IoU
// threshold and area under the all-point-interpolated PR curve.

#include "vidt/data.hpp"
#include "vidt/losses.hpp"

namespace vidt {

struct Detection {
    int image_id = 0;
    int category = 0;
    double score = 0.0;
    std::array<double, 4> box_cxcywh = {0, 0, 0, 0};  // normalized
    std::optional<BitMask> mask;
};

struct GroundTruthObject {
    int image_id = 0;
    int category = 0;
    std::array<double, 4> box_cxcywh = {0, 0, 0, 0};
    BitMask mask;
    bool has_mask = false;
};

inline double mask_iou(const BitMask& a, const BitMask& b) {
    if (a.h != b.h || a.w != b.w) return 0.0;
    i64 inter = 0, uni = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) {
        const bool pa = a.bits[i] != 0, pb = b.bits[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

// AP for one category at one IoU threshold; all-point interpolation.
inline double average_precision(std::vector<Detection> dets,
                                const std::vector<GroundTruthObject>& gts, int category,
                                double iou_thresh, bool use_mask = false) {
    std::vector<const GroundTruthObject*> cat_gts;
    for (const auto& g : gts)
        if (g.category == category) cat_gts.push_back(&g);
    if (cat_gts.empty()) return 0.0;
    dets.erase(std::remove_if(dets.begin(), dets.end(),
                              [&](const Detection& d) { return d.category != category; }),
               dets.end());
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<char> taken(cat_gts.size(), 0);
    std::vector<char> is_tp(dets.size(), 0);
    for (size_t di = 0; di < dets.size(); ++di) {
        double best = iou_thresh;
        int best_gt = -1;
        for (size_t gi = 0; gi < cat_gts.size(); ++gi) {
            if (taken[gi] || cat_gts[gi]->image_id != dets[di].image_id) continue;
            double iou;
            if (use_mask) {
                if (!dets[di].mask || !cat_gts[gi]->has_mask) continue;
                iou = mask_iou(*dets[di].mask, cat_gts[gi]->mask);
            } else {
                iou = box_iou(dets[di].box_cxcywh, cat_gts[gi]->box_cxcywh);
            }
            if (iou >= best) {
                best = iou;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0) {
            taken[static_cast<size_t>(best_gt)] = 1;
            is_tp[di] = 1;
        }
    }
    // precision/recall sweep, then area under the monotone envelope
    std::vector<double> precision, recall;
    double tp = 0, fp = 0;
    for (size_t di = 0; di < dets.size(); ++di) {
        if (is_tp[di]) ++tp;
        else ++fp;
        precision.push_back(tp / (tp + fp));
        recall.push_back(tp / double(cat_gts.size()));
    }
    double ap = 0.0, prev_r = 0.0;
    for (size_t i = 0; i < precision.size(); ++i) {
        double pmax = 0.0;
        for (size_t j = i; j < precision.size(); ++j) pmax = std::max(pmax, precision[j]);
        ap += (recall[i] - prev_r) * pmax;
        prev_r = recall[i];
    }
    return ap;
}

struct ApReport {
    double ap50 = 0.0;
    double ap = 0.0;  // mean over IoU .5:.05:.95
    double seg_ap50 = -1.0;
    double seg_ap = -1.0;
};

inline double mean_ap_over_categories(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruthObject>& gts,
                                      int num_categories, double thresh, bool use_mask) {
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < num_categories; ++c) {
        bool any = false;
        for (const auto& g : gts) any = any || g.category == c;
        if (!any) continue;
        sum += average_precision(dets, gts, c, thresh, use_mask);
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / counted;
}

inline ApReport evaluate_detections(const std::vector<Detection>& dets,
                                    const std::vector<GroundTruthObject>& gts,
                                    int num_categories, bool with_masks = false) {
    ApReport rep;
    rep.ap50 = mean_ap_over_categories(dets, gts, num_categories, 0.5, false);
    double acc = 0.0;
    for (int t = 0; t < 10; ++t)
        acc += mean_ap_over_categories(dets, gts, num_categories, 0.5 + 0.05 * t, false);
    rep.ap = acc / 10.0;
    if (with_masks) {
        rep.seg_ap50 = mean_ap_over_categories(dets, gts, num_categories, 0.5, true);
        double macc = 0.0;
        for (int t = 0; t < 10; ++t)
            macc += mean_ap_over_categories(dets, gts, num_categories, 0.5 + 0.05 * t, true);
        rep.seg_ap = macc / 10.0;
    }
    return rep;
}

inline std::vector<GroundTruthObject> dataset_ground_truth(const Dataset& ds) {
    std::vector<GroundTruthObject> gts;
    for (const auto& s : ds.samples)
        for (const auto& o : s.objects) {
            GroundTruthObject g;
            g.image_id = s.id;
            g.category = o.category;
            g.box_cxcywh = o.box_cxcywh;
            g.mask = o.mask;
            g.has_mask = o.has_mask;
            gts.push_back(std::move(g));
        }
    return gts;
}

}  // namespace vidt
