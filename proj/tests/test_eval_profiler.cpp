#include <catch2/catch_amalgamated.hpp>

#include "support/gradcheck.hpp"
#include "vidt/eval.hpp"
#include "vidt/profiler.hpp"

using namespace vidt;

namespace {

Detection det(int img, int cat, double score, std::array<double, 4> box) {
    Detection d;
    d.image_id = img;
    d.category = cat;
    d.score = score;
    d.box_cxcywh = box;
    return d;
}

GroundTruthObject gt(int img, int cat, std::array<double, 4> box) {
    GroundTruthObject g;
    g.image_id = img;
    g.category = cat;
    g.box_cxcywh = box;
    return g;
}

// Independent evaluator: recompute TP/FP from scratch at every prefix by
// greedy best-IoU matching, and integrate max-precision-to-the-right.
double naive_ap(std::vector<Detection> dets, const std::vector<GroundTruthObject>& gts,
                int category, double thr) {
    int total_gt = 0;
    for (const auto& g : gts) total_gt += g.category == category;
    if (total_gt == 0) return 0.0;
    dets.erase(std::remove_if(dets.begin(), dets.end(),
                              [&](const Detection& d) { return d.category != category; }),
               dets.end());
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<std::pair<double, double>> pr;  // (recall, precision) per prefix
    for (size_t cut = 1; cut <= dets.size(); ++cut) {
        std::vector<char> taken(gts.size(), 0);
        int tp = 0;
        for (size_t di = 0; di < cut; ++di) {
            int best_gt = -1;
            double best = thr;
            for (size_t gi = 0; gi < gts.size(); ++gi) {
                if (taken[gi] || gts[gi].category != category ||
                    gts[gi].image_id != dets[di].image_id)
                    continue;
                const double iou = box_iou(dets[di].box_cxcywh, gts[gi].box_cxcywh);
                if (iou >= best) {
                    best = iou;
                    best_gt = static_cast<int>(gi);
                }
            }
            if (best_gt >= 0) {
                taken[static_cast<size_t>(best_gt)] = 1;
                ++tp;
            }
        }
        pr.push_back({double(tp) / total_gt, double(tp) / double(cut)});
    }
    double ap = 0.0, prev_r = 0.0;
    for (size_t i = 0; i < pr.size(); ++i) {
        double pmax = 0.0;
        for (size_t j = i; j < pr.size(); ++j) pmax = std::max(pmax, pr[j].second);
        ap += (pr[i].first - prev_r) * pmax;
        prev_r = pr[i].first;
    }
    return ap;
}

}  // namespace

TEST_CASE("AP extremes: perfect predictions give 1.0, none give 0.0") {
    std::vector<GroundTruthObject> gts = {gt(0, 0, {0.3, 0.3, 0.2, 0.2}),
                                          gt(0, 1, {0.7, 0.7, 0.2, 0.2}),
                                          gt(1, 0, {0.5, 0.5, 0.4, 0.4})};
    std::vector<Detection> perfect;
    for (const auto& g : gts) perfect.push_back(det(g.image_id, g.category, 0.9, g.box_cxcywh));
    REQUIRE(mean_ap_over_categories(perfect, gts, 2, 0.5, false) == Catch::Approx(1.0));
    REQUIRE(mean_ap_over_categories({}, gts, 2, 0.5, false) == Catch::Approx(0.0));
}

TEST_CASE("AP matches a brute-force PR evaluator on 10 hand-built cases") {
    using Case = std::pair<std::vector<Detection>, std::vector<GroundTruthObject>>;
    std::vector<Case> cases;
    const std::array<double, 4> a = {0.3, 0.3, 0.2, 0.2};
    const std::array<double, 4> b = {0.7, 0.7, 0.2, 0.2};
    const std::array<double, 4> near_a = {0.32, 0.3, 0.2, 0.2};
    const std::array<double, 4> off = {0.9, 0.1, 0.1, 0.1};
    // 1: perfect single detection
    cases.push_back({{det(0, 0, 0.9, a)}, {gt(0, 0, a)}});
    // 2: duplicate detections of one object
    cases.push_back({{det(0, 0, 0.9, a), det(0, 0, 0.8, near_a)}, {gt(0, 0, a)}});
    // 3: false positive above the true positive
    cases.push_back({{det(0, 0, 0.95, off), det(0, 0, 0.8, a)}, {gt(0, 0, a)}});
    // 4: missed object
    cases.push_back({{det(0, 0, 0.9, a)}, {gt(0, 0, a), gt(0, 0, b)}});
    // 5: two images
    cases.push_back({{det(0, 0, 0.9, a), det(1, 0, 0.7, b)}, {gt(0, 0, a), gt(1, 0, b)}});
    // 6: image mismatch makes the detection a false positive
    cases.push_back({{det(1, 0, 0.9, a)}, {gt(0, 0, a)}});
    // 7: low-IoU detection
    cases.push_back({{det(0, 0, 0.9, {0.5, 0.5, 0.2, 0.2})}, {gt(0, 0, a)}});
    // 8: interleaved scores across images
    cases.push_back({{det(0, 0, 0.9, a), det(1, 0, 0.85, off), det(1, 0, 0.8, b)},
                     {gt(0, 0, a), gt(1, 0, b)}});
    // 9: many detections, partial credit
    cases.push_back({{det(0, 0, 0.9, a), det(0, 0, 0.8, off), det(0, 0, 0.7, b),
                      det(0, 0, 0.6, off)},
                     {gt(0, 0, a), gt(0, 0, b)}});
    // 10: score order flipped relative to quality
    cases.push_back({{det(0, 0, 0.6, a), det(0, 0, 0.9, off)}, {gt(0, 0, a)}});

    for (size_t ci = 0; ci < cases.size(); ++ci) {
        INFO("case " << ci + 1);
        const auto& [dets, gts] = cases[ci];
        for (double thr : {0.5, 0.75}) {
            const double got = average_precision(dets, gts, 0, thr, false);
            const double want = naive_ap(dets, gts, 0, thr);
            REQUIRE(got == Catch::Approx(want).margin(1e-12));
        }
    }
}

TEST_CASE("mask AP uses mask IoU") {
    BitMask ma;
    ma.h = ma.w = 8;
    ma.bits.assign(64, 0);
    for (i64 y = 0; y < 4; ++y)
        for (i64 x = 0; x < 4; ++x) ma.at(y, x) = 1;
    BitMask shifted = ma;
    std::fill(shifted.bits.begin(), shifted.bits.end(), 0);
    for (i64 y = 0; y < 4; ++y)
        for (i64 x = 1; x < 5; ++x) shifted.at(y, x) = 1;

    GroundTruthObject g = gt(0, 0, {0.25, 0.25, 0.5, 0.5});
    g.mask = ma;
    g.has_mask = true;
    Detection exact = det(0, 0, 0.9, {0.25, 0.25, 0.5, 0.5});
    exact.mask = ma;
    Detection moved = det(0, 0, 0.9, {0.25, 0.25, 0.5, 0.5});
    moved.mask = shifted;  // IoU 3/5 = 0.6
    REQUIRE(average_precision({exact}, {g}, 0, 0.9, true) == Catch::Approx(1.0));
    REQUIRE(average_precision({moved}, {g}, 0, 0.9, true) == Catch::Approx(0.0));
    REQUIRE(average_precision({moved}, {g}, 0, 0.5, true) == Catch::Approx(1.0));
}

TEST_CASE("fit_exponent: exact powers and the minimum-point rule") {
    std::vector<std::pair<double, double>> linear, quad;
    for (double x : {64.0, 256.0, 1024.0, 4096.0}) {
        linear.push_back({x, 7.0 * x});
        quad.push_back({x, 0.3 * x * x});
    }
    REQUIRE(fit_exponent(linear).slope == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(fit_exponent(quad).slope == Catch::Approx(2.0).margin(1e-9));
    REQUIRE_THROWS_AS(fit_exponent({{1.0, 1.0}, {2.0, 2.0}}), std::invalid_argument);
}

TEST_CASE("analytic sweep: RAM linear, YOLOS quadratic at the reference shape") {
    RamBlockShape shape;  // d=48, k=7, D=100
    const auto points = sweep_patch_tokens({{32, 32}, {64, 64}, {128, 128}}, shape);
    REQUIRE(points[0].patch_tokens == 1 << 10);
    REQUIRE(points[2].patch_tokens == 1 << 14);
    const auto ram = fit_ram_exponent(points);
    const auto yolos = fit_yolos_exponent(points);
    REQUIRE(ram.slope > 0.9);
    REQUIRE(ram.slope < 1.1);
    REQUIRE(yolos.slope > 1.9);
    REQUIRE(yolos.slope < 2.1);

    // doubling P at a padding-free size: RAM within 2x +/- 5%, YOLOS -> 4x
    const auto pair = sweep_patch_tokens({{70, 70}, {70, 140}}, shape);
    const double ram_ratio = double(pair[1].ram_macs) / double(pair[0].ram_macs);
    const double yolos_ratio = double(pair[1].yolos_macs) / double(pair[0].yolos_macs);
    REQUIRE(ram_ratio == Catch::Approx(2.0).epsilon(0.05));
    REQUIRE(yolos_ratio == Catch::Approx(4.0).epsilon(0.10));

    // D = 0 zeroes every DET bucket
    RamBlockShape no_det = shape;
    no_det.det_tokens = 0;
    const auto ledger = predict_ram_block(64, 64, no_det);
    REQUIRE(ledger.by_kind(AttnKind::DetDet) == 0);
    REQUIRE(ledger.by_kind(AttnKind::DetPatch) == 0);
    REQUIRE(ledger.by_kind(AttnKind::PatchPatch) > 0);
}

TEST_CASE("dispatch-time counters agree exactly with the analytic walker") {
    // the audit: run the real kernels once and compare ledgers entry-by-entry
    std::mt19937_64 rng(3);
    const i64 d = 48;
    const int k = 7;
    const i64 det_count = 10;
    RamProjections<double> proj;
    proj.init(d, 3, rng);
    Tensor<double> map = testing_support::random_tensor({20, 26, d}, rng);
    Tensor<double> table({i64(2 * k - 1) * (2 * k - 1), 3});
    Tensor<double> det = testing_support::random_tensor({det_count, d}, rng);
    Tensor<double> pos = testing_support::random_tensor({det_count, d}, rng);
    Tensor<double> spatial = testing_support::random_tensor({20 * 26, d}, rng);

    FlopLedger measured;
    {
        LedgerScope scope(measured);
        windowed_patch_attention(proj, map, table, k, 0, 20, 26, 0);
        bound_det_attention(proj, det, pos, reshape(map, {20 * 26, d}), spatial,
                            SpatialMode::PreAddition, Tensor<double>{}, 0);
        yolos_joint_attention(proj, concat<double>({reshape(map, {20 * 26, d}), det}, 0));
    }
    RamBlockShape shape;
    shape.d = d;
    shape.window = k;
    shape.det_tokens = det_count;
    FlopLedger predicted = predict_ram_block(20, 26, shape);
    predicted.merge(predict_yolos_block(20 * 26, shape));
    REQUIRE(measured == predicted);
    // totals equal the sum of per-kernel counts (no double counting)
    std::uint64_t sum = 0;
    for (const auto& [key, macs] : measured.entries()) sum += macs;
    REQUIRE(sum == measured.total());
}
