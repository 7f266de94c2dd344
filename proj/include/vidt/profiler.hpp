#pragma once

// Complexity verification: analytic MAC predictions for one attention block
// at a given map size (mirroring the kernels' dispatch-time accounting
// exactly), sweeps over the PATCH-token count, and log-log exponent fits.

#include "vidt/flops.hpp"
#include "vidt/ram.hpp"

namespace vidt {

struct RamBlockShape {
    i64 d = 48;          // embedding dim
    int window = 7;      // window size k
    i64 det_tokens = 100;
    bool cross = true;     // bound DET x [DET, PATCH] attention present
    bool det_self = true;  // plain DET self-attention when cross is off
    int depth = 1;         // number of blocks at this scale
};

// Same formulas the kernels report at dispatch time.
inline FlopLedger predict_ram_block(i64 h, i64 w, const RamBlockShape& s) {
    FlopLedger ledger;
    const i64 k = s.window;
    const i64 hp = (h + k - 1) / k * k, wp = (w + k - 1) / k * k;
    const std::uint64_t windows = std::uint64_t((hp / k) * (wp / k));
    const std::uint64_t kk = std::uint64_t(k) * std::uint64_t(k);
    const std::uint64_t d = std::uint64_t(s.d);
    const std::uint64_t det = std::uint64_t(s.det_tokens);
    const std::uint64_t p = std::uint64_t(h) * std::uint64_t(w);
    for (int b = 0; b < s.depth; ++b) {
        ledger.add(AttnKind::PatchPatch, 0, windows * attention_macs(kk, kk, d));
        if (s.cross && det > 0) {
            ledger.add(AttnKind::DetDet, 0, attention_macs(det, det, d));
            ledger.add(AttnKind::DetPatch, 0, 2 * p * d * d + 2 * det * p * d);
        } else if (s.det_self && det > 0) {
            ledger.add(AttnKind::DetDet, 0, attention_macs(det, det, d));
        }
    }
    return ledger;
}

// Joint global attention over the appended PATCH + DET sequence.
inline FlopLedger predict_yolos_block(i64 p, const RamBlockShape& s) {
    FlopLedger ledger;
    const std::uint64_t t = std::uint64_t(p) + std::uint64_t(s.det_tokens);
    const std::uint64_t d = std::uint64_t(s.d);
    for (int b = 0; b < s.depth; ++b) ledger.add(AttnKind::YolosJoint, 0, attention_macs(t, t, d));
    return ledger;
}

struct SweepPoint {
    i64 patch_tokens = 0;
    std::uint64_t ram_macs = 0;
    std::uint64_t yolos_macs = 0;
};

// One point per (h, w) map size; P = h * w.
inline std::vector<SweepPoint> sweep_patch_tokens(const std::vector<std::pair<i64, i64>>& sizes,
                                                  const RamBlockShape& shape) {
    std::vector<SweepPoint> points;
    for (const auto& [h, w] : sizes) {
        SweepPoint pt;
        pt.patch_tokens = h * w;
        pt.ram_macs = predict_ram_block(h, w, shape).total();
        pt.yolos_macs = predict_yolos_block(h * w, shape).total();
        points.push_back(pt);
    }
    return points;
}

struct ExponentFit {
    double slope = 0.0;
    double stderr_slope = 0.0;
    double intercept = 0.0;
};

// Least-squares line through (ln x, ln y).
inline ExponentFit fit_exponent(const std::vector<std::pair<double, double>>& points) {
    const size_t n = points.size();
    if (n < 3)
        throw std::invalid_argument("fit_exponent needs at least 3 points, got " +
                                    std::to_string(n));
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        const double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = double(n) * sxx - sx * sx;
    ExponentFit fit;
    fit.slope = (double(n) * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / double(n);
    double rss = 0;
    for (const auto& [x, y] : points) {
        const double r = std::log(y) - (fit.intercept + fit.slope * std::log(x));
        rss += r * r;
    }
    if (n > 2) fit.stderr_slope = std::sqrt(rss / double(n - 2) / (sxx - sx * sx / double(n)));
    return fit;
}

inline ExponentFit fit_ram_exponent(const std::vector<SweepPoint>& points) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : points) xy.push_back({double(p.patch_tokens), double(p.ram_macs)});
    return fit_exponent(xy);
}

inline ExponentFit fit_yolos_exponent(const std::vector<SweepPoint>& points) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : points) xy.push_back({double(p.patch_tokens), double(p.yolos_macs)});
    return fit_exponent(xy);
}

}  // namespace vidt
