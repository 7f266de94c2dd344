#include <catch2/catch_amalgamated.hpp>

#include "support/gradcheck.hpp"
#include "support/naive_attention.hpp"
#include "vidt/backbone.hpp"
#include "vidt/ram.hpp"

using namespace vidt;
using testing_support::grad_check;
using testing_support::naive_affine;
using testing_support::naive_mhsa;
using testing_support::random_tensor;

namespace {

RamProjections<double> random_proj(i64 d, int nh, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RamProjections<double> p;
    p.init(d, nh, rng);
    fill_normal(p.q.b, 0.0, 0.1, rng);
    fill_normal(p.k.b, 0.0, 0.1, rng);
    fill_normal(p.v.b, 0.0, 0.1, rng);
    fill_normal(p.out.b, 0.0, 0.1, rng);
    return p;
}

std::vector<double> to_vec(const Tensor<double>& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
}

}  // namespace

TEST_CASE("window partition/reverse is an exact inverse, with and without roll") {
    std::mt19937_64 rng(1);
    Tensor<double> map = random_tensor({8, 8, 3}, rng);
    Tensor<double> wins = window_partition(map, 4);
    REQUIRE(wins.shape() == Shape{4, 16, 3});
    Tensor<double> back = window_reverse(wins, 4, 8, 8);
    for (i64 i = 0; i < map.numel(); ++i) REQUIRE(back[i] == map[i]);

    Tensor<double> rolled = roll_map(map, 2, 2);
    Tensor<double> unrolled = roll_map(window_reverse(window_partition(rolled, 4), 4, 8, 8), -2, -2);
    for (i64 i = 0; i < map.numel(); ++i) REQUIRE(unrolled[i] == map[i]);
}

TEST_CASE("single token per window: attention reduces to out(v(token))") {
    const i64 d = 6;
    auto proj = random_proj(d, 2, 42);
    std::mt19937_64 rng(2);
    Tensor<double> map = random_tensor({2, 2, d}, rng);
    Tensor<double> table({1, 2});  // k=1 -> (2*1-1)^2 = 1 offset
    Tensor<double> got = windowed_patch_attention(proj, map, table, 1, 0, 2, 2, 0);
    for (i64 t = 0; t < 4; ++t) {
        std::vector<double> tok(map.data() + t * d, map.data() + (t + 1) * d);
        auto v = naive_affine(tok, 1, proj.v.w, proj.v.b);
        auto want = naive_affine(v, 1, proj.out.w, proj.out.b);
        for (i64 c = 0; c < d; ++c)
            REQUIRE(std::abs(got[t * d + c] - want[static_cast<size_t>(c)]) < 1e-12);
    }
}

TEST_CASE("windowed attention equals naive global attention when k >= map") {
    const i64 d = 8;
    const int nh = 2;
    auto proj = random_proj(d, nh, 7);
    std::mt19937_64 rng(3);
    Tensor<double> map = random_tensor({4, 4, d}, rng);
    Tensor<double> table = random_tensor({49, nh}, rng);  // k=4 -> (2*4-1)^2
    Tensor<double> got = windowed_patch_attention(proj, map, table, 4, 0, 4, 4, 0);

    // oracle: dense attention over all 16 tokens with the true relative bias
    std::vector<double> bias(static_cast<size_t>(nh * 16 * 16));
    for (int h = 0; h < nh; ++h)
        for (i64 i = 0; i < 16; ++i)
            for (i64 j = 0; j < 16; ++j) {
                const i64 dy = i / 4 - j / 4 + 3, dx = i % 4 - j % 4 + 3;
                bias[static_cast<size_t>((h * 16 + i) * 16 + j)] = table.at(dy * 7 + dx, h);
            }
    auto want = naive_mhsa(proj, to_vec(map), 16, to_vec(map), 16, to_vec(map), {}, bias);
    for (i64 i = 0; i < got.numel(); ++i)
        REQUIRE(std::abs(got[i] - want[static_cast<size_t>(i)]) < 1e-9);
}

TEST_CASE("shifted windows with mask equal the naive cross-window oracle (8x8)") {
    const i64 d = 8;
    const int nh = 2, k = 4, s = 2;
    auto proj = random_proj(d, nh, 11);
    std::mt19937_64 rng(5);
    Tensor<double> map = random_tensor({8, 8, d}, rng);
    Tensor<double> table = random_tensor({49, nh}, rng);
    Tensor<double> got = windowed_patch_attention(proj, map, table, k, s, 8, 8, 0);

    // true shifted partition: boundaries at {0, k-s, k-s+k, ...} per axis
    auto cell_of = [&](i64 p) { return p < k - s ? 0 : 1 + (p - (k - s)) / k; };
    std::vector<char> allowed(64 * 64, 0);
    std::vector<double> bias(static_cast<size_t>(nh * 64 * 64), 0.0);
    for (i64 i = 0; i < 64; ++i)
        for (i64 j = 0; j < 64; ++j) {
            const i64 yi = i / 8, xi = i % 8, yj = j / 8, xj = j % 8;
            const bool same =
                cell_of(yi) == cell_of(yj) && cell_of(xi) == cell_of(xj);
            allowed[static_cast<size_t>(i * 64 + j)] = same;
            if (same)
                for (int h = 0; h < nh; ++h)
                    bias[static_cast<size_t>((h * 64 + i) * 64 + j)] =
                        table.at((yi - yj + 3) * 7 + (xi - xj + 3), h);
        }
    auto want = naive_mhsa(proj, to_vec(map), 64, to_vec(map), 64, to_vec(map), allowed, bias);
    for (i64 i = 0; i < got.numel(); ++i)
        REQUIRE(std::abs(got[i] - want[static_cast<size_t>(i)]) < 1e-6);
}

TEST_CASE("det_det_attention: D=1 identity case and permutation equivariance") {
    const i64 d = 6;
    auto proj = random_proj(d, 3, 13);
    std::mt19937_64 rng(9);
    Tensor<double> one = random_tensor({1, d}, rng);
    Tensor<double> pos1 = random_tensor({1, d}, rng);
    Tensor<double> out1 = det_det_attention(proj, one, pos1, 0);
    auto v = naive_affine(to_vec(one), 1, proj.v.w, proj.v.b);
    auto want = naive_affine(v, 1, proj.out.w, proj.out.b);
    for (i64 c = 0; c < d; ++c) REQUIRE(std::abs(out1[c] - want[static_cast<size_t>(c)]) < 1e-12);

    Tensor<double> det = random_tensor({5, d}, rng);
    Tensor<double> pos = random_tensor({5, d}, rng);
    Tensor<double> base = det_det_attention(proj, det, pos, 0);
    const std::array<i64, 5> perm = {3, 0, 4, 1, 2};
    Tensor<double> det_p({5, d}), pos_p({5, d});
    for (i64 r = 0; r < 5; ++r)
        for (i64 c = 0; c < d; ++c) {
            det_p.at(r, c) = det.at(perm[r], c);
            pos_p.at(r, c) = pos.at(perm[r], c);
        }
    Tensor<double> permuted = det_det_attention(proj, det_p, pos_p, 0);
    for (i64 r = 0; r < 5; ++r)
        for (i64 c = 0; c < d; ++c)
            REQUIRE(std::abs(permuted.at(r, c) - base.at(perm[r], c)) < 1e-10);
}

TEST_CASE("bound attention equals the concatenated single-softmax oracle") {
    const i64 d = 8, dq = 4, p = 9;
    const int nh = 2;
    auto proj = random_proj(d, nh, 17);
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<double> det = random_tensor({dq, d}, rng);
        Tensor<double> pos = random_tensor({dq, d}, rng);
        Tensor<double> patch = random_tensor({p, d}, rng);
        Tensor<double> spatial = random_tensor({p, d}, rng);
        Tensor<double> got = bound_det_attention(proj, det, pos, patch, spatial,
                                                 SpatialMode::PreAddition, Tensor<double>{}, 0);
        // oracle: queries det+pos; keys [det+pos ; patch+spatial];
        // values [det ; patch]; one softmax over all dq+p keys
        std::vector<double> q_emb = to_vec(add(det, pos));
        std::vector<double> k_emb = q_emb;
        std::vector<double> kp = to_vec(add(patch, spatial));
        k_emb.insert(k_emb.end(), kp.begin(), kp.end());
        std::vector<double> v_emb = to_vec(det);
        std::vector<double> vp = to_vec(patch);
        v_emb.insert(v_emb.end(), vp.begin(), vp.end());
        const auto qv = naive_affine(q_emb, dq, proj.q.w, proj.q.b);
        const auto kv = naive_affine(k_emb, dq + p, proj.k.w, proj.k.b);
        const auto vv = naive_affine(v_emb, dq + p, proj.v.w, proj.v.b);
        const i64 dh = d / nh;
        std::vector<double> mixed(static_cast<size_t>(dq * d), 0.0);
        for (int h = 0; h < nh; ++h)
            for (i64 i = 0; i < dq; ++i) {
                std::vector<double> logit(static_cast<size_t>(dq + p));
                double mx = -1e30;
                for (i64 j = 0; j < dq + p; ++j) {
                    double s = 0.0;
                    for (i64 c = 0; c < dh; ++c)
                        s += qv[static_cast<size_t>(i * d + h * dh + c)] *
                             kv[static_cast<size_t>(j * d + h * dh + c)];
                    logit[static_cast<size_t>(j)] = s / std::sqrt(double(dh));
                    mx = std::max(mx, logit[static_cast<size_t>(j)]);
                }
                double den = 0.0;
                for (i64 j = 0; j < dq + p; ++j) den += std::exp(logit[static_cast<size_t>(j)] - mx);
                for (i64 j = 0; j < dq + p; ++j) {
                    const double wgt = std::exp(logit[static_cast<size_t>(j)] - mx) / den;
                    for (i64 c = 0; c < dh; ++c)
                        mixed[static_cast<size_t>(i * d + h * dh + c)] +=
                            wgt * vv[static_cast<size_t>(j * d + h * dh + c)];
                }
            }
        auto expect = naive_affine(mixed, dq, proj.out.w, proj.out.b);
        for (i64 i = 0; i < got.numel(); ++i)
            REQUIRE(std::abs(got[i] - expect[static_cast<size_t>(i)]) < 1e-6);
    }
}

TEST_CASE("bound attention with zero patch content reduces to augmented det self-attention") {
    const i64 d = 6, dq = 3, p = 5;
    auto proj = random_proj(d, 2, 19);
    std::mt19937_64 rng(21);
    Tensor<double> det = random_tensor({dq, d}, rng);
    Tensor<double> pos = random_tensor({dq, d}, rng);
    Tensor<double> zero_patch({p, d});
    Tensor<double> zero_spatial({p, d});
    Tensor<double> got = bound_det_attention(proj, det, pos, zero_patch, zero_spatial,
                                             SpatialMode::PreAddition, Tensor<double>{}, 0);
    // oracle over det keys plus p phantom keys with K = W_k(0), V = W_v(0)
    std::vector<double> q_emb = to_vec(add(det, pos));
    std::vector<double> k_emb = q_emb;
    std::vector<double> v_emb = to_vec(det);
    for (i64 j = 0; j < p; ++j)
        for (i64 c = 0; c < d; ++c) {
            k_emb.push_back(0.0);
            v_emb.push_back(0.0);
        }
    const auto qv = naive_affine(q_emb, dq, proj.q.w, proj.q.b);
    const auto kv = naive_affine(k_emb, dq + p, proj.k.w, proj.k.b);
    const auto vv = naive_affine(v_emb, dq + p, proj.v.w, proj.v.b);
    const i64 dh = d / 2;
    std::vector<double> mixed(static_cast<size_t>(dq * d), 0.0);
    for (int h = 0; h < 2; ++h)
        for (i64 i = 0; i < dq; ++i) {
            double mx = -1e30;
            std::vector<double> logit(static_cast<size_t>(dq + p));
            for (i64 j = 0; j < dq + p; ++j) {
                double s = 0.0;
                for (i64 c = 0; c < dh; ++c)
                    s += qv[static_cast<size_t>(i * d + h * dh + c)] *
                         kv[static_cast<size_t>(j * d + h * dh + c)];
                logit[static_cast<size_t>(j)] = s / std::sqrt(double(dh));
                mx = std::max(mx, logit[static_cast<size_t>(j)]);
            }
            double den = 0.0;
            for (i64 j = 0; j < dq + p; ++j) den += std::exp(logit[static_cast<size_t>(j)] - mx);
            for (i64 j = 0; j < dq + p; ++j) {
                const double wgt = std::exp(logit[static_cast<size_t>(j)] - mx) / den;
                for (i64 c = 0; c < dh; ++c)
                    mixed[static_cast<size_t>(i * d + h * dh + c)] +=
                        wgt * vv[static_cast<size_t>(j * d + h * dh + c)];
            }
        }
    auto expect = naive_affine(mixed, dq, proj.out.w, proj.out.b);
    for (i64 i = 0; i < got.numel(); ++i)
        REQUIRE(std::abs(got[i] - expect[static_cast<size_t>(i)]) < 1e-9);
}

TEST_CASE("bound attention rows sum to 1 jointly over DET and PATCH keys") {
    const i64 d = 8, dq = 4, p = 6;
    auto proj = random_proj(d, 2, 23);
    std::mt19937_64 rng(25);
    Tensor<double> det = random_tensor({dq, d}, rng);
    Tensor<double> pos = random_tensor({dq, d}, rng);
    Tensor<double> patch = random_tensor({p, d}, rng);
    Tensor<double> spatial = random_tensor({p, d}, rng);
    Tensor<double> attn;
    bound_det_attention(proj, det, pos, patch, spatial, SpatialMode::PreAddition,
                        Tensor<double>{}, 0, &attn);
    REQUIRE(attn.shape() == Shape{dq, dq + p});
    for (i64 i = 0; i < dq; ++i) {
        double s = 0.0;
        for (i64 j = 0; j < dq + p; ++j) s += attn.at(i, j);
        REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("pre vs post addition changes where the spatial table enters") {
    const i64 d = 6, dq = 2, p = 4;
    auto proj = random_proj(d, 2, 29);
    std::mt19937_64 rng(31);
    Tensor<double> det = random_tensor({dq, d}, rng);
    Tensor<double> pos = random_tensor({dq, d}, rng);
    Tensor<double> patch = random_tensor({p, d}, rng);
    Tensor<double> spatial = random_tensor({p, d}, rng);
    Tensor<double> pre = bound_det_attention(proj, det, pos, patch, spatial,
                                             SpatialMode::PreAddition, Tensor<double>{}, 0);
    Tensor<double> post = bound_det_attention(proj, det, pos, patch, spatial,
                                              SpatialMode::PostAddition, Tensor<double>{}, 0);
    Tensor<double> none = bound_det_attention(proj, det, pos, patch, Tensor<double>({p, d}),
                                              SpatialMode::None, Tensor<double>{}, 0);
    bool pre_post_differ = false, pre_none_differ = false;
    for (i64 i = 0; i < pre.numel(); ++i) {
        pre_post_differ = pre_post_differ || std::abs(pre[i] - post[i]) > 1e-9;
        pre_none_differ = pre_none_differ || std::abs(pre[i] - none[i]) > 1e-9;
    }
    REQUIRE(pre_post_differ);
    REQUIRE(pre_none_differ);
}

TEST_CASE("RAM kernels are differentiable end to end") {
    std::mt19937_64 rng(33);
    auto res = grad_check(
        [](std::vector<Tensor<double>>& in) {
            RamProjections<double> proj;
            proj.dim = 4;
            proj.heads = 2;
            proj.q.w = in[0];
            proj.k.w = in[1];
            proj.v.w = in[2];
            proj.out.w = in[3];
            Tensor<double> out = bound_det_attention(proj, in[4], in[5], in[6], in[7],
                                                     SpatialMode::PreAddition, Tensor<double>{}, 0);
            return sum_all(mul(out, in[8]));
        },
        {random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
         random_tensor({4, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2, 4}, rng),
         random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)});
    REQUIRE(res.max_rel_err < 1e-4);

    auto res2 = grad_check(
        [](std::vector<Tensor<double>>& in) {
            RamProjections<double> proj;
            proj.dim = 4;
            proj.heads = 2;
            proj.q.w = in[0];
            proj.k.w = in[1];
            proj.v.w = in[2];
            proj.out.w = in[3];
            Tensor<double> out =
                windowed_patch_attention(proj, in[4], in[5], 2, 1, 4, 3, 0);
            return sum_all(mul(out, in[6]));
        },
        {random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
         random_tensor({4, 4}, rng), random_tensor({4, 3, 4}, rng), random_tensor({9, 2}, rng),
         random_tensor({4, 3, 4}, rng)});
    REQUIRE(res2.max_rel_err < 1e-4);
}

TEST_CASE("flop ledger: window attention is linear in P, joint mode quadratic") {
    auto proj = random_proj(8, 2, 35);
    std::mt19937_64 rng(37);
    auto run_ram = [&](i64 h, i64 w) {
        FlopLedger ledger;
        LedgerScope scope(ledger);
        Tensor<double> map = random_tensor({h, w, 8}, rng);
        Tensor<double> table({9, 2});
        windowed_patch_attention(proj, map, table, 2, 0, h, w, 0);
        return ledger.by_kind(AttnKind::PatchPatch);
    };
    const auto m1 = run_ram(4, 4), m2 = run_ram(4, 8);
    REQUIRE(double(m2) / double(m1) == Catch::Approx(2.0).margin(0.05));

    auto run_yolos = [&](i64 tokens) {
        FlopLedger ledger;
        LedgerScope scope(ledger);
        Tensor<double> t = random_tensor({tokens, 8}, rng);
        yolos_joint_attention(proj, t);
        return ledger.by_kind(AttnKind::YolosJoint);
    };
    // large-token regime: quadratic term dominates
    const auto y1 = run_yolos(512), y2 = run_yolos(1024);
    REQUIRE(double(y2) / double(y1) == Catch::Approx(4.0).epsilon(0.10));

    // D = 0: no DET kernels executed, DET buckets stay empty
    FlopLedger ledger;
    {
        LedgerScope scope(ledger);
        Tensor<double> map = random_tensor({4, 4, 8}, rng);
        Tensor<double> table({9, 2});
        windowed_patch_attention(proj, map, table, 2, 0, 4, 4, 0);
    }
    REQUIRE(ledger.by_kind(AttnKind::DetDet) == 0);
    REQUIRE(ledger.by_kind(AttnKind::DetPatch) == 0);
}
