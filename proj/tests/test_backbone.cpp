#include <catch2/catch_amalgamated.hpp>

#include "support/gradcheck.hpp"
#include "vidt/backbone.hpp"

using namespace vidt;
using testing_support::random_tensor;

namespace {

BackboneConfig pico_config(int window = 4) {
    BackboneConfig cfg;
    cfg.preset = stage_preset("swin_pico");
    cfg.window = window;
    return cfg;
}

Tensor<double> random_image(i64 h, i64 w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor<double> img({h, w, 3});
    fill_uniform(img, -0.5, 0.5, rng);
    return img;
}

}  // namespace

TEST_CASE("padding arithmetic: 800x1333 pads to 800x1344 and maps to 200x336") {
    REQUIRE(detail::round_up(1333, 32) == 1344);
    REQUIRE(detail::round_up(800, 32) == 800);
    REQUIRE(1344 / 4 == 336);
    REQUIRE(detail::ceil_div(1333, 4) == 334);  // recorded valid extent
}

TEST_CASE("patch merge: shapes, 1/4 token ratio and constant-map symmetry") {
    std::mt19937_64 rng(3);
    Tensor<double> map = random_tensor({4, 4, 5}, rng);
    Tensor<double> merged = detail::merge_cells(map);
    REQUIRE(merged.shape() == Shape{2, 2, 20});
    REQUIRE(merged.numel() == map.numel());  // 1/4 tokens, 4x channels
    REQUIRE(merged.at(0, 0, 0) == map.at(0, 0, 0));
    REQUIRE(merged.at(0, 0, 5) == map.at(1, 0, 0));
    REQUIRE(merged.at(0, 0, 10) == map.at(0, 1, 0));
    REQUIRE(merged.at(0, 0, 15) == map.at(1, 1, 0));

    Tensor<double> cmap({6, 6, 3}, 2.5);
    Tensor<double> cm = detail::merge_cells(cmap);
    for (i64 i = 0; i < cm.numel(); ++i) REQUIRE(cm[i] == 2.5);
}

TEST_CASE("det_dim_duplicate doubles the embedding, keeps D") {
    Tensor<double> det = Tensor<double>::from_data({1, 2}, {1.0, 2.0});
    Tensor<double> dup = detail::det_dim_duplicate(det);
    REQUIRE(dup.shape() == Shape{1, 4});
    REQUIRE(dup[0] == 1.0);
    REQUIRE(dup[1] == 2.0);
    REQUIRE(dup[2] == 1.0);
    REQUIRE(dup[3] == 2.0);

    std::mt19937_64 rng(5);
    Tensor<double> many = random_tensor({7, 6}, rng);
    REQUIRE(detail::det_dim_duplicate(many).shape() == Shape{7, 12});
}

TEST_CASE("backbone forward: pico on 64x64 gives the expected pyramid") {
    std::mt19937_64 rng = substream(100, "init");
    SwinBackbone<double> bb;
    bb.init(pico_config(), rng);
    const i64 D = 10;
    Tensor<double> det = random_tensor({D, 24}, rng);
    Tensor<double> pos = random_tensor({D, 24}, rng);
    TokenState<double> state = bb.forward(random_image(64, 64, 7), det, pos);
    REQUIRE(state.patch_maps[0].shape() == Shape{16, 16, 24});
    REQUIRE(state.patch_maps[1].shape() == Shape{8, 8, 48});
    REQUIRE(state.patch_maps[2].shape() == Shape{4, 4, 96});
    REQUIRE(state.patch_maps[3].shape() == Shape{2, 2, 192});
    REQUIRE(state.det.shape() == Shape{D, 192});
    for (int l = 0; l < 4; ++l) {
        REQUIRE(state.valid[l][0] == 16 >> l);
        REQUIRE(state.valid[l][1] == 16 >> l);
    }
}

TEST_CASE("backbone forward handles non-divisible inputs via padding") {
    std::mt19937_64 rng = substream(200, "init");
    SwinBackbone<double> bb;
    bb.init(pico_config(), rng);
    Tensor<double> det = random_tensor({4, 24}, rng);
    Tensor<double> pos = random_tensor({4, 24}, rng);
    TokenState<double> state = bb.forward(random_image(40, 52, 9), det, pos);
    // padded to 64x64 internally
    REQUIRE(state.patch_maps[0].shape() == Shape{16, 16, 24});
    REQUIRE(state.valid[0][0] == 10);  // ceil(40/4)
    REQUIRE(state.valid[0][1] == 13);  // ceil(52/4)
    REQUIRE(state.valid[3][0] == 2);
    REQUIRE(state.valid[3][1] == 2);
}

TEST_CASE("zero image embeds to a spatially constant stage-1 input") {
    std::mt19937_64 rng = substream(300, "init");
    SwinBackbone<double> bb;
    bb.init(pico_config(), rng);
    Tensor<double> det({2, 24});
    Tensor<double> pos({2, 24});
    TokenState<double> state = bb.forward(Tensor<double>({32, 32, 3}), det, pos);
    // every patch sees identical (zero) content, so each map stays constant
    // across positions at every level
    for (int l = 0; l < 4; ++l) {
        const auto& m = state.patch_maps[l];
        const i64 hw = m.shape()[0] * m.shape()[1], d = m.shape()[2];
        for (i64 t = 1; t < hw; ++t)
            for (i64 c = 0; c < d; ++c) REQUIRE(std::abs(m[t * d + c] - m[c]) < 1e-9);
    }
}

TEST_CASE("backbone parameters do not depend on D or on enabled DET paths") {
    auto count_params = [](std::array<bool, 4> cross, std::array<bool, 4> det_self) {
        std::mt19937_64 rng = substream(400, "init");
        BackboneConfig cfg = pico_config();
        cfg.cross_attention = cross;
        cfg.det_self_attention = det_self;
        SwinBackbone<double> bb;
        bb.init(cfg, rng);
        return bb.param_count();
    };
    const i64 base = count_params({false, false, false, true}, {true, true, true, true});
    REQUIRE(count_params({true, true, true, true}, {true, true, true, true}) == base);
    REQUIRE(count_params({false, false, false, false}, {false, false, false, false}) == base);
}

TEST_CASE("DET count is maintained at every stage and forward is deterministic") {
    auto run = [](std::uint64_t seed) {
        std::mt19937_64 rng = substream(seed, "init");
        SwinBackbone<double> bb;
        bb.init(pico_config(), rng);
        Tensor<double> det({6, 24});
        Tensor<double> pos({6, 24});
        fill_normal(det, 0.0, 0.5, rng);
        fill_normal(pos, 0.0, 0.5, rng);
        return bb.forward(random_image(32, 32, 11), det, pos);
    };
    TokenState<double> a = run(77);
    TokenState<double> b = run(77);
    REQUIRE(a.det.shape() == Shape{6, 192});
    for (i64 i = 0; i < a.det.numel(); ++i) REQUIRE(a.det[i] == b.det[i]);
    for (int l = 0; l < 4; ++l)
        for (i64 i = 0; i < a.patch_maps[l].numel(); ++i)
            REQUIRE(a.patch_maps[l][i] == b.patch_maps[l][i]);
}

TEST_CASE("cross-attention capture: per-token PATCH mass matches softmax") {
    std::mt19937_64 rng = substream(500, "init");
    SwinBackbone<double> bb;
    bb.init(pico_config(), rng);
    Tensor<double> det = random_tensor({5, 24}, rng);
    Tensor<double> pos = random_tensor({5, 24}, rng);
    TokenState<double> state = bb.forward(random_image(32, 32, 13), det, pos, true);
    REQUIRE(state.cross_attention.size() == 2);  // two blocks at stage 4
    for (const auto& cap : state.cross_attention) {
        REQUIRE(cap.stage == 3);
        REQUIRE(cap.weights.shape() == Shape{5, 5 + cap.h * cap.w});
        for (i64 q = 0; q < 5; ++q) {
            double total = 0.0;
            for (i64 j = 0; j < cap.weights.shape()[1]; ++j) total += cap.weights.at(q, j);
            REQUIRE(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("gradients flow from backbone output to DET tokens and weights") {
    std::mt19937_64 rng = substream(600, "init");
    BackboneConfig cfg = pico_config();
    SwinBackbone<double> bb;
    bb.init(cfg, rng);
    ParamSet<double> ps;
    bb.collect("bb", ps);
    Tensor<double> det = random_tensor({3, 24}, rng);
    Tensor<double> pos = random_tensor({3, 24}, rng);
    det.set_requires_grad(true);
    pos.set_requires_grad(true);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        TokenState<double> st = bb.forward(random_image(32, 32, 17), det, pos);
        Tensor<double> loss = add(mean_all(st.det), mean_all(st.patch_maps[0]));
        tape.backward(loss);
    }
    REQUIRE(det.has_grad());
    double det_gnorm = 0.0;
    for (double g : det.grad_vec()) det_gnorm += g * g;
    REQUIRE(det_gnorm > 0.0);
    i64 with_grad = 0;
    for (auto& [name, p] : ps.items)
        if (p.has_grad()) ++with_grad;
    REQUIRE(with_grad > 0);
}
