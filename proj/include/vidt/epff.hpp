#pragma once

// Efficient pyramid feature fusion: project the four PATCH maps to a common
// width, then fuse top-down; each step upsamples the coarser fused map
// bilinearly, adds the transformed finer map and smooths the sum:
//
//   f_L = ResUnit(x_L)
//   f_l = ResUnit_smooth(Upsample(f_{l+1}) + ResUnit_transform(x_l))
//
// Every residual branch ends in a zero-initialized convolution, so a fresh
// module starts out as a plain upsample-and-add pyramid.

#include "vidt/nn.hpp"

namespace vidt {

// Pre-activation bottleneck: 1x1 reduce (/4) -> 3x3 -> 1x1 expand, residual add.
template <typename T>
struct ResUnit {
    GroupNormLayer<T> gn1, gn2, gn3;
    Tensor<T> convEntry, biasEntry;   // 1x1, width -> width/4
    Tensor<T> conv3, bias3;           // 3x3, width/4 -> width/4
    Tensor<T> convExit, biasExit;     // 1x1, width/4 -> width, zero-init

    void init(i64 width, std::mt19937_64& rng, int groups = 32) {
        const i64 mid = width / 4;
        gn1.init(width, groups);
        gn2.init(mid, groups);
        gn3.init(mid, groups);
        convEntry = Tensor<T>({1, 1, width, mid});
        fill_normal(convEntry, 0.0, std::sqrt(2.0 / double(width)), rng);
        biasEntry = Tensor<T>({mid});
        conv3 = Tensor<T>({3, 3, mid, mid});
        fill_normal(conv3, 0.0, std::sqrt(2.0 / double(9 * mid)), rng);
        bias3 = Tensor<T>({mid});
        convExit = Tensor<T>({1, 1, mid, width});
        biasExit = Tensor<T>({width});
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> b = conv2d(relu(gn1(x)), convEntry, biasEntry);
        b = conv2d(relu(gn2(b)), conv3, bias3);
        b = conv2d(relu(gn3(b)), convExit, biasExit);
        return add(x, b);
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        gn1.collect(prefix + ".gn1", out);
        out.add(prefix + ".conv1.w", convEntry);
        out.add(prefix + ".conv1.b", biasEntry);
        gn2.collect(prefix + ".gn2", out);
        out.add(prefix + ".conv3.w", conv3);
        out.add(prefix + ".conv3.b", bias3);
        gn3.collect(prefix + ".gn3", out);
        out.add(prefix + ".conv_out.w", convExit);
        out.add(prefix + ".conv_out.b", biasExit);
    }
};

template <typename T>
class Epff {
public:
    void init(const std::array<i64, 4>& map_dims, i64 width, std::mt19937_64& rng) {
        width_ = width;
        for (int l = 0; l < 4; ++l) {
            input_proj_[l].init_xavier(map_dims[l], width, rng);
            input_norm_[l].init(width, 32);
            transform_[l].init(width, rng);
            if (l < 3) smooth_[l].init(width, rng);
        }
    }

    // maps: four (h_l, w_l, d_l) pyramids, fine to coarse. Output keeps each
    // level's spatial size with `width` channels.
    std::vector<Tensor<T>> fuse(const std::array<Tensor<T>, 4>& maps) const {
        std::array<Tensor<T>, 4> proj;
        for (int l = 0; l < 4; ++l) {
            const i64 h = maps[l].shape()[0], w = maps[l].shape()[1], d = maps[l].shape()[2];
            proj[l] = input_norm_[l](
                reshape(input_proj_[l](reshape(maps[l], {h * w, d})), {h, w, width_}));
        }
        std::vector<Tensor<T>> fused(4);
        fused[3] = transform_[3](proj[3]);
        for (int l = 2; l >= 0; --l) {
            Tensor<T> up =
                resize_bilinear(fused[l + 1], proj[l].shape()[0], proj[l].shape()[1]);
            fused[l] = smooth_[l](add(up, transform_[l](proj[l])));
        }
        return fused;
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        for (int l = 0; l < 4; ++l) {
            const std::string lp = prefix + ".level" + std::to_string(l);
            input_proj_[l].collect(lp + ".proj", out);
            input_norm_[l].collect(lp + ".norm", out);
            transform_[l].collect(lp + ".transform", out);
            if (l < 3) smooth_[l].collect(lp + ".smooth", out);
        }
    }

    i64 param_count() {
        ParamSet<T> ps;
        collect("epff", ps);
        return ps.count();
    }

private:
    i64 width_ = 256;
    std::array<LinearLayer<T>, 4> input_proj_;
    std::array<GroupNormLayer<T>, 4> input_norm_;
    std::array<ResUnit<T>, 4> transform_;
    std::array<ResUnit<T>, 3> smooth_;
};

}  // namespace vidt
