#pragma once

// Small parameterized layers shared by the backbone, neck and heads.

#include "vidt/ops.hpp"
#include "vidt/rng.hpp"

namespace vidt {

// Named parameter registry; iteration order is registration order, which is
// deterministic per model layout and drives both the optimizer and the
// checkpoint format.
template <typename T>
struct ParamSet {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) {
        t.set_requires_grad(true);
        items.push_back({name, t});
    }

    i64 count() const {
        i64 n = 0;
        for (const auto& [_, t] : items) n += t.numel();
        return n;
    }
};

template <typename T>
struct LinearLayer {
    Tensor<T> w, b;

    void init(i64 in, i64 out, std::mt19937_64& rng, bool bias = true,
              double trunc_std = 0.02) {
        w = Tensor<T>({in, out});
        fill_trunc_normal(w, trunc_std, rng);
        if (bias) b = Tensor<T>({out});
    }

    void init_xavier(i64 in, i64 out, std::mt19937_64& rng, bool bias = true) {
        w = Tensor<T>({in, out});
        fill_xavier_uniform(w, in, out, rng);
        if (bias) b = Tensor<T>({out});
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        out.add(prefix + ".w", w);
        if (b.defined()) out.add(prefix + ".b", b);
    }

    i64 numel() const { return w.numel() + (b.defined() ? b.numel() : 0); }
};

template <typename T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;

    void init(i64 dim) {
        gamma = Tensor<T>({dim}, T(1));
        beta = Tensor<T>({dim});
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }

    i64 numel() const { return gamma.numel() + beta.numel(); }
};

template <typename T>
struct GroupNormLayer {
    Tensor<T> gamma, beta;
    int groups = 32;

    void init(i64 channels, int g) {
        groups = static_cast<int>(std::min<i64>(g, channels));
        gamma = Tensor<T>({channels}, T(1));
        beta = Tensor<T>({channels});
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }

    i64 numel() const { return gamma.numel() + beta.numel(); }
};

// hidden layers with relu, linear output; the DETR-style prediction FFN
template <typename T>
struct MlpHead {
    std::vector<LinearLayer<T>> layers;

    void init(i64 in, i64 hidden, i64 out, int num_layers, std::mt19937_64& rng) {
        layers.resize(num_layers);
        for (int i = 0; i < num_layers; ++i) {
            const i64 a = i == 0 ? in : hidden;
            const i64 b = i == num_layers - 1 ? out : hidden;
            layers[i].init_xavier(a, b, rng);
        }
    }

    Tensor<T> operator()(Tensor<T> x) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](x);
            if (i + 1 < layers.size()) x = relu(x);
        }
        return x;
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(prefix + ".fc" + std::to_string(i), out);
    }

    i64 numel() const {
        i64 n = 0;
        for (const auto& l : layers) n += l.numel();
        return n;
    }
};

}  // namespace vidt
