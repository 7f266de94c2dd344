#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor<T> is a value-semantic handle (shared storage) around shape,
// data and an optional gradient accumulator. Operations record backward
// closures on the thread's active Tape<T>; replaying the tape in reverse
// visits each recorded node exactly once, in reverse topological order,
// because nodes are appended in execution order.
//
// All kernels use a fixed left-to-right reduction order, so a forward
// pass with the same inputs is bit-identical across runs.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vidt {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

inline i64 shape_numel(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

[[noreturn]] inline void shape_error(const std::string& msg) {
    throw std::invalid_argument("shape error: " + msg);
}

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : p_(std::make_shared<TensorImpl<T>>()) {
        p_->shape = std::move(shape);
        p_->data.assign(static_cast<size_t>(shape_numel(p_->shape)), fill);
        p_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<i64>(values.size()))
            shape_error("from_data: " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
        Tensor t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = std::move(shape);
        t.p_->data = std::move(values);
        return t;
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int rank() const { return static_cast<int>(p_->shape.size()); }
    i64 numel() const { return static_cast<i64>(p_->data.size()); }

    i64 dim(int axis) const {
        int r = rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r)
            shape_error("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
        return p_->shape[axis];
    }

    // Tensor is a shared handle: a const handle still reaches mutable
    // storage, like any pointer-semantic tensor type.
    T* data() const { return p_->data.data(); }
    std::vector<T>& vec() const { return p_->data; }

    T item() const {
        if (numel() != 1) shape_error("item() on tensor " + shape_str(shape()));
        return p_->data[0];
    }

    T& operator[](i64 i) const { return p_->data[static_cast<size_t>(i)]; }

    // row-major multi-index access, bounds unchecked
    template <typename... Ix>
    T& at(Ix... ix) const {
        return p_->data[static_cast<size_t>(linear_index({static_cast<i64>(ix)...}))];
    }

    i64 linear_index(std::initializer_list<i64> ix) const {
        i64 lin = 0;
        size_t k = 0;
        for (i64 i : ix) {
            lin = lin * p_->shape[k] + i;
            ++k;
        }
        return lin;
    }

    bool requires_grad() const { return p_ && p_->requires_grad; }
    void set_requires_grad(bool v) const { p_->requires_grad = v; }

    bool has_grad() const { return p_ && !p_->grad.empty(); }

    // Gradient accumulator, zero-initialized on first touch.
    T* grad() const {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), T(0));
        return p_->grad.data();
    }
    std::vector<T>& grad_vec() const { return p_->grad; }

    void zero_grad() const {
        if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
    }

    Tensor clone() const {
        Tensor t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = p_->shape;
        t.p_->data = p_->data;
        t.p_->requires_grad = p_->requires_grad;
        return t;
    }

    // Same values, cut off from the gradient graph.
    Tensor detach() const {
        Tensor t = clone();
        t.p_->requires_grad = false;
        return t;
    }

    bool same_storage(const Tensor& o) const { return p_ == o.p_; }

private:
    std::shared_ptr<TensorImpl<T>> p_;
};

// ---------------------------------------------------------------------------
// Gradient tape
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays all nodes in reverse order.
    void backward(Tensor<T> loss) {
        if (loss.numel() != 1) shape_error("backward seed must be scalar, got " + shape_str(loss.shape()));
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

template <typename T>
inline Tape<T>*& active_tape() {
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

// RAII scope that makes `tape` the thread's recording target.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
    ~TapeScope() { active_tape<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// True when the op should join the gradient graph.
template <typename T>
inline bool tracing(const Tensor<T>& a) {
    return active_tape<T>() != nullptr && a.requires_grad();
}
template <typename T>
inline bool tracing(const Tensor<T>& a, const Tensor<T>& b) {
    return active_tape<T>() != nullptr && (a.requires_grad() || b.requires_grad());
}

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

// y_i = f(x_i); df(x_i, y_i) is the local derivative dy/dx.
template <typename T, class F, class DF>
Tensor<T> unary_op(const Tensor<T>& x, F f, DF df) {
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* yv = out.data();
    const i64 n = x.numel();
    for (i64 i = 0; i < n; ++i) yv[i] = f(xv[i]);
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, df]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            const T* xv2 = x.data();
            const T* yv2 = out.data();
            T* gx = x.grad();
            const i64 m = x.numel();
            for (i64 i = 0; i < m; ++i) gx[i] += go[i] * df(xv2[i], yv2[i]);
        });
    }
    return out;
}

enum class Broadcast { None, Scalar, Suffix };

inline Broadcast broadcast_kind(const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::None;
    if (shape_numel(b) == 1) return Broadcast::Scalar;
    if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - b.size()))
        return Broadcast::Suffix;
    shape_error("cannot broadcast " + shape_str(b) + " against " + shape_str(a));
}

// z_i = f(a_i, b_j) with b either matching, scalar, or a trailing-dims broadcast.
template <typename T, class F, class DA, class DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F f, DA dfa, DB dfb) {
    const Broadcast bc = broadcast_kind(a.shape(), b.shape());
    Tensor<T> out(a.shape());
    const T* av = a.data();
    const T* bv = b.data();
    T* zv = out.data();
    const i64 n = a.numel();
    const i64 bn = b.numel();
    for (i64 i = 0; i < n; ++i) {
        const i64 j = bc == Broadcast::None ? i : (bc == Broadcast::Scalar ? 0 : i % bn);
        zv[i] = f(av[i], bv[j]);
    }
    if (tracing(a, b)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([a, b, out, bc, dfa, dfb]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            const T* av2 = a.data();
            const T* bv2 = b.data();
            const i64 m = a.numel();
            const i64 bm = b.numel();
            if (a.requires_grad()) {
                T* ga = a.grad();
                for (i64 i = 0; i < m; ++i) {
                    const i64 j = bc == Broadcast::None ? i : (bc == Broadcast::Scalar ? 0 : i % bm);
                    ga[i] += go[i] * dfa(av2[i], bv2[j]);
                }
            }
            if (b.requires_grad()) {
                T* gb = b.grad();
                for (i64 i = 0; i < m; ++i) {
                    const i64 j = bc == Broadcast::None ? i : (bc == Broadcast::Scalar ? 0 : i % bm);
                    gb[j] += go[i] * dfb(av2[i], bv2[j]);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

// Ties route the gradient to the first argument (fixed, deterministic rule).
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x >= y ? x : y; }, [](T x, T y) { return x >= y ? T(1) : T(0); },
        [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x <= y ? x : y; }, [](T x, T y) { return x <= y ? T(1) : T(0); },
        [](T x, T y) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return unary_op(
        x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return unary_op(
        x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(
        x,
        [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
        [](T, T y) { return y * (T(1) - y); });
}

// Numerically stable log(1 + exp(x)).
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T v, T) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(
        x, [](T v) { return T(0.5) * v * (T(1) + T(std::erf(double(v) * inv_sqrt2))); },
        [](T v, T) {
            const double cdf = 0.5 * (1.0 + std::erf(double(v) * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
            return T(cdf + double(v) * pdf);
        });
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return unary_op(
        x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// log(p / (1-p)) with inputs clamped to [eps, 1-eps].
template <typename T>
Tensor<T> inverse_sigmoid(const Tensor<T>& x, T eps = T(1e-5)) {
    return unary_op(
        x,
        [eps](T v) {
            const T p = std::min(T(1) - eps, std::max(eps, v));
            return std::log(p / (T(1) - p));
        },
        [eps](T v, T) {
            if (v < eps || v > T(1) - eps) return T(0);
            return T(1) / (v * (T(1) - v));
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T s = T(0);
    const T* xv = x.data();
    const i64 n = x.numel();
    for (i64 i = 0; i < n; ++i) s += xv[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const T g = out.grad_vec()[0];
            T* gx = x.grad();
            const i64 m = x.numel();
            for (i64 i = 0; i < m; ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / T(x.numel()));
}

namespace detail {
inline void split_axis(const Shape& s, int axis, i64& outer, i64& mid, i64& inner) {
    int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) shape_error("bad reduce axis for " + shape_str(s));
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    mid = s[axis];
    inner = 1;
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
    i64 outer, mid, inner;
    detail::split_axis(x.shape(), axis, outer, mid, inner);
    Shape os = x.shape();
    os.erase(os.begin() + (axis < 0 ? axis + x.rank() : axis));
    if (os.empty()) os = {1};
    Tensor<T> out(os);
    const T* xv = x.data();
    T* ov = out.data();
    for (i64 o = 0; o < outer; ++o)
        for (i64 m = 0; m < mid; ++m)
            for (i64 in = 0; in < inner; ++in) ov[o * inner + in] += xv[(o * mid + m) * inner + in];
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, outer, mid, inner]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            T* gx = x.grad();
            for (i64 o = 0; o < outer; ++o)
                for (i64 m = 0; m < mid; ++m)
                    for (i64 in = 0; in < inner; ++in)
                        gx[(o * mid + m) * inner + in] += go[o * inner + in];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
    i64 outer, mid, inner;
    detail::split_axis(x.shape(), axis, outer, mid, inner);
    return scale(sum_axis(x, axis), T(1) / T(mid));
}

// ---------------------------------------------------------------------------
// Layout ops: reshape / transpose / concat / slice / gather
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        shape_error("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), x.vec());
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            T* gx = x.grad();
            const i64 m = x.numel();
            for (i64 i = 0; i < m; ++i) gx[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) shape_error("transpose perm rank mismatch");
    Shape os(r);
    for (int i = 0; i < r; ++i) os[i] = x.shape()[perm[i]];
    std::vector<i64> key;
    key.insert(key.end(), x.shape().begin(), x.shape().end());
    for (int p : perm) key.push_back(p);
    thread_local std::map<std::vector<i64>, std::shared_ptr<const std::vector<i64>>> cache;
    std::shared_ptr<const std::vector<i64>> idx;
    if (auto it = cache.find(key); it != cache.end()) {
        idx = it->second;
    } else {
        std::vector<i64> istr(r, 1);
        for (int i = r - 2; i >= 0; --i) istr[i] = istr[i + 1] * x.shape()[i + 1];
        auto built = std::make_shared<std::vector<i64>>(static_cast<size_t>(x.numel()));
        // walk output coordinates with counters instead of div/mod
        std::vector<i64> ctr(r, 0);
        i64 in = 0;
        const i64 n = x.numel();
        for (i64 o = 0; o < n; ++o) {
            (*built)[static_cast<size_t>(o)] = in;
            for (int d = r - 1; d >= 0; --d) {
                ++ctr[d];
                in += istr[perm[d]];
                if (ctr[d] < os[d]) break;
                in -= ctr[d] * istr[perm[d]];
                ctr[d] = 0;
            }
        }
        cache.emplace(std::move(key), built);
        idx = built;
    }
    return gather_linear(x, os, idx);
}

namespace detail {

// Rearrangement index patterns depend only on shape parameters, so each
// thread memoizes them; forwards then reduce to plain gather copies.
template <class Builder>
std::shared_ptr<const std::vector<i64>> cached_index(const char* tag,
                                                     std::initializer_list<i64> params,
                                                     Builder build) {
    thread_local std::map<std::string, std::shared_ptr<const std::vector<i64>>> cache;
    std::string key = tag;
    for (i64 p : params) {
        key += ':';
        key += std::to_string(p);
    }
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto idx = std::make_shared<std::vector<i64>>();
    build(*idx);
    cache.emplace(std::move(key), idx);
    return idx;
}

}  // namespace detail

// out[i] = x[index[i]] for index >= 0, else 0. Shared by all rearrangement ops.
template <typename T>
Tensor<T> gather_linear(const Tensor<T>& x, Shape out_shape,
                        std::shared_ptr<const std::vector<i64>> index) {
    if (static_cast<i64>(index->size()) != shape_numel(out_shape))
        shape_error("gather index size mismatch");
    Tensor<T> out(out_shape);
    const T* xv = x.data();
    T* ov = out.data();
    const i64 n = static_cast<i64>(index->size());
    for (i64 i = 0; i < n; ++i) {
        const i64 j = (*index)[static_cast<size_t>(i)];
        ov[i] = j >= 0 ? xv[j] : T(0);
    }
    if (tracing(x)) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, index]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            T* gx = x.grad();
            const i64 m = out.numel();
            for (i64 i = 0; i < m; ++i) {
                const i64 j = (*index)[static_cast<size_t>(i)];
                if (j >= 0) gx[j] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, i64 start, i64 len) {
    i64 outer, mid, inner;
    detail::split_axis(x.shape(), axis, outer, mid, inner);
    if (axis < 0) axis += x.rank();
    if (start < 0 || start + len > mid) shape_error("slice out of range on " + shape_str(x.shape()));
    Shape os = x.shape();
    os[axis] = len;
    auto idx = detail::cached_index("slice", {outer, mid, inner, start, len},
                                    [&](std::vector<i64>& v) {
                                        v.reserve(static_cast<size_t>(outer * len * inner));
                                        for (i64 o = 0; o < outer; ++o)
                                            for (i64 m = 0; m < len; ++m)
                                                for (i64 in = 0; in < inner; ++in)
                                                    v.push_back((o * mid + start + m) * inner + in);
                                    });
    return gather_linear(x, os, idx);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) shape_error("concat of zero tensors");
    const int r = parts[0].rank();
    int ax = axis < 0 ? axis + r : axis;
    Shape os = parts[0].shape();
    i64 total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) shape_error("concat rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != ax && p.shape()[d] != os[d])
                shape_error("concat shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(os));
        total += p.shape()[ax];
    }
    os[ax] = total;
    i64 outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= os[d];
    for (int d = ax + 1; d < r; ++d) inner *= os[d];
    Tensor<T> out(os);
    T* ov = out.data();
    bool any_grad = false;
    i64 off = 0;
    for (const auto& p : parts) {
        const i64 mid = p.shape()[ax];
        const T* pv = p.data();
        for (i64 o = 0; o < outer; ++o)
            std::copy(pv + o * mid * inner, pv + (o + 1) * mid * inner,
                      ov + (o * total + off) * inner);
        off += mid;
        any_grad = any_grad || p.requires_grad();
    }
    if (active_tape<T>() && any_grad) {
        out.set_requires_grad(true);
        std::vector<Tensor<T>> held = parts;
        active_tape<T>()->record([held, out, outer, inner, total, ax]() mutable {
            if (!out.has_grad()) return;
            const T* go = out.grad_vec().data();
            i64 off2 = 0;
            for (auto& p : held) {
                const i64 mid = p.shape()[ax];
                if (p.requires_grad()) {
                    T* gp = p.grad();
                    for (i64 o = 0; o < outer; ++o) {
                        const T* src = go + (o * total + off2) * inner;
                        T* dst = gp + o * mid * inner;
                        for (i64 i = 0; i < mid * inner; ++i) dst[i] += src[i];
                    }
                }
                off2 += mid;
            }
        });
    }
    return out;
}

}  // namespace vidt
