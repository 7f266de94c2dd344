#pragma once

// Tensor wire format, little-endian throughout:
//
//   magic   4 bytes  "VTNS"
//   version u32      (currently 1)
//   dtype   u8       1 = float32, 2 = float64
//   rank    u8
//   dims    u64 * rank
//   payload dtype[product(dims)]
//
// The checkpoint container in checkpoint.hpp embeds these blocks by name.

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "vidt/tensor.hpp"

namespace vidt {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace detail {

template <typename U>
void write_raw(std::ostream& os, const U& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_raw(std::istream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw std::runtime_error("tensor block: unexpected end of stream");
    return v;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 1;
    else return 2;
}

}  // namespace detail

inline constexpr std::uint32_t kTensorFormatVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write("VTNS", 4);
    detail::write_raw<std::uint32_t>(os, kTensorFormatVersion);
    detail::write_raw<std::uint8_t>(os, detail::dtype_code<T>());
    detail::write_raw<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (i64 d : t.shape()) detail::write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(T));
}

// Reads a block written with either dtype, converting element-wise into T.
template <typename T>
Tensor<T> read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VTNS", 4) != 0)
        throw std::runtime_error("tensor block: bad magic");
    const auto version = detail::read_raw<std::uint32_t>(is);
    if (version != kTensorFormatVersion)
        throw std::runtime_error("tensor block: unsupported version " + std::to_string(version));
    const auto dtype = detail::read_raw<std::uint8_t>(is);
    if (dtype != 1 && dtype != 2) throw std::runtime_error("tensor block: unknown dtype code");
    const auto rank = detail::read_raw<std::uint8_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<i64>(detail::read_raw<std::uint64_t>(is));
    Tensor<T> t(shape);
    const i64 n = t.numel();
    if (dtype == detail::dtype_code<T>()) {
        is.read(reinterpret_cast<char*>(t.data()), n * sizeof(T));
    } else if (dtype == 1) {
        std::vector<float> buf(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(buf.data()), n * sizeof(float));
        for (i64 i = 0; i < n; ++i) t[i] = T(buf[static_cast<size_t>(i)]);
    } else {
        std::vector<double> buf(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(buf.data()), n * sizeof(double));
        for (i64 i = 0; i < n; ++i) t[i] = T(buf[static_cast<size_t>(i)]);
    }
    if (!is) throw std::runtime_error("tensor block: truncated payload");
    return t;
}

}  // namespace vidt
