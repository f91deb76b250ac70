#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rawnet/error.hpp"

namespace rawnet {

// The artifact path runs in 32-bit floats; gradient-check tests instantiate
// the same templates with double.
using real = float;

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. Every dimension must be positive and
// data.size() == product(shape).
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(shape_numel(t.shape), T(0));
        return t;
    }

    static Tensor full(Shape s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor from(Shape s, std::vector<T> d) {
        if (shape_numel(s) != d.size())
            throw ShapeError("tensor data size " + std::to_string(d.size()) +
                             " does not match shape " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        return t;
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    bool empty() const { return data.empty(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at2(size_t i, size_t j) { return data[i * shape[1] + j]; }
    const T& at2(size_t i, size_t j) const { return data[i * shape[1] + j]; }
    T& at3(size_t i, size_t j, size_t k) { return data[(i * shape[1] + j) * shape[2] + k]; }
    const T& at3(size_t i, size_t j, size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
};

// Fast all-finite scan: x*0 is 0 for finite x and NaN for NaN/Inf, so the
// accumulator is exactly 0 iff every element is finite (requires strict IEEE
// semantics; the build does not enable -ffast-math).
template <typename T>
inline bool all_finite(const std::vector<T>& v) {
    T acc = T(0);
    for (const T x : v) acc += x * T(0);
    return acc == T(0);
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* where) {
    if (!all_finite(t.data))
        throw ContractError(std::string("non-finite value produced by ") + where);
}

} // namespace rawnet
