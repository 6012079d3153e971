#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "factorkit/errors.hpp"

namespace factorkit {

// Allocator that skips value-initialization on resize. Large scratch buffers
// (im2col workspaces, layer outputs) are fully overwritten right after
// allocation, so the default zero-fill would just double the memory traffic.
template <typename T>
struct UninitAlloc : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = UninitAlloc<U>;
    };
    template <typename U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(static_cast<Args&&>(args)...);
    }
};

// Dense row-major tensor. Conventions across the project:
//   image batches  (N, C, H, W)
//   vector batches (B, D)
//   conv weights   (Cout, Cin, K, K), dense weights (Din, Dout)
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T, UninitAlloc<T>> data;

    Tensor() = default;

    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(count(shape), T(0)) {}

    Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)) {
        if (static_cast<int64_t>(d.size()) != count(shape))
            throw ContractError("tensor: data size does not match shape");
        data.assign(d.begin(), d.end());
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    // Contents are unspecified; every element must be written before use.
    static Tensor uninit(std::vector<int64_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.resize(static_cast<size_t>(count(t.shape)));
        return t;
    }

    static Tensor full(std::vector<int64_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool empty() const { return data.empty(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    // NCHW accessor.
    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::string r = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(s[i]);
        }
        return r + ")";
    }
};

template <typename T>
inline void require_shape(const Tensor<T>& t, const std::vector<int64_t>& want, const char* what) {
    if (t.shape != want)
        throw ContractError(std::string(what) + ": expected shape " + Tensor<T>::shape_str(want) +
                            ", got " + Tensor<T>::shape_str(t.shape));
}

}  // namespace factorkit
