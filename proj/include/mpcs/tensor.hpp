#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "mpcs/common.hpp"

namespace mpcs {

// Dense row-major double tensor. Double throughout: the loss/gradient
// contracts are stated at float64 and desk-scale nets are small enough that
// precision wins over speed.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) { v.assign(numel(), 0.0); }
    Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<size_t>(numel()) != v.size())
            throw ShapeMismatchError("tensor data size does not match shape");
    }

    size_t numel() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& operator[](size_t i) { return v[i]; }
    double operator[](size_t i) const { return v[i]; }

    // 2-D accessors (rows x cols)
    double& at2(int r, int c) { return v[static_cast<size_t>(r) * dim(1) + c]; }
    double at2(int r, int c) const { return v[static_cast<size_t>(r) * dim(1) + c]; }

    // 4-D accessors (B, C, H, W)
    double& at4(int b, int c, int y, int x) {
        return v[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    double at4(int b, int c, int y, int x) const {
        return v[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace mpcs
