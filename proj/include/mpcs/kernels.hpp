#pragma once

#include "mpcs/image.hpp"
#include "mpcs/tensor.hpp"

// Numeric inner loops. Every kernel has two implementations: a plain serial
// reference under kernels::serial and an OpenMP version under kernels::.
// Parallel variants split work only across independent output elements and
// keep the per-element accumulation order identical to the serial code, so
// both paths produce bit-identical results (asserted in tests, compared in
// the benchmark target).
namespace mpcs::kernels {

bool parallel_enabled();
void set_parallel(bool on);

namespace serial {

// x: (B, Cin, H, W), w: (Cout, Cin, K, K), b: (Cout). Stride 1, zero padding
// K/2, odd K. Output (B, Cout, H, W).
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb);

// 2x2 max pooling, stride 2. Even H, W. argmax records the flat input index
// per output element for the backward pass.
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int64_t>& argmax);
void maxpool2_backward(const Tensor& gy, const std::vector<int64_t>& argmax, Tensor& gx);

void global_avg_pool_forward(const Tensor& x, Tensor& y);           // (B,C,H,W) -> (B,C)
void global_avg_pool_backward(const Tensor& gy, int h, int w, Tensor& gx);

// x: (B, D), w: (O, D), b: (O) -> y: (B, O)
void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb);

// Antialiased bilinear resize (separable triangle filter, support scaled by
// the downscale ratio). The single pinned interpolation of the pipeline.
ImageF resize_bilinear(const ImageF& src, int out_h, int out_w);

// Row-normalized similarity matrix: s[i*n+j] = cos(z_i, z_j).
// Throws ZeroVectorError if any row has zero norm.
void cosine_matrix(const Tensor& z, Tensor& s);

}  // namespace serial

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb);
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int64_t>& argmax);
void maxpool2_backward(const Tensor& gy, const std::vector<int64_t>& argmax, Tensor& gx);
void global_avg_pool_forward(const Tensor& x, Tensor& y);
void global_avg_pool_backward(const Tensor& gy, int h, int w, Tensor& gx);
void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb);
ImageF resize_bilinear(const ImageF& src, int out_h, int out_w);
void cosine_matrix(const Tensor& z, Tensor& s);

}  // namespace mpcs::kernels
