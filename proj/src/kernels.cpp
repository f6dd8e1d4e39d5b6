#include "mpcs/kernels.hpp"

#include <atomic>
#include <cmath>

namespace mpcs::kernels {

namespace {
std::atomic<bool> g_parallel{true};

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 4 || w.ndim() != 4 || b.ndim() != 1)
        throw ShapeMismatchError("conv2d: expected x(B,C,H,W), w(O,C,K,K), b(O)");
    if (w.dim(1) != x.dim(1)) throw ShapeMismatchError("conv2d: channel mismatch");
    if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
        throw ShapeMismatchError("conv2d: kernel must be square and odd");
    if (b.dim(0) != w.dim(0)) throw ShapeMismatchError("conv2d: bias size mismatch");
}

// One output pixel; identical accumulation order in both paths.
inline double conv_pixel(const Tensor& x, const Tensor& w, int b, int co, int oy, int ox) {
    const int cin = x.dim(1), h = x.dim(2), wd = x.dim(3), k = w.dim(2), pad = k / 2;
    double acc = 0.0;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
                const int ix = ox + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                acc += x.at4(b, ci, iy, ix) * w.at4(co, ci, ky, kx);
            }
        }
    }
    return acc;
}

inline double conv_input_grad_pixel(const Tensor& w, const Tensor& gy, int b, int ci, int iy, int ix) {
    const int cout = w.dim(0), k = w.dim(2), pad = k / 2;
    const int h = gy.dim(2), wd = gy.dim(3);
    double acc = 0.0;
    for (int co = 0; co < cout; ++co) {
        for (int ky = 0; ky < k; ++ky) {
            const int oy = iy - ky + pad;
            if (oy < 0 || oy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
                const int ox = ix - kx + pad;
                if (ox < 0 || ox >= wd) continue;
                acc += gy.at4(b, co, oy, ox) * w.at4(co, ci, ky, kx);
            }
        }
    }
    return acc;
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

// ---------------------------------------------------------------- conv2d

namespace serial {

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    check_conv_shapes(x, w, b);
    const int bs = x.dim(0), cout = w.dim(0), h = x.dim(2), wd = x.dim(3);
    y = Tensor({bs, cout, h, wd});
    for (int bi = 0; bi < bs; ++bi)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < wd; ++ox)
                    y.at4(bi, co, oy, ox) = conv_pixel(x, w, bi, co, oy, ox) + b[static_cast<size_t>(co)];
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb) {
    const int bs = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2), pad = k / 2;
    gx = Tensor(x.shape);
    gw = Tensor(w.shape);
    gb = Tensor({cout});
    for (int bi = 0; bi < bs; ++bi)
        for (int ci = 0; ci < cin; ++ci)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix)
                    gx.at4(bi, ci, iy, ix) = conv_input_grad_pixel(w, gy, bi, ci, iy, ix);
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int bi = 0; bi < bs; ++bi)
                        for (int oy = 0; oy < h; ++oy) {
                            const int iy = oy + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int ox = 0; ox < wd; ++ox) {
                                const int ix = ox + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                acc += gy.at4(bi, co, oy, ox) * x.at4(bi, ci, iy, ix);
                            }
                        }
                    gw.at4(co, ci, ky, kx) = acc;
                }
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int bi = 0; bi < bs; ++bi)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < wd; ++ox) acc += gy.at4(bi, co, oy, ox);
        gb[static_cast<size_t>(co)] = acc;
    }
}

}  // namespace serial

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    check_conv_shapes(x, w, b);
    const int bs = x.dim(0), cout = w.dim(0), h = x.dim(2), wd = x.dim(3);
    y = Tensor({bs, cout, h, wd});
    const int planes = bs * cout;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int p = 0; p < planes; ++p) {
        const int bi = p / cout, co = p % cout;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < wd; ++ox)
                y.at4(bi, co, oy, ox) = conv_pixel(x, w, bi, co, oy, ox) + b[static_cast<size_t>(co)];
    }
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb) {
    const int bs = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2), pad = k / 2;
    gx = Tensor(x.shape);
    gw = Tensor(w.shape);
    gb = Tensor({cout});
    const int in_planes = bs * cin;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int p = 0; p < in_planes; ++p) {
        const int bi = p / cin, ci = p % cin;
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < wd; ++ix)
                gx.at4(bi, ci, iy, ix) = conv_input_grad_pixel(w, gy, bi, ci, iy, ix);
    }
    const int w_elems = cout * cin * k * k;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int e = 0; e < w_elems; ++e) {
        const int co = e / (cin * k * k);
        const int ci = (e / (k * k)) % cin;
        const int ky = (e / k) % k;
        const int kx = e % k;
        double acc = 0.0;
        for (int bi = 0; bi < bs; ++bi)
            for (int oy = 0; oy < h; ++oy) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wd; ++ox) {
                    const int ix = ox + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    acc += gy.at4(bi, co, oy, ox) * x.at4(bi, ci, iy, ix);
                }
            }
        gw.v[static_cast<size_t>(e)] = acc;
    }
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int bi = 0; bi < bs; ++bi)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < wd; ++ox) acc += gy.at4(bi, co, oy, ox);
        gb[static_cast<size_t>(co)] = acc;
    }
}

// ---------------------------------------------------------------- pooling

namespace {
inline void maxpool_out_pixel(const Tensor& x, int bi, int c, int oy, int ox,
                              double& val, int64_t& arg) {
    const int h = x.dim(2), w = x.dim(3);
    double best = -1e300;
    int64_t best_idx = -1;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const int iy = oy * 2 + dy, ix = ox * 2 + dx;
            const int64_t idx = ((static_cast<int64_t>(bi) * x.dim(1) + c) * h + iy) * w + ix;
            const double v = x.v[static_cast<size_t>(idx)];
            if (v > best) {
                best = v;
                best_idx = idx;
            }
        }
    val = best;
    arg = best_idx;
}
}  // namespace

namespace serial {

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int64_t>& argmax) {
    if (x.dim(2) % 2 || x.dim(3) % 2) throw ShapeMismatchError("maxpool2: H and W must be even");
    const int bs = x.dim(0), c = x.dim(1), oh = x.dim(2) / 2, ow = x.dim(3) / 2;
    y = Tensor({bs, c, oh, ow});
    argmax.assign(y.numel(), -1);
    for (int bi = 0; bi < bs; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const size_t oidx = ((static_cast<size_t>(bi) * c + ci) * oh + oy) * ow + ox;
                    maxpool_out_pixel(x, bi, ci, oy, ox, y.v[oidx], argmax[oidx]);
                }
}

void maxpool2_backward(const Tensor& gy, const std::vector<int64_t>& argmax, Tensor& gx) {
    gx.fill(0.0);
    for (size_t i = 0; i < gy.numel(); ++i) gx.v[static_cast<size_t>(argmax[i])] += gy.v[i];
}

void global_avg_pool_forward(const Tensor& x, Tensor& y) {
    const int bs = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    y = Tensor({bs, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int bi = 0; bi < bs; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) acc += x.at4(bi, ci, yy, xx);
            y.at2(bi, ci) = acc * inv;
        }
}

void global_avg_pool_backward(const Tensor& gy, int h, int w, Tensor& gx) {
    const int bs = gy.dim(0), c = gy.dim(1);
    gx = Tensor({bs, c, h, w});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int bi = 0; bi < bs; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double g = gy.at2(bi, ci) * inv;
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) gx.at4(bi, ci, yy, xx) = g;
        }
}

void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
        throw ShapeMismatchError("linear: expected x(B,D), w(O,D)");
    const int bs = x.dim(0), d = x.dim(1), out = w.dim(0);
    y = Tensor({bs, out});
    for (int bi = 0; bi < bs; ++bi)
        for (int o = 0; o < out; ++o) {
            double acc = b[static_cast<size_t>(o)];
            for (int k = 0; k < d; ++k) acc += x.at2(bi, k) * w.at2(o, k);
            y.at2(bi, o) = acc;
        }
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb) {
    const int bs = x.dim(0), d = x.dim(1), out = w.dim(0);
    gx = Tensor({bs, d});
    gw = Tensor({out, d});
    gb = Tensor({out});
    for (int bi = 0; bi < bs; ++bi)
        for (int k = 0; k < d; ++k) {
            double acc = 0.0;
            for (int o = 0; o < out; ++o) acc += gy.at2(bi, o) * w.at2(o, k);
            gx.at2(bi, k) = acc;
        }
    for (int o = 0; o < out; ++o)
        for (int k = 0; k < d; ++k) {
            double acc = 0.0;
            for (int bi = 0; bi < bs; ++bi) acc += gy.at2(bi, o) * x.at2(bi, k);
            gw.at2(o, k) = acc;
        }
    for (int o = 0; o < out; ++o) {
        double acc = 0.0;
        for (int bi = 0; bi < bs; ++bi) acc += gy.at2(bi, o);
        gb[static_cast<size_t>(o)] = acc;
    }
}

}  // namespace serial

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int64_t>& argmax) {
    if (x.dim(2) % 2 || x.dim(3) % 2) throw ShapeMismatchError("maxpool2: H and W must be even");
    const int bs = x.dim(0), c = x.dim(1), oh = x.dim(2) / 2, ow = x.dim(3) / 2;
    y = Tensor({bs, c, oh, ow});
    argmax.assign(y.numel(), -1);
    const int planes = bs * c;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int p = 0; p < planes; ++p) {
        const int bi = p / c, ci = p % c;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const size_t oidx = ((static_cast<size_t>(bi) * c + ci) * oh + oy) * ow + ox;
                maxpool_out_pixel(x, bi, ci, oy, ox, y.v[oidx], argmax[oidx]);
            }
    }
}

void maxpool2_backward(const Tensor& gy, const std::vector<int64_t>& argmax, Tensor& gx) {
    // Scatter targets are disjoint per (b, c) plane; parallelizing over planes
    // keeps writes race-free and the order serial-identical.
    gx.fill(0.0);
    const int bs = gy.dim(0), c = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
    const int planes = bs * c;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int p = 0; p < planes; ++p) {
        const size_t base = static_cast<size_t>(p) * oh * ow;
        for (size_t i = base; i < base + static_cast<size_t>(oh) * ow; ++i)
            gx.v[static_cast<size_t>(argmax[i])] += gy.v[i];
    }
}

void global_avg_pool_forward(const Tensor& x, Tensor& y) {
    const int bs = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    y = Tensor({bs, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    const int planes = bs * c;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int p = 0; p < planes; ++p) {
        const int bi = p / c, ci = p % c;
        double acc = 0.0;
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) acc += x.at4(bi, ci, yy, xx);
        y.at2(bi, ci) = acc * inv;
    }
}

void global_avg_pool_backward(const Tensor& gy, int h, int w, Tensor& gx) {
    const int bs = gy.dim(0), c = gy.dim(1);
    gx = Tensor({bs, c, h, w});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    const int planes = bs * c;
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int p = 0; p < planes; ++p) {
        const int bi = p / c, ci = p % c;
        const double g = gy.at2(bi, ci) * inv;
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) gx.at4(bi, ci, yy, xx) = g;
    }
}

void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
        throw ShapeMismatchError("linear: expected x(B,D), w(O,D)");
    const int bs = x.dim(0), d = x.dim(1), out = w.dim(0);
    y = Tensor({bs, out});
#pragma omp parallel for schedule(static) collapse(2) if (parallel_enabled())
    for (int bi = 0; bi < bs; ++bi)
        for (int o = 0; o < out; ++o) {
            double acc = b[static_cast<size_t>(o)];
            for (int k = 0; k < d; ++k) acc += x.at2(bi, k) * w.at2(o, k);
            y.at2(bi, o) = acc;
        }
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor& gb) {
    const int bs = x.dim(0), d = x.dim(1), out = w.dim(0);
    gx = Tensor({bs, d});
    gw = Tensor({out, d});
    gb = Tensor({out});
#pragma omp parallel for schedule(static) collapse(2) if (parallel_enabled())
    for (int bi = 0; bi < bs; ++bi)
        for (int k = 0; k < d; ++k) {
            double acc = 0.0;
            for (int o = 0; o < out; ++o) acc += gy.at2(bi, o) * w.at2(o, k);
            gx.at2(bi, k) = acc;
        }
#pragma omp parallel for schedule(static) collapse(2) if (parallel_enabled())
    for (int o = 0; o < out; ++o)
        for (int k = 0; k < d; ++k) {
            double acc = 0.0;
            for (int bi = 0; bi < bs; ++bi) acc += gy.at2(bi, o) * x.at2(bi, k);
            gw.at2(o, k) = acc;
        }
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int o = 0; o < out; ++o) {
        double acc = 0.0;
        for (int bi = 0; bi < bs; ++bi) acc += gy.at2(bi, o);
        gb[static_cast<size_t>(o)] = acc;
    }
}

// ---------------------------------------------------------------- resize

namespace {

struct FilterTap {
    int first;                    // first source index
    std::vector<double> weights;  // normalized triangle weights
};

// PIL-style triangle filter taps for one output coordinate axis.
std::vector<FilterTap> make_taps(int in_size, int out_size) {
    const double scale = static_cast<double>(in_size) / out_size;
    const double support = std::max(1.0, scale);
    std::vector<FilterTap> taps(static_cast<size_t>(out_size));
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale;
        int lo = static_cast<int>(std::floor(center - support));
        int hi = static_cast<int>(std::ceil(center + support));
        lo = std::max(lo, 0);
        hi = std::min(hi, in_size);
        FilterTap t;
        t.first = lo;
        t.weights.resize(static_cast<size_t>(hi - lo));
        double sum = 0.0;
        for (int i = lo; i < hi; ++i) {
            const double d = (i + 0.5 - center) / support;
            const double w = std::max(0.0, 1.0 - std::abs(d));
            t.weights[static_cast<size_t>(i - lo)] = w;
            sum += w;
        }
        if (sum <= 0.0) {  // degenerate tap at the border: fall back to nearest
            const int n = std::clamp(static_cast<int>(center), 0, in_size - 1);
            t.first = n;
            t.weights = {1.0};
        } else {
            for (auto& w : t.weights) w /= sum;
        }
        taps[static_cast<size_t>(o)] = std::move(t);
    }
    return taps;
}

inline void resize_row_pass(const ImageF& src, const std::vector<FilterTap>& xtaps,
                            int y, ImageF& tmp) {
    for (int x = 0; x < tmp.w; ++x) {
        const auto& t = xtaps[static_cast<size_t>(x)];
        double acc[3] = {0, 0, 0};
        for (size_t i = 0; i < t.weights.size(); ++i) {
            const double w = t.weights[i];
            const int sx = t.first + static_cast<int>(i);
            for (int c = 0; c < 3; ++c) acc[c] += w * src.at(y, sx, c);
        }
        for (int c = 0; c < 3; ++c) tmp.at(y, x, c) = acc[c];
    }
}

inline void resize_col_pass(const ImageF& tmp, const std::vector<FilterTap>& ytaps,
                            int y, ImageF& dst) {
    const auto& t = ytaps[static_cast<size_t>(y)];
    for (int x = 0; x < dst.w; ++x) {
        double acc[3] = {0, 0, 0};
        for (size_t i = 0; i < t.weights.size(); ++i) {
            const double w = t.weights[i];
            const int sy = t.first + static_cast<int>(i);
            for (int c = 0; c < 3; ++c) acc[c] += w * tmp.at(sy, x, c);
        }
        for (int c = 0; c < 3; ++c) dst.at(y, x, c) = acc[c];
    }
}

}  // namespace

namespace serial {

ImageF resize_bilinear(const ImageF& src, int out_h, int out_w) {
    if (src.empty() || out_h <= 0 || out_w <= 0) throw ShapeMismatchError("resize: empty image or size");
    if (src.h == out_h && src.w == out_w) return src;
    const auto xtaps = make_taps(src.w, out_w);
    const auto ytaps = make_taps(src.h, out_h);
    ImageF tmp(src.h, out_w);
    for (int y = 0; y < src.h; ++y) resize_row_pass(src, xtaps, y, tmp);
    ImageF dst(out_h, out_w);
    for (int y = 0; y < out_h; ++y) resize_col_pass(tmp, ytaps, y, dst);
    return dst;
}

void cosine_matrix(const Tensor& z, Tensor& s) {
    const int n = z.dim(0), d = z.dim(1);
    std::vector<double> norms(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += z.at2(i, k) * z.at2(i, k);
        if (acc <= 0.0) throw ZeroVectorError("cosine_matrix: zero-norm row " + std::to_string(i));
        norms[static_cast<size_t>(i)] = std::sqrt(acc);
    }
    s = Tensor({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += z.at2(i, k) * z.at2(j, k);
            s.at2(i, j) = acc / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
        }
}

}  // namespace serial

ImageF resize_bilinear(const ImageF& src, int out_h, int out_w) {
    if (src.empty() || out_h <= 0 || out_w <= 0) throw ShapeMismatchError("resize: empty image or size");
    if (src.h == out_h && src.w == out_w) return src;
    const auto xtaps = make_taps(src.w, out_w);
    const auto ytaps = make_taps(src.h, out_h);
    ImageF tmp(src.h, out_w);
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int y = 0; y < src.h; ++y) resize_row_pass(src, xtaps, y, tmp);
    ImageF dst(out_h, out_w);
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int y = 0; y < out_h; ++y) resize_col_pass(tmp, ytaps, y, dst);
    return dst;
}

void cosine_matrix(const Tensor& z, Tensor& s) {
    const int n = z.dim(0), d = z.dim(1);
    std::vector<double> norms(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += z.at2(i, k) * z.at2(i, k);
        if (acc <= 0.0) throw ZeroVectorError("cosine_matrix: zero-norm row " + std::to_string(i));
        norms[static_cast<size_t>(i)] = std::sqrt(acc);
    }
    s = Tensor({n, n});
#pragma omp parallel for schedule(static) if (parallel_enabled())
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += z.at2(i, k) * z.at2(j, k);
            s.at2(i, j) = acc / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
        }
}

}  // namespace mpcs::kernels
