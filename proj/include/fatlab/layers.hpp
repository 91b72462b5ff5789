#pragma once

// Forward/backward kernels for the handful of layer types the reference
// network uses. Convolutions go through im2col + an Eigen GEMM over the whole
// batch; everything else is a plain loop.

#include <Eigen/Dense>

#include "fatlab/tensor.hpp"

namespace fatlab::layers {

template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
    int patch_size() const { return in_channels * kernel * kernel; }
    std::size_t weight_count() const { return std::size_t(out_channels) * patch_size(); }
};

/// Unfolds every receptive field of `x` into one column of a row-major
/// (C*k*k) x (n*Ho*Wo) matrix; columns run over samples, then positions.
template <typename T>
RowMatrix<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
    const int ho = g.out_size(x.h()), wo = g.out_size(x.w());
    const int k = g.kernel;
    const std::ptrdiff_t width = std::ptrdiff_t(x.n()) * ho * wo;
    RowMatrix<T> cols(g.patch_size(), width);
    for (int c = 0; c < g.in_channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* out = cols.data() + std::ptrdiff_t((c * k + ky) * k + kx) * width;
                for (int s = 0; s < x.n(); ++s) {
                    const T* plane = x.channel(s, c).data();
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * g.stride + ky - g.pad;
                        if (iy < 0 || iy >= x.h()) {
                            std::fill(out, out + wo, T(0));
                            out += wo;
                            continue;
                        }
                        const T* row = plane + std::ptrdiff_t(iy) * x.w();
                        // ox range whose ix = ox*stride + kx - pad lands inside the row
                        const int off = kx - g.pad;
                        const int lo = std::clamp((-off + g.stride - 1) / g.stride, 0, wo);
                        const int last = x.w() - 1 - off;
                        const int hi = last < 0 ? lo : std::clamp(last / g.stride + 1, lo, wo);
                        std::fill(out, out + lo, T(0));
                        if (g.stride == 1) {
                            std::copy_n(row + lo + off, hi - lo, out + lo);
                        } else {
                            for (int ox = lo; ox < hi; ++ox) out[ox] = row[ox * g.stride + off];
                        }
                        std::fill(out + hi, out + wo, T(0));
                        out += wo;
                    }
                }
            }
    return cols;
}

template <typename T>
void col2im_accumulate(const RowMatrix<T>& cols, const ConvGeometry& g, Tensor<T>& dx) {
    const int ho = g.out_size(dx.h()), wo = g.out_size(dx.w());
    const int k = g.kernel;
    const std::ptrdiff_t width = cols.cols();
    for (int c = 0; c < g.in_channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* in = cols.data() + std::ptrdiff_t((c * k + ky) * k + kx) * width;
                for (int s = 0; s < dx.n(); ++s) {
                    T* plane = dx.channel(s, c).data();
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * g.stride + ky - g.pad;
                        if (iy < 0 || iy >= dx.h()) {
                            in += wo;
                            continue;
                        }
                        T* row = plane + std::ptrdiff_t(iy) * dx.w();
                        for (int ox = 0; ox < wo; ++ox, ++in) {
                            const int ix = ox * g.stride + kx - g.pad;
                            if (ix >= 0 && ix < dx.w()) row[ix] += *in;
                        }
                    }
                }
            }
}

/// y = conv(x, weight). `cols` receives the unfolded input for backward.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> weight, const ConvGeometry& g, RowMatrix<T>& cols) {
    if (x.c() != g.in_channels) throw ShapeError("convolution input channel mismatch");
    const int ho = g.out_size(x.h()), wo = g.out_size(x.w());
    if (ho <= 0 || wo <= 0) throw ShapeError("convolution output would be empty");
    cols = im2col(x, g);
    Eigen::Map<const RowMatrix<T>> w(weight.data(), g.out_channels, g.patch_size());
    RowMatrix<T> y(g.out_channels, cols.cols());
    y.noalias() = w * cols;
    Tensor<T> out(x.n(), g.out_channels, ho, wo);
    const std::size_t plane = out.plane();
    for (int o = 0; o < g.out_channels; ++o)
        for (int s = 0; s < x.n(); ++s)
            std::copy_n(y.data() + std::ptrdiff_t(o) * y.cols() + std::ptrdiff_t(s * plane), plane,
                        out.channel(s, o).data());
    return out;
}

/// Accumulates the weight gradient into `dweight` (may be empty) and, when
/// `dx` is non-null, the input gradient into `*dx` (which must be
/// zero-initialised or hold a partial sum).
template <typename T>
void conv_backward(const Tensor<T>& dy, const RowMatrix<T>& cols, std::span<const T> weight, const ConvGeometry& g,
                   std::span<T> dweight, Tensor<T>* dx) {
    const std::size_t plane = dy.plane();
    RowMatrix<T> dym(g.out_channels, std::ptrdiff_t(dy.n()) * std::ptrdiff_t(plane));
    for (int o = 0; o < g.out_channels; ++o)
        for (int s = 0; s < dy.n(); ++s)
            std::copy_n(dy.channel(s, o).data(), plane,
                        dym.data() + std::ptrdiff_t(o) * dym.cols() + std::ptrdiff_t(s * plane));
    if (!dweight.empty()) {
        Eigen::Map<RowMatrix<T>> dw(dweight.data(), g.out_channels, g.patch_size());
        dw.noalias() += dym * cols.transpose();
    }
    if (dx != nullptr) {
        Eigen::Map<const RowMatrix<T>> w(weight.data(), g.out_channels, g.patch_size());
        RowMatrix<T> dcols(g.patch_size(), dym.cols());
        dcols.noalias() = w.transpose() * dym;
        col2im_accumulate(dcols, g, *dx);
    }
}

/// Per-channel y = x * scale[c] + shift[c].
template <typename T>
Tensor<T> affine_forward(const Tensor<T>& x, std::span<const T> scale, std::span<const T> shift) {
    Tensor<T> y = Tensor<T>::like(x);
    for (int s = 0; s < x.n(); ++s)
        for (int c = 0; c < x.c(); ++c) {
            auto in = x.channel(s, c);
            auto out = y.channel(s, c);
            const T a = scale[c], b = shift[c];
            for (std::size_t p = 0; p < in.size(); ++p) out[p] = in[p] * a + b;
        }
    return y;
}

template <typename T>
Tensor<T> affine_backward(const Tensor<T>& dy, const Tensor<T>& x, std::span<const T> scale, std::span<T> dscale,
                          std::span<T> dshift) {
    Tensor<T> dx = Tensor<T>::like(dy);
    for (int s = 0; s < dy.n(); ++s)
        for (int c = 0; c < dy.c(); ++c) {
            auto g = dy.channel(s, c);
            auto in = x.channel(s, c);
            auto out = dx.channel(s, c);
            T ds = T(0), db = T(0);
            for (std::size_t p = 0; p < g.size(); ++p) {
                ds += g[p] * in[p];
                db += g[p];
                out[p] = g[p] * scale[c];
            }
            if (!dscale.empty()) dscale[c] += ds;
            if (!dshift.empty()) dshift[c] += db;
        }
    return dx;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& pre) {
    Tensor<T> y = Tensor<T>::like(pre);
    // NaN propagates so that non-finite inputs surface in the loss.
    const T* in = pre.data();
    T* out = y.data();
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = in[i] < T(0) ? T(0) : in[i];
    return y;
}

/// Rectifier derivative is taken as 0 at exactly 0.
template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& pre) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(pre[i] > T(0))) grad[i] = T(0);
}

/// Zeroes the listed channels of every sample.
template <typename T>
void zero_channels(Tensor<T>& x, std::span<const int> channels) {
    for (int s = 0; s < x.n(); ++s)
        for (int k : channels) {
            auto ch = x.channel(s, k);
            std::fill(ch.begin(), ch.end(), T(0));
        }
}

/// Global average pool: returns a samples x channels matrix.
template <typename T>
RowMatrix<T> gap_forward(const Tensor<T>& x) {
    RowMatrix<T> out(x.n(), x.c());
    const T inv = T(1) / T(x.plane());
    for (int s = 0; s < x.n(); ++s)
        for (int c = 0; c < x.c(); ++c) {
            T acc = T(0);
            for (T v : x.channel(s, c)) acc += v;
            out(s, c) = acc * inv;
        }
    return out;
}

template <typename T>
Tensor<T> gap_backward(const RowMatrix<T>& dpooled, int h, int w) {
    Tensor<T> dx(int(dpooled.rows()), int(dpooled.cols()), h, w);
    const T inv = T(1) / T(h * w);
    for (int s = 0; s < dx.n(); ++s)
        for (int c = 0; c < dx.c(); ++c) {
            auto ch = dx.channel(s, c);
            std::fill(ch.begin(), ch.end(), dpooled(s, c) * inv);
        }
    return dx;
}

}  // namespace fatlab::layers
