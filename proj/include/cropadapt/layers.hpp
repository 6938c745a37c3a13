#pragma once

// Forward/backward kernels for the fixed keypoint network. Templated on the
// scalar type so the same code runs in float for training and in double for
// finite-difference gradient checks. Tensors are NCHW, contiguous.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace cropadapt {

template <class S>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<S> data;

    void resize(int n_, int c_, int h_, int w_) {
        n = n_;
        c = c_;
        h = h_;
        w = w_;
        data.assign(static_cast<std::size_t>(n) * c * h * w, S(0));
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_size() const { return plane() * c; }
    std::size_t size() const { return data.size(); }
    S* sample(int i) { return data.data() + sample_size() * i; }
    const S* sample(int i) const { return data.data() + sample_size() * i; }
    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols: (C*k*k) x (Ho*Wo), row = (ch*k + ky)*k + kx.
template <class S>
void im2col(const S* in, int c, int h, int w, int k, int stride, int pad, int ho, int wo, S* cols) {
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                S* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    S* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, S(0));
                        continue;
                    }
                    const S* src = in + (static_cast<std::size_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
                    }
                }
            }
        }
    }
}

template <class S>
void col2im(const S* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, S* out) {
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const S* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    S* dst = out + (static_cast<std::size_t>(ch) * h + iy) * w;
                    const S* src = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

struct ConvSpec {
    int cin = 0;
    int cout = 0;
    int k = 3;
    int stride = 1;
    int pad = 1;
};

// weight: cout x (cin*k*k); bias may be empty.
template <class S>
void conv2d_forward(const ConvSpec& cs, const Tensor4<S>& in, std::span<const S> weight, std::span<const S> bias,
                    Tensor4<S>& out, std::vector<S>& scratch) {
    const int ho = conv_out_size(in.h, cs.k, cs.stride, cs.pad);
    const int wo = conv_out_size(in.w, cs.k, cs.stride, cs.pad);
    out.resize(in.n, cs.cout, ho, wo);
    const int kk = cs.cin * cs.k * cs.k;
    const bool pointwise = cs.k == 1 && cs.stride == 1 && cs.pad == 0;
    if (!pointwise) scratch.resize(static_cast<std::size_t>(kk) * ho * wo);
    ConstMatMap<S> wm(weight.data(), cs.cout, kk);
    for (int i = 0; i < in.n; ++i) {
        const S* src = in.sample(i);
        if (!pointwise) {
            im2col(src, cs.cin, in.h, in.w, cs.k, cs.stride, cs.pad, ho, wo, scratch.data());
            src = scratch.data();
        }
        ConstMatMap<S> cols(src, kk, static_cast<Eigen::Index>(ho) * wo);
        MatMap<S> om(out.sample(i), cs.cout, static_cast<Eigen::Index>(ho) * wo);
        om.noalias() = wm * cols;
        if (!bias.empty())
            for (int oc = 0; oc < cs.cout; ++oc) om.row(oc).array() += bias[oc];
    }
}

// Accumulates into d_weight / d_bias when non-empty; writes d_in when non-null.
template <class S>
void conv2d_backward(const ConvSpec& cs, const Tensor4<S>& in, std::span<const S> weight, const Tensor4<S>& d_out,
                     std::span<S> d_weight, std::span<S> d_bias, Tensor4<S>* d_in, std::vector<S>& scratch) {
    const int ho = d_out.h, wo = d_out.w;
    const Eigen::Index hw = static_cast<Eigen::Index>(ho) * wo;
    const int kk = cs.cin * cs.k * cs.k;
    const bool pointwise = cs.k == 1 && cs.stride == 1 && cs.pad == 0;
    if (d_in) d_in->resize(in.n, in.c, in.h, in.w);
    if (!pointwise) scratch.resize(static_cast<std::size_t>(kk) * hw * (d_in ? 2 : 1));
    ConstMatMap<S> wm(weight.data(), cs.cout, kk);
    for (int i = 0; i < in.n; ++i) {
        ConstMatMap<S> dom(d_out.sample(i), cs.cout, hw);
        if (!d_weight.empty()) {
            const S* src = in.sample(i);
            if (!pointwise) {
                im2col(in.sample(i), cs.cin, in.h, in.w, cs.k, cs.stride, cs.pad, ho, wo, scratch.data());
                src = scratch.data();
            }
            ConstMatMap<S> cols(src, kk, hw);
            MatMap<S> dw(d_weight.data(), cs.cout, kk);
            dw.noalias() += dom * cols.transpose();
        }
        // Plain loop: Eigen's vectorized sum peels an unaligned head, so its
        // rounding would depend on where the heap placed the buffer.
        if (!d_bias.empty())
            for (int oc = 0; oc < cs.cout; ++oc) {
                const S* row = d_out.sample(i) + oc * hw;
                S acc = 0;
                for (Eigen::Index k = 0; k < hw; ++k) acc += row[k];
                d_bias[oc] += acc;
            }
        if (d_in) {
            if (pointwise) {
                MatMap<S> dim(d_in->sample(i), kk, hw);
                dim.noalias() = wm.transpose() * dom;
            } else {
                S* dcols_ptr = scratch.data() + static_cast<std::size_t>(kk) * hw;
                MatMap<S> dcols(dcols_ptr, kk, hw);
                dcols.noalias() = wm.transpose() * dom;
                col2im(dcols_ptr, cs.cin, in.h, in.w, cs.k, cs.stride, cs.pad, ho, wo, d_in->sample(i));
            }
        }
    }
}

template <class S>
void upsample2x_forward(const Tensor4<S>& in, Tensor4<S>& out) {
    out.resize(in.n, in.c, in.h * 2, in.w * 2);
    for (int i = 0; i < in.n; ++i)
        for (int ch = 0; ch < in.c; ++ch) {
            const S* src = in.sample(i) + ch * in.plane();
            S* dst = out.sample(i) + ch * out.plane();
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) dst[y * out.w + x] = src[(y / 2) * in.w + x / 2];
        }
}

template <class S>
void upsample2x_backward(const Tensor4<S>& d_out, Tensor4<S>& d_in) {
    d_in.resize(d_out.n, d_out.c, d_out.h / 2, d_out.w / 2);
    for (int i = 0; i < d_out.n; ++i)
        for (int ch = 0; ch < d_out.c; ++ch) {
            const S* src = d_out.sample(i) + ch * d_out.plane();
            S* dst = d_in.sample(i) + ch * d_in.plane();
            for (int y = 0; y < d_out.h; ++y)
                for (int x = 0; x < d_out.w; ++x) dst[(y / 2) * d_in.w + x / 2] += src[y * d_out.w + x];
        }
}

template <class S>
void relu_forward(Tensor4<S>& t) {
    for (S& x : t.data) x = x > S(0) ? x : S(0);
}

// Masks the gradient in place using the ReLU output.
template <class S>
void relu_backward(const Tensor4<S>& out, Tensor4<S>& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (!(out.data[i] > S(0))) grad.data[i] = S(0);
}

template <class S>
struct BatchNormCache {
    Tensor4<S> xhat;
    std::vector<S> inv_std;
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Training-mode normalization with batch statistics. Running statistics are
// updated only when both spans are non-empty.
template <class S>
void batchnorm_train_forward(const Tensor4<S>& in, std::span<const S> gamma, std::span<const S> beta,
                             std::span<S> running_mean, std::span<S> running_var, Tensor4<S>& out,
                             BatchNormCache<S>& cache) {
    out.resize(in.n, in.c, in.h, in.w);
    cache.xhat.resize(in.n, in.c, in.h, in.w);
    cache.inv_std.assign(in.c, S(0));
    const std::size_t plane = in.plane();
    const double count = static_cast<double>(plane) * in.n;
    for (int ch = 0; ch < in.c; ++ch) {
        double sum = 0.0;
        for (int i = 0; i < in.n; ++i) {
            const S* src = in.sample(i) + ch * plane;
            for (std::size_t p = 0; p < plane; ++p) sum += src[p];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (int i = 0; i < in.n; ++i) {
            const S* src = in.sample(i) + ch * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const double d = src[p] - mean;
                sq += d * d;
            }
        }
        const double var = sq / count;
        const S inv = static_cast<S>(1.0 / std::sqrt(var + kBatchNormEps));
        cache.inv_std[ch] = inv;
        const S m = static_cast<S>(mean);
        for (int i = 0; i < in.n; ++i) {
            const S* src = in.sample(i) + ch * plane;
            S* xh = cache.xhat.sample(i) + ch * plane;
            S* dst = out.sample(i) + ch * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                xh[p] = (src[p] - m) * inv;
                dst[p] = gamma[ch] * xh[p] + beta[ch];
            }
        }
        if (!running_mean.empty() && !running_var.empty()) {
            const double unbiased = count > 1 ? sq / (count - 1) : var;
            running_mean[ch] = static_cast<S>((1 - kBatchNormMomentum) * running_mean[ch] + kBatchNormMomentum * mean);
            running_var[ch] = static_cast<S>((1 - kBatchNormMomentum) * running_var[ch] + kBatchNormMomentum * unbiased);
        }
    }
}

template <class S>
void batchnorm_infer_forward(const Tensor4<S>& in, std::span<const S> gamma, std::span<const S> beta,
                             std::span<const S> running_mean, std::span<const S> running_var, Tensor4<S>& out) {
    out.resize(in.n, in.c, in.h, in.w);
    const std::size_t plane = in.plane();
    for (int ch = 0; ch < in.c; ++ch) {
        const S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + kBatchNormEps));
        const S scale = gamma[ch] * inv;
        const S shift = beta[ch] - running_mean[ch] * scale;
        for (int i = 0; i < in.n; ++i) {
            const S* src = in.sample(i) + ch * plane;
            S* dst = out.sample(i) + ch * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] * scale + shift;
        }
    }
}

// Writes d_in when non-null; accumulates d_gamma / d_beta when non-empty.
template <class S>
void batchnorm_backward(const BatchNormCache<S>& cache, std::span<const S> gamma, const Tensor4<S>& d_out,
                        std::span<S> d_gamma, std::span<S> d_beta, Tensor4<S>* d_in) {
    const Tensor4<S>& xhat = cache.xhat;
    const std::size_t plane = xhat.plane();
    const double count = static_cast<double>(plane) * xhat.n;
    if (d_in) d_in->resize(xhat.n, xhat.c, xhat.h, xhat.w);
    for (int ch = 0; ch < xhat.c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < xhat.n; ++i) {
            const S* dy = d_out.sample(i) + ch * plane;
            const S* xh = xhat.sample(i) + ch * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                sum_dy += dy[p];
                sum_dy_xhat += static_cast<double>(dy[p]) * xh[p];
            }
        }
        if (!d_gamma.empty()) d_gamma[ch] += static_cast<S>(sum_dy_xhat);
        if (!d_beta.empty()) d_beta[ch] += static_cast<S>(sum_dy);
        if (!d_in) continue;
        const S k = gamma[ch] * cache.inv_std[ch];
        const S mean_dy = static_cast<S>(sum_dy / count);
        const S mean_dy_xhat = static_cast<S>(sum_dy_xhat / count);
        for (int i = 0; i < xhat.n; ++i) {
            const S* dy = d_out.sample(i) + ch * plane;
            const S* xh = xhat.sample(i) + ch * plane;
            S* dx = d_in->sample(i) + ch * plane;
            for (std::size_t p = 0; p < plane; ++p) dx[p] = k * (dy[p] - mean_dy - xh[p] * mean_dy_xhat);
        }
    }
}

}  // namespace cropadapt
