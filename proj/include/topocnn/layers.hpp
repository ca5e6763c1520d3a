#pragma once

// Forward and backward kernels for the layer types of the encoder-decoder
// network. All kernels are pure functions of their arguments.
//
// Weight layouts:
//   conv2d   (filters, kh, kw, in_ch)     maps in_ch -> filters
//   tconv2d  (in_ch, kh, kw, out_ch)      maps in_ch -> out_ch
//   dense    (out, 1, 1, in)              a 1x1 conv over a (n, 1, 1, in) tensor
// With these layouts tconv2d with weights W is exactly the adjoint of conv2d
// with the same W (valid padding, matching strides).

#include <cstddef>
#include <span>
#include <vector>

#include "topocnn/tensor.hpp"

namespace topocnn {

/// Gradients of a sum-reduced loss with respect to a layer's inputs.
struct LayerGrads {
    Tensor input;
    Tensor weights;
    std::vector<double> bias;
};

namespace detail {

inline void check_conv_weights(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                               const ConvParams& p) {
    p.validate();
    const Shape& ws = weights.shape();
    if (ws.n != p.filters || ws.h != p.kh || ws.w != p.kw) {
        throw ShapeError("conv2d: weight shape " + to_string(ws) + " does not match params");
    }
    if (ws.c != input.shape().c) {
        throw ShapeError("conv2d: input has " + std::to_string(input.shape().c) + " channels, weights expect " +
                         std::to_string(ws.c));
    }
    if (bias.size() != p.filters) throw ShapeError("conv2d: bias length does not match filter count");
}

struct ConvGeometry {
    std::size_t in_h, in_w, ch, out_h, out_w, patch;
    ResolvedPadding pad;
};

inline ConvGeometry conv_geometry(const Shape& in, const ConvParams& p) {
    auto [oh, ow] = conv_output_dims(in.h, in.w, p);
    return {in.h, in.w, in.c, oh, ow, p.kh * p.kw * in.c, resolve_padding(in.h, in.w, p)};
}

// Lowers sample `n` of `input` into an (out_h*out_w) x (kh*kw*ch) matrix.
inline void im2col(const Tensor& input, std::size_t n, const ConvParams& p, const ConvGeometry& g,
                   std::vector<double>& cols) {
    cols.assign(g.out_h * g.out_w * g.patch, 0.0);
    const double* src = input.data().data() + n * g.in_h * g.in_w * g.ch;
    double* dst = cols.data();
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            for (std::size_t a = 0; a < p.kh; ++a) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * p.sv + a) - static_cast<std::ptrdiff_t>(g.pad.top);
                for (std::size_t b = 0; b < p.kw; ++b, dst += g.ch) {
                    const auto iw =
                        static_cast<std::ptrdiff_t>(ow * p.sh + b) - static_cast<std::ptrdiff_t>(g.pad.left);
                    if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h) ||
                        iw >= static_cast<std::ptrdiff_t>(g.in_w)) {
                        continue;
                    }
                    const double* px = src + (static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw)) * g.ch;
                    std::copy_n(px, g.ch, dst);
                }
            }
        }
    }
}

// Scatter-adds a column matrix back into sample `n` of `grad_input`.
inline void col2im(const std::vector<double>& cols, std::size_t n, const ConvParams& p, const ConvGeometry& g,
                   Tensor& grad_input) {
    double* dst = grad_input.data().data() + n * g.in_h * g.in_w * g.ch;
    const double* src = cols.data();
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            for (std::size_t a = 0; a < p.kh; ++a) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * p.sv + a) - static_cast<std::ptrdiff_t>(g.pad.top);
                for (std::size_t b = 0; b < p.kw; ++b, src += g.ch) {
                    const auto iw =
                        static_cast<std::ptrdiff_t>(ow * p.sh + b) - static_cast<std::ptrdiff_t>(g.pad.left);
                    if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h) ||
                        iw >= static_cast<std::ptrdiff_t>(g.in_w)) {
                        continue;
                    }
                    double* px = dst + (static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw)) * g.ch;
                    for (std::size_t c = 0; c < g.ch; ++c) px[c] += src[c];
                }
            }
        }
    }
}

// (rows x cols) row-major -> (cols x rows) row-major.
inline std::vector<double> transpose(std::span<const double> m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(m.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                             const ConvParams& p) {
    detail::check_conv_weights(input, weights, bias, p);
    const auto g = detail::conv_geometry(input.shape(), p);
    const std::size_t F = p.filters;
    const std::size_t K = g.patch;
    const std::size_t M = g.out_h * g.out_w;

    // Weights as K x F so the innermost loop runs over contiguous filters.
    const std::vector<double> wt = detail::transpose(weights.data(), F, K);

    Tensor out({input.shape().n, g.out_h, g.out_w, F});
    std::vector<double> cols;
    for (std::size_t n = 0; n < input.shape().n; ++n) {
        detail::im2col(input, n, p, g, cols);
        double* y = out.data().data() + n * M * F;
        for (std::size_t o = 0; o < M; ++o) {
            double* yo = y + o * F;
            std::copy(bias.begin(), bias.end(), yo);
            const double* a = cols.data() + o * K;
            for (std::size_t k = 0; k < K; ++k) {
                const double av = a[k];
                if (av == 0.0) continue;
                const double* wk = wt.data() + k * F;
                for (std::size_t f = 0; f < F; ++f) yo[f] += av * wk[f];
            }
        }
    }
    return out;
}

inline LayerGrads conv2d_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& weights,
                                  const ConvParams& p) {
    const std::vector<double> zero_bias(p.filters, 0.0);
    detail::check_conv_weights(cached_input, weights, zero_bias, p);
    const auto g = detail::conv_geometry(cached_input.shape(), p);
    const std::size_t F = p.filters;
    const std::size_t K = g.patch;
    const std::size_t M = g.out_h * g.out_w;
    if (grad_out.shape() != Shape{cached_input.shape().n, g.out_h, g.out_w, F}) {
        throw ShapeError("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                         " inconsistent with forward pass");
    }

    LayerGrads grads{Tensor(cached_input.shape()), Tensor(weights.shape()), std::vector<double>(F, 0.0)};
    std::vector<double> gwt(K * F, 0.0);
    std::vector<double> cols;
    std::vector<double> dcols;
    const double* w = weights.data().data();

    for (std::size_t n = 0; n < cached_input.shape().n; ++n) {
        detail::im2col(cached_input, n, p, g, cols);
        dcols.assign(M * K, 0.0);
        const double* gy = grad_out.data().data() + n * M * F;
        for (std::size_t o = 0; o < M; ++o) {
            const double* go = gy + o * F;
            for (std::size_t f = 0; f < F; ++f) grads.bias[f] += go[f];

            const double* a = cols.data() + o * K;
            for (std::size_t k = 0; k < K; ++k) {
                const double av = a[k];
                if (av == 0.0) continue;
                double* gk = gwt.data() + k * F;
                for (std::size_t f = 0; f < F; ++f) gk[f] += av * go[f];
            }

            double* da = dcols.data() + o * K;
            for (std::size_t f = 0; f < F; ++f) {
                const double gv = go[f];
                if (gv == 0.0) continue;
                const double* wf = w + f * K;
                for (std::size_t k = 0; k < K; ++k) da[k] += gv * wf[k];
            }
        }
        detail::col2im(dcols, n, p, g, grads.input);
    }
    grads.weights.storage() = detail::transpose(gwt, K, F);
    return grads;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

struct PoolResult {
    Tensor output;
    /// Flat index into the input tensor of each output cell's maximum.
    std::vector<std::size_t> argmax;
};

inline PoolResult maxpool_forward(const Tensor& input, const PoolParams& p) {
    p.validate();
    const Shape& s = input.shape();
    if (s.h % p.ph != 0 || s.w % p.pw != 0) {
        throw ShapeError("maxpool: input " + to_string(s) + " not divisible by window " + std::to_string(p.ph) + "x" +
                         std::to_string(p.pw));
    }
    const std::size_t oh = s.h / p.ph;
    const std::size_t ow = s.w / p.pw;
    PoolResult r{Tensor({s.n, oh, ow, s.c}), std::vector<std::size_t>(s.n * oh * ow * s.c)};
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t c = 0; c < s.c; ++c) {
                    std::size_t best = input.index(n, i * p.ph, j * p.pw, c);
                    for (std::size_t a = 0; a < p.ph; ++a)
                        for (std::size_t b = 0; b < p.pw; ++b) {
                            const std::size_t idx = input.index(n, i * p.ph + a, j * p.pw + b, c);
                            if (input[idx] > input[best]) best = idx;  // strict: first max wins ties
                        }
                    const std::size_t o = r.output.index(n, i, j, c);
                    r.output[o] = input[best];
                    r.argmax[o] = best;
                }
    return r;
}

inline Tensor maxpool_backward(const Tensor& grad_out, std::span<const std::size_t> argmax, const Shape& input_shape) {
    if (argmax.size() != grad_out.size()) throw ShapeError("maxpool_backward: argmax length mismatch");
    Tensor grad(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
        if (argmax[o] >= grad.size()) throw ShapeError("maxpool_backward: argmax index out of range");
        grad[argmax[o]] += grad_out[o];
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Transpose convolution
// ---------------------------------------------------------------------------

namespace detail {

inline void check_tconv(const Tensor& input, const Tensor& weights, std::span<const double> bias, const ConvParams& p) {
    p.validate();
    if (p.padding.mode == Padding::Mode::Same) throw ShapeError("tconv2d: 'same' padding is not supported");
    const Shape& ws = weights.shape();
    if (ws.n != input.shape().c || ws.h != p.kh || ws.w != p.kw || ws.c != p.filters) {
        throw ShapeError("tconv2d: weight shape " + to_string(ws) + " does not match input channels / params");
    }
    if (bias.size() != p.filters) throw ShapeError("tconv2d: bias length does not match filter count");
}

}  // namespace detail

inline std::pair<std::size_t, std::size_t> tconv_output_dims(std::size_t in_h, std::size_t in_w, const ConvParams& p) {
    const std::size_t full_h = tconv_output_size(in_h, p.kh, p.sv, 0);
    const std::size_t full_w = tconv_output_size(in_w, p.kw, p.sh, 0);
    const std::size_t crop_h = p.padding.top + p.padding.bottom;
    const std::size_t crop_w = p.padding.left + p.padding.right;
    if (crop_h >= full_h || crop_w >= full_w) throw ShapeError("tconv2d: padding removes the whole output");
    return {full_h - crop_h, full_w - crop_w};
}

/// Each input pixel scatters input * kernel into the output at stride offsets;
/// overlapping contributions are summed. Explicit padding crops the output.
inline Tensor tconv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                              const ConvParams& p) {
    detail::check_tconv(input, weights, bias, p);
    const Shape& s = input.shape();
    auto [oh, ow] = tconv_output_dims(s.h, s.w, p);
    const std::size_t co_n = p.filters;
    const auto pt = static_cast<std::ptrdiff_t>(p.padding.top);
    const auto pl = static_cast<std::ptrdiff_t>(p.padding.left);

    Tensor out({s.n, oh, ow, co_n});
    for (std::size_t i = 0; i < out.size(); i += co_n) std::copy(bias.begin(), bias.end(), out.data().begin() + i);

    const double* w = weights.data().data();
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < s.h; ++i)
            for (std::size_t j = 0; j < s.w; ++j)
                for (std::size_t a = 0; a < p.kh; ++a) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * p.sv + a) - pt;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(oh)) continue;
                    for (std::size_t b = 0; b < p.kw; ++b) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * p.sh + b) - pl;
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(ow)) continue;
                        double* dst = &out(n, static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
                        for (std::size_t ci = 0; ci < s.c; ++ci) {
                            const double v = input(n, i, j, ci);
                            if (v == 0.0) continue;
                            const double* wk = w + ((ci * p.kh + a) * p.kw + b) * co_n;
                            for (std::size_t co = 0; co < co_n; ++co) dst[co] += v * wk[co];
                        }
                    }
                }
    return out;
}

inline LayerGrads tconv2d_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& weights,
                                   const ConvParams& p) {
    const std::vector<double> zero_bias(p.filters, 0.0);
    detail::check_tconv(cached_input, weights, zero_bias, p);
    const Shape& s = cached_input.shape();
    auto [oh, ow] = tconv_output_dims(s.h, s.w, p);
    const std::size_t co_n = p.filters;
    if (grad_out.shape() != Shape{s.n, oh, ow, co_n}) {
        throw ShapeError("tconv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                         " inconsistent with forward pass");
    }
    const auto pt = static_cast<std::ptrdiff_t>(p.padding.top);
    const auto pl = static_cast<std::ptrdiff_t>(p.padding.left);

    LayerGrads grads{Tensor(s), Tensor(weights.shape()), std::vector<double>(co_n, 0.0)};
    for (std::size_t i = 0; i < grad_out.size(); i += co_n)
        for (std::size_t co = 0; co < co_n; ++co) grads.bias[co] += grad_out[i + co];

    const double* w = weights.data().data();
    double* gw = grads.weights.data().data();
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < s.h; ++i)
            for (std::size_t j = 0; j < s.w; ++j)
                for (std::size_t a = 0; a < p.kh; ++a) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * p.sv + a) - pt;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(oh)) continue;
                    for (std::size_t b = 0; b < p.kw; ++b) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * p.sh + b) - pl;
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(ow)) continue;
                        const double* g = grad_out.data().data() + grad_out.index(n, static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
                        for (std::size_t ci = 0; ci < s.c; ++ci) {
                            const std::size_t wo = ((ci * p.kh + a) * p.kw + b) * co_n;
                            const double v = cached_input(n, i, j, ci);
                            double acc = 0.0;
                            for (std::size_t co = 0; co < co_n; ++co) {
                                acc += g[co] * w[wo + co];
                                gw[wo + co] += v * g[co];
                            }
                            grads.input(n, i, j, ci) += acc;
                        }
                    }
                }
    return grads;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

namespace detail {
inline void check_dense(const Tensor& input, const Tensor& weights, std::size_t bias_len) {
    const Shape& s = input.shape();
    const Shape& ws = weights.shape();
    if (s.h != 1 || s.w != 1) throw ShapeError("dense: input must be flattened to (n,1,1,len), got " + to_string(s));
    if (ws.h != 1 || ws.w != 1 || ws.c != s.c) {
        throw ShapeError("dense: weight shape " + to_string(ws) + " does not match input length " +
                         std::to_string(s.c));
    }
    if (bias_len != ws.n) throw ShapeError("dense: bias length does not match output width");
}
}  // namespace detail

/// y = W x + b for every sample of a (n,1,1,in) tensor; weights are (out,1,1,in).
inline Tensor dense_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias) {
    detail::check_dense(input, weights, bias.size());
    const std::size_t in = input.shape().c;
    const std::size_t out_n = weights.shape().n;
    Tensor out({input.shape().n, 1, 1, out_n});
    const double* w = weights.data().data();
    for (std::size_t n = 0; n < input.shape().n; ++n) {
        const double* x = input.data().data() + n * in;
        for (std::size_t o = 0; o < out_n; ++o) {
            const double* wo = w + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += wo[i] * x[i];
            out[n * out_n + o] = acc + bias[o];
        }
    }
    return out;
}

inline LayerGrads dense_backward(const Tensor& grad_out, const Tensor& cached_input, const Tensor& weights) {
    detail::check_dense(cached_input, weights, weights.shape().n);
    const std::size_t in = cached_input.shape().c;
    const std::size_t out_n = weights.shape().n;
    if (grad_out.shape() != Shape{cached_input.shape().n, 1, 1, out_n}) {
        throw ShapeError("dense_backward: grad_out shape " + to_string(grad_out.shape()) + " inconsistent");
    }
    LayerGrads grads{Tensor(cached_input.shape()), Tensor(weights.shape()), std::vector<double>(out_n, 0.0)};
    const double* w = weights.data().data();
    double* gw = grads.weights.data().data();
    for (std::size_t n = 0; n < cached_input.shape().n; ++n) {
        const double* x = cached_input.data().data() + n * in;
        double* gx = grads.input.data().data() + n * in;
        for (std::size_t o = 0; o < out_n; ++o) {
            const double g = grad_out[n * out_n + o];
            grads.bias[o] += g;
            if (g == 0.0) continue;
            const double* wo = w + o * in;
            double* gwo = gw + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                gwo[i] += g * x[i];
                gx[i] += g * wo[i];
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Elementwise and reshaping
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

/// Gradient passes where the forward input was strictly positive.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& cached_input) {
    if (grad_out.shape() != cached_input.shape()) throw ShapeError("relu_backward: shape mismatch");
    Tensor grad(grad_out.shape());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = cached_input[i] > 0.0 ? grad_out[i] : 0.0;
    return grad;
}

/// (n,h,w,c) -> (n,1,1,h*w*c), row-major order preserved.
inline Tensor flatten(const Tensor& input) {
    const Shape& s = input.shape();
    return input.reshaped({s.n, 1, 1, s.per_sample()});
}

/// (n, ...) -> (n,h,w,c) with the same per-sample element count.
inline Tensor reshape(const Tensor& input, std::size_t h, std::size_t w, std::size_t c) {
    return input.reshaped({input.shape().n, h, w, c});
}

}  // namespace topocnn
