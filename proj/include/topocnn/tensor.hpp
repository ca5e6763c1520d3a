#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace topocnn {

/// Thrown when tensor shapes or layer parameters are inconsistent.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Extents of a rank-4 NHWC tensor.
struct Shape {
    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;

    [[nodiscard]] constexpr std::size_t size() const noexcept { return n * h * w * c; }
    [[nodiscard]] constexpr std::size_t per_sample() const noexcept { return h * w * c; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '(' << s.n << ',' << s.h << ',' << s.w << ',' << s.c << ')';
    return os.str();
}

/// Dense rank-4 array of doubles stored row-major in (batch, height, width, channels) order.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             to_string(shape_));
        }
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::vector<double>& storage() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const noexcept { return data_; }

    [[nodiscard]] std::size_t index(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
    }
    double& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
        return data_[index(n, h, w, c)];
    }
    double operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return data_[index(n, h, w, c)];
    }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Same data, new extents. Element count must be preserved.
    [[nodiscard]] Tensor reshaped(Shape target) const {
        if (target.size() != shape_.size()) {
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(target));
        }
        return Tensor(target, data_);
    }

    /// Copy of samples [first, first + count) along the batch axis.
    [[nodiscard]] Tensor batch_slice(std::size_t first, std::size_t count) const {
        if (first + count > shape_.n) throw ShapeError("batch slice out of range");
        const std::size_t stride = shape_.per_sample();
        Shape s = shape_;
        s.n = count;
        return Tensor(s, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                                             data_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride)));
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

/// Gathers the listed samples of `src` (in order) into a new batch.
inline Tensor gather_batch(const Tensor& src, std::span<const std::size_t> indices) {
    const std::size_t stride = src.shape().per_sample();
    Shape s = src.shape();
    s.n = indices.size();
    Tensor out(s);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= src.shape().n) throw ShapeError("batch index out of range");
        std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Layer parameter records
// ---------------------------------------------------------------------------

/// Zero padding applied around the spatial axes of a convolution input.
struct Padding {
    enum class Mode { Same, Valid, Explicit };

    Mode mode = Mode::Valid;
    std::size_t top = 0;
    std::size_t bottom = 0;
    std::size_t left = 0;
    std::size_t right = 0;

    static constexpr Padding same() noexcept { return {Mode::Same, 0, 0, 0, 0}; }
    static constexpr Padding valid() noexcept { return {Mode::Valid, 0, 0, 0, 0}; }
    static constexpr Padding explicit_pad(std::size_t t, std::size_t b, std::size_t l, std::size_t r) noexcept {
        return {Mode::Explicit, t, b, l, r};
    }
    static constexpr Padding symmetric(std::size_t p) noexcept { return explicit_pad(p, p, p, p); }

    friend constexpr bool operator==(const Padding&, const Padding&) = default;
};

struct ConvParams {
    std::size_t filters = 1;
    std::size_t kh = 1;
    std::size_t kw = 1;
    std::size_t sv = 1;  // vertical stride
    std::size_t sh = 1;  // horizontal stride
    Padding padding = Padding::valid();

    void validate() const {
        if (filters < 1 || kh < 1 || kw < 1 || sv < 1 || sh < 1) {
            throw ShapeError("conv params: filters, kernel and stride must all be >= 1");
        }
    }

    friend constexpr bool operator==(const ConvParams&, const ConvParams&) = default;
};

/// Non-overlapping max pooling: stride equals window.
struct PoolParams {
    std::size_t ph = 2;
    std::size_t pw = 2;
    std::size_t sv = 2;
    std::size_t sh = 2;

    static constexpr PoolParams square(std::size_t k) noexcept { return {k, k, k, k}; }

    void validate() const {
        if (ph < 1 || pw < 1 || sv < 1 || sh < 1) throw ShapeError("pool params must be >= 1");
        if (sv != ph || sh != pw) throw ShapeError("pool stride must equal the window (non-overlapping pooling)");
    }

    friend constexpr bool operator==(const PoolParams&, const PoolParams&) = default;
};

// ---------------------------------------------------------------------------
// Output-size arithmetic
// ---------------------------------------------------------------------------

/// floor((I - K + 2P) / S) + 1.
inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in < 1 || kernel < 1 || stride < 1) throw ShapeError("conv_output_size: I, K and S must be >= 1");
    if (kernel > in + 2 * pad) {
        throw ShapeError("conv_output_size: kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

/// (I - 1) * S + K - 2P.
inline std::size_t tconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in < 1 || kernel < 1 || stride < 1) throw ShapeError("tconv_output_size: I, K and S must be >= 1");
    const std::size_t full = (in - 1) * stride + kernel;
    if (2 * pad > full) throw ShapeError("tconv_output_size: negative output size");
    return full - 2 * pad;
}

/// Concrete per-side padding for one conv application.
struct ResolvedPadding {
    std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

namespace detail {
inline std::pair<std::size_t, std::size_t> same_pad_axis(std::size_t in, std::size_t k, std::size_t s) {
    // out = ceil(in / s); the odd pixel of padding goes to the bottom/right.
    const std::size_t out = (in + s - 1) / s;
    const std::size_t needed = (out - 1) * s + k;
    const std::size_t total = needed > in ? needed - in : 0;
    return {total / 2, total - total / 2};
}
}  // namespace detail

inline ResolvedPadding resolve_padding(std::size_t in_h, std::size_t in_w, const ConvParams& p) {
    switch (p.padding.mode) {
        case Padding::Mode::Valid:
            return {};
        case Padding::Mode::Explicit:
            return {p.padding.top, p.padding.bottom, p.padding.left, p.padding.right};
        case Padding::Mode::Same: {
            auto [t, b] = detail::same_pad_axis(in_h, p.kh, p.sv);
            auto [l, r] = detail::same_pad_axis(in_w, p.kw, p.sh);
            return {t, b, l, r};
        }
    }
    return {};
}

/// Output spatial dims of conv2d_forward for a given input size.
inline std::pair<std::size_t, std::size_t> conv_output_dims(std::size_t in_h, std::size_t in_w, const ConvParams& p) {
    const ResolvedPadding pad = resolve_padding(in_h, in_w, p);
    const std::size_t ph = pad.top + pad.bottom;
    const std::size_t pw = pad.left + pad.right;
    if (p.kh > in_h + ph || p.kw > in_w + pw) throw ShapeError("conv: kernel larger than padded input");
    return {(in_h + ph - p.kh) / p.sv + 1, (in_w + pw - p.kw) / p.sh + 1};
}

}  // namespace topocnn
