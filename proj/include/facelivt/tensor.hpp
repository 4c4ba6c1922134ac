#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace facelivt {

/// Thrown when operand extents disagree. The message names the offending axis.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Extents of a rank-4 feature map in batch-channel-height-width order.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t size() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Dense NCHW float tensor. Storage is contiguous and row-major over the shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }

    std::span<const float> data() const { return values_; }
    std::span<float> data() { return values_; }
    const std::vector<float>& values() const { return values_; }

    float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return values_[index(n, c, h, w)];
    }
    float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return values_[index(n, c, h, w)];
    }

    bool operator==(const Tensor&) const = default;

private:
    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_{};
    std::vector<float> values_;
};

/// Row-major float matrix. Token matrices are [tokens, channels].
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> values);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }

    std::span<const float> data() const { return values_; }
    std::span<float> data() { return values_; }
    const std::vector<float>& values() const { return values_; }

    std::span<const float> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }

    float operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    float& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

    Matrix transposed() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> values_;
};

/// Convolution parameters. weight is [outChannels, inChannels / groups, k, k].
struct ConvSpec {
    Tensor weight;
    std::vector<float> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;

    std::size_t out_channels() const { return weight.shape().n; }
    std::size_t in_channels_per_group() const { return weight.shape().c; }
    std::size_t in_channels() const { return weight.shape().c * groups; }
    std::size_t kernel() const { return weight.shape().h; }
    bool depthwise() const {
        return in_channels_per_group() == 1 && groups == out_channels();
    }
    std::size_t parameter_count() const { return weight.size() + bias.size(); }

    /// Throws std::invalid_argument when the bundle is internally inconsistent.
    void validate() const;

    bool operator==(const ConvSpec&) const = default;
};

/// Zero-bias convolution with zeroed weights.
ConvSpec make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride, std::size_t padding, std::size_t groups);

/// Inference batch norm. `sigma` is the stabilized denominator sqrt(var + eps);
/// `eps` is kept for provenance only and never re-applied.
struct BnSpec {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> mean;
    std::vector<float> sigma;
    float eps = 1e-5f;

    std::size_t channels() const { return gamma.size(); }
    /// Scalars that carry state: gamma, beta, mean, sigma.
    std::size_t parameter_count() const { return 4 * gamma.size(); }
    void validate() const;

    static BnSpec identity(std::size_t channels);
    static BnSpec from_variance(std::vector<float> gamma, std::vector<float> beta,
                                std::vector<float> mean, std::span<const float> variance,
                                float eps);

    bool operator==(const BnSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Multiply-accumulate accounting hook.
//
// Every primitive below reports the multiply-accumulates it executes to the
// innermost active MacCountScope on the calling thread. With no scope active
// the hook is a single branch.

namespace detail {
inline thread_local std::uint64_t* mac_sink = nullptr;
}

inline void record_macs(std::uint64_t count) {
    if (detail::mac_sink != nullptr) *detail::mac_sink += count;
}

class MacCountScope {
public:
    explicit MacCountScope(std::uint64_t& sink) : previous_(detail::mac_sink) {
        detail::mac_sink = &sink;
    }
    ~MacCountScope() { detail::mac_sink = previous_; }
    MacCountScope(const MacCountScope&) = delete;
    MacCountScope& operator=(const MacCountScope&) = delete;

private:
    std::uint64_t* previous_;
};

// ---------------------------------------------------------------------------
// Primitives. All are pure; accumulation runs in double.

namespace detail {
/// c[m, n] = a[m, k] * b[k, n], row-major, accumulated in double.
void gemm_accumulate(const float* a, const float* b, double* c, std::size_t m, std::size_t k, std::size_t n);
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

Tensor conv2d(const Tensor& x, const ConvSpec& spec);
Tensor batchnorm(const Tensor& x, const BnSpec& bn);
/// Batch norm over the columns of a token matrix (channel-last layout).
Matrix batchnorm_columns(const Matrix& x, const BnSpec& bn);
Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias = {});
Tensor gelu(const Tensor& x);
Matrix gelu(const Matrix& x);
float gelu(float x);
Matrix softmax_rows(const Matrix& x);
Matrix avgpool_global(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);

/// Throws std::domain_error if any element is NaN or infinite.
void require_finite(std::span<const float> values, const char* where);

/// Token view of batch item `n`: [h * w, c], tokens in row-major (h, w) order.
Matrix flatten_tokens(const Tensor& x, std::size_t n = 0);
/// Inverse of flatten_tokens, writing into batch item `n` of `out`.
void unflatten_tokens(const Matrix& tokens, Tensor& out, std::size_t n = 0);

double max_abs_diff(std::span<const float> a, std::span<const float> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace facelivt
