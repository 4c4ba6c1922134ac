#include "facelivt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

namespace facelivt {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[' << shape.n << ", " << shape.c << ", " << shape.h << ", " << shape.w << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), values_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
        throw ShapeError("tensor: data length " + std::to_string(values_.size()) +
                         " does not match shape " + to_string(shape_));
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw ShapeError("matrix: data length " + std::to_string(values_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

void ConvSpec::validate() const {
    const Shape& s = weight.shape();
    if (s.n == 0 || s.c == 0 || s.h == 0) throw ShapeError("conv: empty weight " + to_string(s));
    if (s.h != s.w) throw ShapeError("conv: kernel height/width differ (" + to_string(s) + ")");
    if (groups == 0) throw std::invalid_argument("conv: groups must be positive");
    if (stride == 0) throw std::invalid_argument("conv: stride must be positive");
    if (s.n % groups != 0) {
        throw ShapeError("conv: out channels " + std::to_string(s.n) + " not divisible by groups " +
                         std::to_string(groups));
    }
    if (bias.size() != s.n) {
        throw ShapeError("conv: bias length " + std::to_string(bias.size()) +
                         " does not match out channels " + std::to_string(s.n));
    }
}

ConvSpec make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride, std::size_t padding, std::size_t groups) {
    if (groups == 0 || in_channels % groups != 0) {
        throw ShapeError("conv: in channels " + std::to_string(in_channels) +
                         " not divisible by groups " + std::to_string(groups));
    }
    ConvSpec spec;
    spec.weight = Tensor({out_channels, in_channels / groups, kernel, kernel});
    spec.bias.assign(out_channels, 0.0f);
    spec.stride = stride;
    spec.padding = padding;
    spec.groups = groups;
    spec.validate();
    return spec;
}

void BnSpec::validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || mean.size() != c || sigma.size() != c) {
        throw ShapeError("batchnorm: gamma/beta/mean/sigma lengths differ");
    }
    if (!(eps > 0.0f)) throw std::invalid_argument("batchnorm: eps must be positive");
    for (float s : sigma) {
        if (!(s > 0.0f)) throw std::invalid_argument("batchnorm: sigma must be strictly positive");
    }
}

BnSpec BnSpec::identity(std::size_t channels) {
    BnSpec bn;
    bn.gamma.assign(channels, 1.0f);
    bn.beta.assign(channels, 0.0f);
    bn.mean.assign(channels, 0.0f);
    bn.sigma.assign(channels, 1.0f);
    return bn;
}

BnSpec BnSpec::from_variance(std::vector<float> gamma, std::vector<float> beta,
                             std::vector<float> mean, std::span<const float> variance, float eps) {
    BnSpec bn;
    bn.gamma = std::move(gamma);
    bn.beta = std::move(beta);
    bn.mean = std::move(mean);
    bn.eps = eps;
    bn.sigma.reserve(variance.size());
    for (float v : variance) bn.sigma.push_back(static_cast<float>(std::sqrt(double(v) + eps)));
    bn.validate();
    return bn;
}

void require_finite(std::span<const float> values, const char* where) {
    for (float v : values) {
        if (!std::isfinite(v)) throw std::domain_error(std::string(where) + ": non-finite value");
    }
}

namespace detail {

void gemm_accumulate(const float* a, const float* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto ai = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k), ni = static_cast<Eigen::Index>(n);
    Eigen::Map<RowMajorD> out(c, ai, ni);
    if (m == 0 || n == 0) return;
    if (k == 0) {
        out.setZero();
        return;
    }
    const RowMajorD lhs = Eigen::Map<const RowMajorF>(a, ai, ki).cast<double>();
    const RowMajorD rhs = Eigen::Map<const RowMajorF>(b, ki, ni).cast<double>();
    out.noalias() = lhs * rhs;
}

}  // namespace detail

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
    if (input + 2 * padding < kernel) return 0;
    return (input + 2 * padding - kernel) / stride + 1;
}

namespace {

Tensor depthwise_conv2d(const Tensor& x, const ConvSpec& spec, std::size_t oh, std::size_t ow) {
    const Shape& in = x.shape();
    const std::size_t k = spec.kernel();
    const std::size_t stride = spec.stride;
    const std::size_t pad = spec.padding;
    const std::size_t ph = in.h + 2 * pad;
    const std::size_t pw = in.w + 2 * pad;
    Tensor out({in.n, in.c, oh, ow});
    std::vector<float> padded(ph * pw, 0.0f);
    std::vector<double> acc(oh * ow);
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t c = 0; c < in.c; ++c) {
            const float* src = &x.data()[(n * in.c + c) * in.h * in.w];
            for (std::size_t y = 0; y < in.h; ++y) {
                std::copy(src + y * in.w, src + (y + 1) * in.w, padded.begin() + (y + pad) * pw + pad);
            }
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* wk = spec.weight.data().data() + c * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wv = wk[ky * k + kx];
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const float* row = padded.data() + (oy * stride + ky) * pw + kx;
                        double* dst = acc.data() + oy * ow;
                        for (std::size_t ox = 0; ox < ow; ++ox) dst[ox] += wv * row[ox * stride];
                    }
                }
            }
            const double b = spec.bias[c];
            float* dst = &out.data()[(n * in.c + c) * oh * ow];
            for (std::size_t i = 0; i < oh * ow; ++i) dst[i] = static_cast<float>(acc[i] + b);
        }
    }
    record_macs(std::uint64_t(in.n) * in.c * k * k * oh * ow);
    require_finite(out.data(), "conv2d");
    return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvSpec& spec) {
    spec.validate();
    const Shape& in = x.shape();
    const Shape& ws = spec.weight.shape();
    if (in.c != spec.in_channels()) {
        throw ShapeError("conv2d: channel axis mismatch, input has " + std::to_string(in.c) +
                         ", spec expects " + std::to_string(spec.in_channels()));
    }
    const std::size_t k = ws.h;
    const std::size_t stride = spec.stride;
    const std::size_t pad = spec.padding;
    const std::size_t oh = conv_output_extent(in.h, k, stride, pad);
    const std::size_t ow = conv_output_extent(in.w, k, stride, pad);
    if (oh == 0) throw ShapeError("conv2d: height axis yields empty output");
    if (ow == 0) throw ShapeError("conv2d: width axis yields empty output");

    const std::size_t groups = spec.groups;
    const std::size_t cin_g = ws.c;
    const std::size_t cout_g = ws.n / groups;
    const std::size_t taps = cin_g * k * k;
    const std::size_t pixels = oh * ow;

    if (cin_g == 1 && cout_g == 1) return depthwise_conv2d(x, spec, oh, ow);

    // im2col over one group: row (ic, ky, kx), column output pixel. Padded
    // taps are materialized as zeros and take part in the product.
    Tensor out({in.n, ws.n, oh, ow});
    std::vector<float> columns(taps * pixels);
    std::vector<double> acc(cout_g * pixels);
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t ic = 0; ic < cin_g; ++ic) {
                const float* plane = &x.data()[((n * in.c) + g * cin_g + ic) * in.h * in.w];
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        float* dst = columns.data() + ((ic * k + ky) * k + kx) * pixels;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                            float* row = dst + oy * ow;
                            if (iy < 0 || iy >= std::ptrdiff_t(in.h)) {
                                std::fill(row, row + ow, 0.0f);
                                continue;
                            }
                            const float* src = plane + std::size_t(iy) * in.w;
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                                row[ox] = (ix < 0 || ix >= std::ptrdiff_t(in.w)) ? 0.0f : src[ix];
                            }
                        }
                    }
                }
            }
            const float* wg = spec.weight.data().data() + g * cout_g * taps;
            detail::gemm_accumulate(wg, columns.data(), acc.data(), cout_g, taps, pixels);
            for (std::size_t og = 0; og < cout_g; ++og) {
                const std::size_t oc = g * cout_g + og;
                const double b = spec.bias[oc];
                const double* a = acc.data() + og * pixels;
                float* dst = &out.data()[(n * ws.n + oc) * pixels];
                for (std::size_t i = 0; i < pixels; ++i) dst[i] = static_cast<float>(a[i] + b);
            }
        }
    }
    record_macs(std::uint64_t(in.n) * ws.n * taps * pixels);
    require_finite(out.data(), "conv2d");
    return out;
}

Tensor batchnorm(const Tensor& x, const BnSpec& bn) {
    bn.validate();
    const Shape& s = x.shape();
    if (s.c != bn.channels()) {
        throw ShapeError("batchnorm: channel axis mismatch, input has " + std::to_string(s.c) +
                         ", bn has " + std::to_string(bn.channels()));
    }
    Tensor out(s);
    const std::size_t plane = s.plane();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const float mu = bn.mean[c], sd = bn.sigma[c], g = bn.gamma[c], b = bn.beta[c];
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                out.data()[base + i] = (x.data()[base + i] - mu) / sd * g + b;
            }
        }
    }
    record_macs(s.size());
    require_finite(out.data(), "batchnorm");
    return out;
}

Matrix batchnorm_columns(const Matrix& x, const BnSpec& bn) {
    bn.validate();
    if (x.cols() != bn.channels()) {
        throw ShapeError("batchnorm: channel axis mismatch, input has " + std::to_string(x.cols()) +
                         ", bn has " + std::to_string(bn.channels()));
    }
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) {
            dst[c] = (src[c] - bn.mean[c]) / bn.sigma[c] * bn.gamma[c] + bn.beta[c];
        }
    }
    record_macs(x.size());
    require_finite(out.data(), "batchnorm");
    return out;
}

Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias) {
    if (x.cols() != w.rows()) {
        throw ShapeError("linear: inner dimension mismatch, x has " + std::to_string(x.cols()) +
                         " columns, w has " + std::to_string(w.rows()) + " rows");
    }
    const std::size_t rows = x.rows();
    const std::size_t inner = w.rows();
    const std::size_t cols = w.cols();
    if (!bias.empty() && bias.size() != cols) {
        throw ShapeError("linear: bias length " + std::to_string(bias.size()) +
                         " does not match output dimension " + std::to_string(cols));
    }
    Matrix out(rows, cols);
    std::vector<double> acc(rows * cols);
    detail::gemm_accumulate(x.data().data(), w.data().data(), acc.data(), rows, inner, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        auto dst = out.row(r);
        const double* a = acc.data() + r * cols;
        if (bias.empty()) {
            for (std::size_t j = 0; j < cols; ++j) dst[j] = static_cast<float>(a[j]);
        } else {
            for (std::size_t j = 0; j < cols; ++j) dst[j] = static_cast<float>(a[j] + bias[j]);
        }
    }
    record_macs(std::uint64_t(rows) * inner * cols);
    require_finite(out.data(), "linear");
    return out;
}

namespace {

// Every element goes through the same vectorized erf: the buffer is aligned
// and padded to whole packets, so results do not depend on position.
void gelu_into(std::span<const float> in, std::span<float> out) {
    constexpr std::size_t kPad = 16;
    Eigen::ArrayXf buffer((in.size() + kPad - 1) / kPad * kPad);
    buffer.setZero();
    std::copy(in.begin(), in.end(), buffer.data());
    buffer = 0.5f * buffer * (1.0f + (buffer * (std::numbers::sqrt2_v<float> * 0.5f)).erf());
    std::copy(buffer.data(), buffer.data() + in.size(), out.begin());
}

}  // namespace

float gelu(float x) {
    float y = 0.0f;
    gelu_into({&x, 1}, {&y, 1});
    return y;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    gelu_into(x.data(), out.data());
    return out;
}

Matrix gelu(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    gelu_into(x.data(), out.data());
    return out;
}

Matrix softmax_rows(const Matrix& x) {
    require_finite(x.data(), "softmax_rows");
    Matrix out(x.rows(), x.cols());
    std::vector<double> e(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        if (src.empty()) continue;
        const float peak = *std::max_element(src.begin(), src.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) {
            e[c] = std::exp(double(src[c]) - double(peak));
            sum += e[c];
        }
        auto dst = out.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] = static_cast<float>(e[c] / sum);
    }
    return out;
}

Matrix avgpool_global(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.h == 0 || s.w == 0) throw ShapeError("avgpool_global: empty spatial extent");
    Matrix out(s.n, s.c);
    const std::size_t plane = s.plane();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const float* src = &x.data()[(n * s.c + c) * plane];
            double sum = 0.0;
            for (std::size_t i = 0; i < plane; ++i) sum += src[i];
            out(n, c) = static_cast<float>(sum / double(plane));
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Matrix flatten_tokens(const Tensor& x, std::size_t n) {
    const Shape& s = x.shape();
    if (n >= s.n) throw ShapeError("flatten_tokens: batch axis index out of range");
    const std::size_t tokens = s.plane();
    Matrix m(tokens, s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
        const float* src = &x.data()[(n * s.c + c) * tokens];
        for (std::size_t t = 0; t < tokens; ++t) m(t, c) = src[t];
    }
    return m;
}

void unflatten_tokens(const Matrix& tokens, Tensor& out, std::size_t n) {
    const Shape& s = out.shape();
    if (n >= s.n) throw ShapeError("unflatten_tokens: batch axis index out of range");
    if (tokens.rows() != s.plane()) throw ShapeError("unflatten_tokens: token axis mismatch");
    if (tokens.cols() != s.c) throw ShapeError("unflatten_tokens: channel axis mismatch");
    for (std::size_t c = 0; c < s.c; ++c) {
        float* dst = &out.data()[(n * s.c + c) * s.plane()];
        for (std::size_t t = 0; t < tokens.rows(); ++t) dst[t] = tokens(t, c);
    }
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(double(a[i]) - b[i]));
    return worst;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace facelivt
