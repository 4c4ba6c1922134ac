#include <doctest.h>

#include <cmath>
#include <random>

#include "facelivt/tensor.hpp"
#include "oracles.hpp"

using namespace facelivt;

namespace {

// 0.5 * (1 + erf(1 / sqrt(2))), evaluated at 30 significant digits.
constexpr double kGeluOne = 0.841344746068542948585232545632;

Tensor scaled(const Tensor& x, float a) {
    Tensor out = x;
    for (float& v : out.data()) v *= a;
    return out;
}

ConvSpec without_bias(ConvSpec spec) {
    std::fill(spec.bias.begin(), spec.bias.end(), 0.0f);
    return spec;
}

}  // namespace

TEST_CASE("conv2d box sum over a padded 3x3 depthwise kernel") {
    Tensor x({1, 1, 3, 3}, 1.0f);
    ConvSpec spec = make_conv(1, 1, 3, 1, 1, 1);
    for (float& v : spec.weight.data()) v = 1.0f;
    Tensor y = conv2d(x, spec);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.at(0, 0, 1, 1) == 9.0f);
    CHECK(y.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 0, 0, 2) == 4.0f);
    CHECK(y.at(0, 0, 2, 0) == 4.0f);
    CHECK(y.at(0, 0, 2, 2) == 4.0f);
    CHECK(y.at(0, 0, 0, 1) == 6.0f);
}

TEST_CASE("conv2d with a 1x1 identity kernel returns its input") {
    std::mt19937 rng(1);
    Tensor x = oracle::random_tensor({2, 5, 6, 4}, rng);
    ConvSpec spec = make_conv(5, 5, 1, 1, 0, 1);
    for (std::size_t c = 0; c < 5; ++c) spec.weight.at(c, c, 0, 0) = 1.0f;
    CHECK(conv2d(x, spec) == x);
}

TEST_CASE("conv2d depthwise 3x3 matches the loop oracle") {
    std::mt19937 rng(2);
    Tensor x = oracle::random_tensor({1, 4, 7, 7}, rng);
    ConvSpec spec = oracle::random_conv(4, 4, 3, 1, 1, 4, rng);
    CHECK(max_abs_diff(conv2d(x, spec).data(), oracle::conv2d_loops(x, spec).data()) < 1e-6);
}

TEST_CASE("conv2d matches the loop oracle across strides, paddings and groups") {
    std::mt19937 rng(3);
    struct Case { std::size_t in, out, k, stride, pad, groups, h, w; };
    const Case cases[] = {
        {3, 8, 3, 2, 1, 1, 9, 9},  {8, 8, 3, 1, 1, 8, 5, 6},  {6, 4, 1, 1, 0, 2, 4, 4},
        {4, 6, 5, 1, 2, 2, 7, 5},  {8, 16, 3, 2, 1, 1, 8, 8}, {2, 2, 3, 2, 0, 1, 6, 7},
        {12, 12, 3, 2, 1, 12, 7, 7},
    };
    for (const Case& c : cases) {
        Tensor x = oracle::random_tensor({2, c.in, c.h, c.w}, rng);
        ConvSpec spec = oracle::random_conv(c.in, c.out, c.k, c.stride, c.pad, c.groups, rng);
        Tensor y = conv2d(x, spec);
        Tensor ref = oracle::conv2d_loops(x, spec);
        REQUIRE(y.shape() == ref.shape());
        CHECK(max_abs_diff(y.data(), ref.data()) < 1e-5);
    }
}

TEST_CASE("conv2d output extents follow the floor rule") {
    CHECK(conv_output_extent(112, 3, 2, 1) == 56);
    CHECK(conv_output_extent(7, 3, 2, 1) == 4);
    CHECK(conv_output_extent(5, 3, 1, 0) == 3);
    CHECK(conv_output_extent(2, 5, 1, 0) == 0);
    CHECK_THROWS_AS(conv2d(Tensor({1, 1, 2, 2}), make_conv(1, 1, 5, 1, 0, 1)), ShapeError);
}

TEST_CASE("conv2d rejects a channel mismatch") {
    Tensor x({1, 3, 4, 4});
    ConvSpec spec = make_conv(4, 4, 3, 1, 1, 1);
    CHECK_THROWS_AS(conv2d(x, spec), ShapeError);
}

TEST_CASE("dense convolution agrees with the grouped path at groups == 1") {
    std::mt19937 rng(4);
    std::uniform_int_distribution<std::size_t> ch(1, 6), ks(0, 2), st(1, 2), ext(4, 9);
    for (int i = 0; i < 20; ++i) {
        const std::size_t in = ch(rng), out = ch(rng), k = 2 * ks(rng) + 1, stride = st(rng);
        Tensor x = oracle::random_tensor({1, in, ext(rng), ext(rng)}, rng);
        ConvSpec dense = oracle::random_conv(in, out, k, stride, k / 2, 1, rng);
        CHECK(max_abs_diff(conv2d(x, dense).data(), oracle::conv2d_loops(x, dense).data()) < 1e-5);
        // A block-diagonal grouped spec with one group per input channel block
        // equals a dense spec whose off-block weights are zero.
        if (in == out) {
            ConvSpec grouped = oracle::random_conv(in, out, k, stride, k / 2, in, rng);
            ConvSpec expanded = make_conv(in, out, k, stride, k / 2, 1);
            expanded.bias = grouped.bias;
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        expanded.weight.at(o, o, ky, kx) = grouped.weight.at(o, 0, ky, kx);
            CHECK(max_abs_diff(conv2d(x, grouped).data(), conv2d(x, expanded).data()) < 1e-5);
        }
    }
}

TEST_CASE("conv2d is linear for zero-bias specs") {
    std::mt19937 rng(5);
    for (std::size_t groups : {std::size_t{1}, std::size_t{4}}) {
        ConvSpec spec = without_bias(oracle::random_conv(4, 4, 3, 1, 1, groups, rng));
        Tensor x = oracle::random_tensor({1, 4, 6, 6}, rng);
        Tensor y = oracle::random_tensor({1, 4, 6, 6}, rng);
        const float a = 0.7f, b = -1.3f;
        Tensor lhs = conv2d(add(scaled(x, a), scaled(y, b)), spec);
        Tensor rhs = add(scaled(conv2d(x, spec), a), scaled(conv2d(y, spec), b));
        CHECK(max_abs_diff(lhs.data(), rhs.data()) < 1e-5);
    }
}

TEST_CASE("batchnorm identity statistics leave the input unchanged") {
    std::mt19937 rng(6);
    Tensor x = oracle::random_tensor({2, 3, 4, 5}, rng);
    CHECK(batchnorm(x, BnSpec::identity(3)) == x);
}

TEST_CASE("batchnorm of zeros with gamma 2 and beta 3 gives 3") {
    BnSpec bn = BnSpec::identity(2);
    bn.gamma = {2.0f, 2.0f};
    bn.beta = {3.0f, 3.0f};
    Tensor y = batchnorm(Tensor({1, 2, 3, 3}), bn);
    for (float v : y.data()) CHECK(v == 3.0f);
}

TEST_CASE("batchnorm matches the scalar oracle") {
    std::mt19937 rng(7);
    Tensor x = oracle::random_tensor({2, 5, 3, 4}, rng);
    BnSpec bn = oracle::random_bn(5, rng);
    Tensor y = batchnorm(x, bn);
    double worst = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t h = 0; h < 3; ++h)
                for (std::size_t w = 0; w < 4; ++w)
                    worst = std::max(worst, std::abs(y.at(n, c, h, w) - oracle::bn_scalar(x.at(n, c, h, w), bn, c)));
    CHECK(worst < 1e-6);
}

TEST_CASE("batchnorm is an affine map per channel") {
    std::mt19937 rng(8);
    Tensor x = oracle::random_tensor({1, 3, 4, 4}, rng);
    BnSpec bn = oracle::random_bn(3, rng);
    const float a = 2.5f;
    Tensor y = batchnorm(scaled(x, a), bn);
    for (std::size_t c = 0; c < 3; ++c) {
        const double slope = bn.gamma[c] / bn.sigma[c];
        const double intercept = bn.beta[c] - bn.mean[c] * slope;
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t w = 0; w < 4; ++w)
                CHECK(std::abs(y.at(0, c, h, w) - (a * slope * x.at(0, c, h, w) + intercept)) < 1e-6);
    }
}

TEST_CASE("batchnorm rejects non-positive sigma and channel mismatch") {
    BnSpec bn = BnSpec::identity(2);
    bn.sigma[1] = 0.0f;
    CHECK_THROWS(batchnorm(Tensor({1, 2, 2, 2}), bn));
    CHECK_THROWS_AS(batchnorm(Tensor({1, 3, 2, 2}), BnSpec::identity(2)), ShapeError);
}

TEST_CASE("BnSpec from variance stores the stabilized denominator") {
    const std::vector<float> var = {0.25f, 4.0f};
    BnSpec bn = BnSpec::from_variance({1, 1}, {0, 0}, {0, 0}, var, 1e-5f);
    CHECK(bn.sigma[0] == doctest::Approx(std::sqrt(0.25 + 1e-5)));
    CHECK(bn.sigma[1] == doctest::Approx(std::sqrt(4.0 + 1e-5)));
}

TEST_CASE("linear identity weight and zero bias returns the input") {
    std::mt19937 rng(9);
    Matrix x = oracle::random_matrix(4, 6, rng);
    CHECK(linear(x, Matrix::identity(6), std::vector<float>(6, 0.0f)) == x);
}

TEST_CASE("linear adds a broadcast bias") {
    Matrix x(1, 2, {1.0f, 2.0f});
    const std::vector<float> b = {1.0f, 1.0f};
    Matrix y = linear(x, Matrix::identity(2), b);
    CHECK(y(0, 0) == 2.0f);
    CHECK(y(0, 1) == 3.0f);
}

TEST_CASE("linear matches the triple-loop oracle and rejects bad shapes") {
    std::mt19937 rng(10);
    Matrix x = oracle::random_matrix(3, 5, rng);
    Matrix w = oracle::random_matrix(5, 4, rng);
    CHECK(max_abs_diff(linear(x, w).data(), oracle::matmul(x, w).data()) < 1e-6);
    CHECK_THROWS_AS(linear(x, oracle::random_matrix(4, 4, rng)), ShapeError);
}

TEST_CASE("gelu values") {
    CHECK(gelu(0.0f) == 0.0f);
    CHECK(std::abs(gelu(1.0f) - kGeluOne) < 1e-6);
    std::mt19937 rng(11);
    Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng, -4.0f, 4.0f);
    Tensor pos = gelu(x), neg = gelu(scaled(x, -1.0f));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(pos.data()[i] - neg.data()[i] - x.data()[i]) < 1e-6);
}

TEST_CASE("softmax rows") {
    Matrix equal(1, 4, 2.5f);
    const Matrix uniform = softmax_rows(equal);
    for (float v : uniform.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-7));

    Matrix pair(1, 2, {0.0f, float(std::log(2.0))});
    Matrix p = softmax_rows(pair);
    CHECK(std::abs(p(0, 0) - 1.0 / 3.0) < 1e-6);
    CHECK(std::abs(p(0, 1) - 2.0 / 3.0) < 1e-6);

    std::mt19937 rng(12);
    Matrix x = oracle::random_matrix(5, 7, rng, 5.0f);
    Matrix s = softmax_rows(x);
    Matrix shifted = x;
    for (std::size_t c = 0; c < 7; ++c) shifted(2, c) += 40.0f;
    Matrix t = softmax_rows(shifted);
    for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (float v : s.row(r)) {
            CHECK(v >= 0.0f);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    CHECK(max_abs_diff(s.data(), t.data()) < 1e-6);
}

TEST_CASE("softmax survives large logits") {
    Matrix x(1, 3, {1000.0f, 1000.0f, -1000.0f});
    Matrix p = softmax_rows(x);
    CHECK(p(0, 0) == doctest::Approx(0.5));
    CHECK(p(0, 2) == 0.0f);
}

TEST_CASE("global average pooling") {
    Matrix constant = avgpool_global(Tensor({2, 3, 4, 5}, 1.75f));
    CHECK(constant.rows() == 2);
    CHECK(constant.cols() == 3);
    for (float v : constant.data()) CHECK(v == doctest::Approx(1.75));

    std::mt19937 rng(13);
    Tensor single = oracle::random_tensor({2, 4, 1, 1}, rng);
    CHECK(avgpool_global(single).values() == single.values());

    Tensor x = oracle::random_tensor({1, 3, 7, 6}, rng);
    Matrix pooled = avgpool_global(x);
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (std::size_t h = 0; h < 7; ++h)
            for (std::size_t w = 0; w < 6; ++w) sum += x.at(0, c, h, w);
        CHECK(std::abs(pooled(0, c) - sum / 42.0) < 1e-6);
    }
}

TEST_CASE("token flattening is row-major over height then width") {
    Tensor x({1, 2, 2, 3});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t w = 0; w < 3; ++w) x.at(0, c, h, w) = float(100 * c + 10 * h + w);
    Matrix t = flatten_tokens(x);
    CHECK(t.rows() == 6);
    CHECK(t.cols() == 2);
    CHECK(t(4, 1) == 111.0f);
    Tensor back(x.shape());
    unflatten_tokens(t, back);
    CHECK(back == x);
}

TEST_CASE("similarity helpers") {
    const std::vector<float> a = {1.0f, 2.0f, -2.0f}, b = {-1.0f, -2.0f, 2.0f};
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, b) == doctest::Approx(-1.0));
    CHECK(max_abs_diff(a, b) == doctest::Approx(4.0));
    const std::vector<float> zero(3, 0.0f);
    CHECK_THROWS(cosine_similarity(a, zero));
}

TEST_CASE("MAC hook counts dense work and nests") {
    std::uint64_t outer = 0, inner = 0;
    Matrix x(3, 5), w(5, 4);
    {
        MacCountScope scope(outer);
        linear(x, w);
        {
            MacCountScope nested(inner);
            linear(x, w);
        }
    }
    CHECK(outer == 3 * 5 * 4);
    CHECK(inner == 3 * 5 * 4);
}

TEST_CASE("require_finite flags NaN") {
    const std::vector<float> ok = {1.0f, 2.0f}, bad = {1.0f, std::nanf("")};
    CHECK_NOTHROW(require_finite(ok, "ok"));
    CHECK_THROWS_AS(require_finite(bad, "bad"), std::domain_error);
}
