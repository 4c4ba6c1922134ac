#include "facelivt/blocks.hpp"

#include <cmath>

namespace facelivt {

std::string_view to_string(Form form) { return form == Form::train ? "train" : "deploy"; }

// --- RepMix ----------------------------------------------------------------

std::size_t RepMixBlock::parameter_count() const {
    std::size_t count = kxk.parameter_count();
    if (pointwise) count += pointwise->parameter_count();
    if (bn) count += bn->parameter_count();
    return count;
}

void RepMixBlock::validate() const {
    kxk.validate();
    if (form == Form::train && (!pointwise || !bn)) {
        throw std::invalid_argument("repmix: train form requires the 1x1 branch and BN");
    }
    if (form == Form::train && residual != (kxk.stride == 1 && in_channels() == out_channels())) {
        throw std::invalid_argument("repmix: train form carries a residual exactly when stride is 1");
    }
    if (residual && (kxk.stride != 1 || in_channels() != out_channels())) {
        throw std::invalid_argument("repmix: residual requires stride 1 and equal channel counts");
    }
    if (pointwise) {
        pointwise->validate();
        if (pointwise->kernel() != 1) throw ShapeError("repmix: branch kernel must be 1x1");
        if (pointwise->out_channels() != out_channels() || pointwise->in_channels() != in_channels() ||
            pointwise->groups != kxk.groups || pointwise->stride != kxk.stride) {
            throw ShapeError("repmix: 1x1 branch channel axis or stride differs from kxk branch");
        }
    }
    if (bn) {
        bn->validate();
        if (bn->channels() != out_channels()) throw ShapeError("repmix: BN channel axis mismatch");
    }
}

namespace {

RepMixBlock make_rep_block(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                           std::size_t groups) {
    RepMixBlock block;
    block.form = Form::train;
    block.kxk = make_conv(in, out, kernel, stride, kernel / 2, groups);
    block.pointwise = make_conv(in, out, 1, stride, 0, groups);
    block.bn = BnSpec::identity(out);
    block.residual = stride == 1 && in == out;
    return block;
}

}  // namespace

RepMixBlock make_repmix(std::size_t channels, std::size_t kernel, std::size_t stride) {
    return make_rep_block(channels, channels, kernel, stride, channels);
}

RepMixBlock make_downsampler(std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
    return make_rep_block(in_channels, out_channels, kernel, 2, 1);
}

Tensor repmix_forward(const RepMixBlock& block, const Tensor& x) {
    block.validate();
    if (x.shape().c != block.in_channels()) {
        throw ShapeError("repmix: channel axis mismatch, input has " + std::to_string(x.shape().c) +
                         ", block expects " + std::to_string(block.in_channels()));
    }
    Tensor y = conv2d(x, block.kxk);
    if (block.pointwise) y = add(y, conv2d(x, *block.pointwise));
    if (block.bn) y = batchnorm(y, *block.bn);
    if (block.residual) y = add(x, y);
    return y;
}

// --- MHSA ------------------------------------------------------------------

void MhsaBlock::validate() const {
    const std::size_t c = wq.rows();
    if (heads == 0) throw std::invalid_argument("mhsa: heads must be positive");
    if (c % heads != 0) throw ShapeError("mhsa: channels not divisible by heads");
    for (const Matrix* m : {&wq, &wk, &wv, &wo}) {
        if (m->rows() != c || m->cols() != c) throw ShapeError("mhsa: projection matrices must be [C, C]");
    }
}

MhsaBlock make_mhsa(std::size_t channels, std::size_t heads) {
    MhsaBlock block;
    block.wq = Matrix(channels, channels);
    block.wk = Matrix(channels, channels);
    block.wv = Matrix(channels, channels);
    block.wo = Matrix(channels, channels);
    block.heads = heads;
    block.validate();
    return block;
}

Matrix mhsa_forward(const MhsaBlock& block, const Matrix& x, std::vector<Matrix>* attention) {
    block.validate();
    const std::size_t n = x.rows();
    const std::size_t c = block.channels();
    if (n == 0) throw ShapeError("mhsa: token axis is empty");
    if (x.cols() != c) throw ShapeError("mhsa: channel axis mismatch");

    const Matrix q = linear(x, block.wq);
    const Matrix k = linear(x, block.wk);
    const Matrix v = linear(x, block.wv);
    const std::size_t d = block.head_dim();
    const double scale = 1.0 / std::sqrt(double(d));

    if (attention != nullptr) attention->clear();
    Matrix concat(n, c);
    Matrix logits(n, n);
    for (std::size_t h = 0; h < block.heads; ++h) {
        const std::size_t off = h * d;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t t = 0; t < d; ++t) dot += double(q(i, off + t)) * k(j, off + t);
                logits(i, j) = static_cast<float>(dot * scale);
            }
        }
        const Matrix probs = softmax_rows(logits);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < d; ++t) {
                double sum = 0.0;
                for (std::size_t j = 0; j < n; ++j) sum += double(probs(i, j)) * v(j, off + t);
                concat(i, off + t) = static_cast<float>(sum);
            }
        }
        if (attention != nullptr) attention->push_back(probs);
    }
    record_macs(2 * std::uint64_t(n) * n * c);
    return linear(concat, block.wo);
}

// --- MHLA ------------------------------------------------------------------

void MhlaBlock::validate() const {
    if (heads == 0 || tokens == 0 || expansion == 0) {
        throw std::invalid_argument("mhla: heads, tokens and expansion must be positive");
    }
    if (w_in.size() != heads || w_out.size() != heads) throw ShapeError("mhla: one weight pair per head");
    for (std::size_t h = 0; h < heads; ++h) {
        if (w_in[h].rows() != tokens || w_in[h].cols() != hidden()) {
            throw ShapeError("mhla: head " + std::to_string(h) + " input weight must be [N, N*r]");
        }
        if (w_out[h].rows() != hidden() || w_out[h].cols() != tokens) {
            throw ShapeError("mhla: head " + std::to_string(h) + " output weight must be [N*r, N]");
        }
    }
}

MhlaBlock make_mhla(std::size_t heads, std::size_t tokens, std::size_t expansion) {
    MhlaBlock block;
    block.heads = heads;
    block.tokens = tokens;
    block.expansion = expansion;
    block.w_in.assign(heads, Matrix(tokens, tokens * expansion));
    block.w_out.assign(heads, Matrix(tokens * expansion, tokens));
    block.validate();
    return block;
}

Matrix mhla_forward(const MhlaBlock& block, const Matrix& x, Activation activation) {
    block.validate();
    const std::size_t n = x.rows();
    const std::size_t c = x.cols();
    if (n != block.tokens) {
        throw ShapeError("mhla: token axis mismatch, input has " + std::to_string(n) +
                         " tokens, weights bound to " + std::to_string(block.tokens));
    }
    if (c % block.heads != 0) throw ShapeError("mhla: channel axis not divisible by heads");
    const std::size_t d = c / block.heads;

    Matrix out(n, c);
    Matrix slice(d, n);
    for (std::size_t h = 0; h < block.heads; ++h) {
        const std::size_t off = h * d;
        for (std::size_t ch = 0; ch < d; ++ch)
            for (std::size_t t = 0; t < n; ++t) slice(ch, t) = x(t, off + ch);
        Matrix hidden = linear(slice, block.w_in[h]);
        if (activation == Activation::gelu) hidden = gelu(hidden);
        const Matrix mixed = linear(hidden, block.w_out[h]);
        for (std::size_t ch = 0; ch < d; ++ch)
            for (std::size_t t = 0; t < n; ++t) out(t, off + ch) = mixed(ch, t);
    }
    return out;
}

// --- MLP -------------------------------------------------------------------

std::size_t MlpBlock::parameter_count() const {
    std::size_t count = w_expand.size() + w_reduce.size() + b_expand.size() + b_reduce.size();
    if (bn_inner) count += bn_inner->parameter_count();
    if (bn_outer) count += bn_outer->parameter_count();
    return count;
}

void MlpBlock::validate() const {
    const std::size_t c = w_expand.rows();
    const std::size_t hidden = w_expand.cols();
    if (c == 0 || hidden == 0 || hidden % c != 0) throw ShapeError("mlp: expand weight must be [C, rC], r >= 1");
    if (w_reduce.rows() != hidden || w_reduce.cols() != c) throw ShapeError("mlp: reduce weight must be [rC, C]");
    if (!b_expand.empty() && b_expand.size() != hidden) throw ShapeError("mlp: expand bias length");
    if (!b_reduce.empty() && b_reduce.size() != c) throw ShapeError("mlp: reduce bias length");
    if (form == Form::train && (!bn_inner || !bn_outer || !b_expand.empty() || !b_reduce.empty())) {
        throw std::invalid_argument("mlp: train form carries both BNs and no biases");
    }
    if (bn_inner) {
        bn_inner->validate();
        if (bn_inner->channels() != hidden) throw ShapeError("mlp: inner BN channel axis mismatch");
    }
    if (bn_outer) {
        bn_outer->validate();
        if (bn_outer->channels() != c) throw ShapeError("mlp: outer BN channel axis mismatch");
    }
}

MlpBlock make_mlp(std::size_t channels, std::size_t expansion) {
    MlpBlock block;
    block.w_expand = Matrix(channels, channels * expansion);
    block.w_reduce = Matrix(channels * expansion, channels);
    block.bn_inner = BnSpec::identity(channels * expansion);
    block.bn_outer = BnSpec::identity(channels);
    block.validate();
    return block;
}

Matrix mlp_forward(const MlpBlock& block, const Matrix& tokens) {
    block.validate();
    if (tokens.cols() != block.channels()) throw ShapeError("mlp: channel axis mismatch");
    Matrix h = linear(tokens, block.w_expand, block.b_expand);
    if (block.bn_inner) h = batchnorm_columns(h, *block.bn_inner);
    h = gelu(h);
    Matrix out = linear(h, block.w_reduce, block.b_reduce);
    if (block.bn_outer) out = batchnorm_columns(out, *block.bn_outer);
    return out;
}

Tensor mlp_forward(const MlpBlock& block, const Tensor& x) {
    if (x.shape().c != block.channels()) throw ShapeError("mlp: channel axis mismatch");
    Tensor out(x.shape());
    for (std::size_t n = 0; n < x.shape().n; ++n) {
        unflatten_tokens(mlp_forward(block, flatten_tokens(x, n)), out, n);
    }
    return out;
}

// --- Block -----------------------------------------------------------------

std::string_view mixer_name(const TokenMixer& mixer) {
    switch (mixer.index()) {
        case 0: return "repmix";
        case 1: return "mhsa";
        default: return "mhla";
    }
}

Tensor token_mix(const TokenMixer& mixer, const Tensor& x) {
    if (const auto* rep = std::get_if<RepMixBlock>(&mixer)) {
        // RepMix carries its own residual.
        return repmix_forward(*rep, x);
    }
    Tensor mixed(x.shape());
    for (std::size_t n = 0; n < x.shape().n; ++n) {
        const Matrix tokens = flatten_tokens(x, n);
        const Matrix y = std::holds_alternative<MhsaBlock>(mixer)
                             ? mhsa_forward(std::get<MhsaBlock>(mixer), tokens)
                             : mhla_forward(std::get<MhlaBlock>(mixer), tokens);
        unflatten_tokens(y, mixed, n);
    }
    return add(x, mixed);
}

Tensor block_forward(const Block& block, const Tensor& x) {
    const Tensor mixed = token_mix(block.mixer, x);
    return add(mixed, mlp_forward(block.mlp, mixed));
}

}  // namespace facelivt
