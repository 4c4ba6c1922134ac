#include "facelivt/reparam.hpp"

#include <algorithm>

#include "facelivt/cost.hpp"
#include "facelivt/model.hpp"

namespace facelivt {

ConvSpec fuse_bn_into_conv(const ConvSpec& conv, const BnSpec& bn) {
    conv.validate();
    bn.validate();
    if (bn.channels() != conv.out_channels()) {
        throw ShapeError("fuse_bn_into_conv: BN has " + std::to_string(bn.channels()) +
                         " channels, conv has " + std::to_string(conv.out_channels()) + " outputs");
    }
    ConvSpec fused = conv;
    const std::size_t per_out = conv.weight.size() / conv.out_channels();
    for (std::size_t o = 0; o < conv.out_channels(); ++o) {
        const float scale = bn.gamma[o] / bn.sigma[o];
        float* w = fused.weight.data().data() + o * per_out;
        for (std::size_t i = 0; i < per_out; ++i) w[i] *= scale;
        fused.bias[o] = (conv.bias[o] - bn.mean[o]) * scale + bn.beta[o];
    }
    return fused;
}

ConvSpec add_identity(const ConvSpec& conv) {
    conv.validate();
    const std::size_t k = conv.kernel();
    if (conv.stride != 1) throw std::invalid_argument("add_identity: residual undefined for stride != 1");
    if (k % 2 == 0) throw std::invalid_argument("add_identity: even kernel has no centre tap");
    if (conv.padding != k / 2) throw std::invalid_argument("add_identity: padding must preserve resolution");
    const std::size_t cin_g = conv.in_channels_per_group();
    const std::size_t cout_g = conv.out_channels() / conv.groups;
    if (cin_g != cout_g) throw ShapeError("add_identity: input and output channel axes differ");

    ConvSpec out = conv;
    const std::size_t c = k / 2;
    for (std::size_t o = 0; o < conv.out_channels(); ++o) {
        out.weight.at(o, o % cin_g, c, c) += 1.0f;
    }
    return out;
}

ConvSpec merge_conv_branches(const ConvSpec& kxk, const ConvSpec& one, bool identity) {
    kxk.validate();
    one.validate();
    const std::size_t k = kxk.kernel();
    if (one.kernel() != 1) throw ShapeError("merge: second branch must be 1x1");
    if (k % 2 == 0) throw std::invalid_argument("merge: even kernel has no centre tap");
    if (one.out_channels() != kxk.out_channels() || one.in_channels_per_group() != kxk.in_channels_per_group() ||
        one.groups != kxk.groups) {
        throw ShapeError("merge: branches disagree on channel axes or groups");
    }
    if (one.stride != kxk.stride) throw std::invalid_argument("merge: branches disagree on stride");
    if (kxk.padding != k / 2 + one.padding) {
        throw std::invalid_argument("merge: padding does not align the 1x1 tap with the kernel centre");
    }

    ConvSpec merged = kxk;
    const std::size_t c = k / 2;
    const Shape& s = one.weight.shape();
    for (std::size_t o = 0; o < s.n; ++o) {
        for (std::size_t i = 0; i < s.c; ++i) merged.weight.at(o, i, c, c) += one.weight.at(o, i, 0, 0);
        merged.bias[o] += one.bias[o];
    }
    return identity ? add_identity(merged) : merged;
}

ConvSpec merge_dw_branches(const ConvSpec& kxk, const ConvSpec& one, bool identity) {
    if (!kxk.depthwise() || !one.depthwise()) throw std::invalid_argument("merge_dw_branches: branches must be depthwise");
    return merge_conv_branches(kxk, one, identity);
}

RepMixBlock reparameterize_repmix(const RepMixBlock& block, const ReparamOptions& options) {
    block.validate();
    if (block.form != Form::train) throw std::invalid_argument("reparameterize_repmix: block is already in deploy form");

    RepMixBlock out = block;
    out.form = Form::deploy;
    if (options.fuse_bn) {
        // BN scales the branch sum, so the scale reaches both branches while the
        // shift is applied once, on the kxk branch.
        out.kxk = fuse_bn_into_conv(block.kxk, *block.bn);
        BnSpec scale_only = *block.bn;
        std::fill(scale_only.mean.begin(), scale_only.mean.end(), 0.0f);
        std::fill(scale_only.beta.begin(), scale_only.beta.end(), 0.0f);
        out.pointwise = fuse_bn_into_conv(*block.pointwise, scale_only);
        out.bn.reset();
    }
    if (options.merge_pointwise) {
        out.kxk = merge_conv_branches(out.kxk, *out.pointwise, false);
        out.pointwise.reset();
    }
    // With BN still in place the residual sits outside it and cannot be absorbed.
    if (options.fold_residual && out.residual && !out.bn) {
        out.kxk = add_identity(out.kxk);
        out.residual = false;
    }
    out.validate();
    return out;
}

MlpBlock fuse_mlp_bn(const MlpBlock& block) {
    block.validate();
    if (block.form != Form::train) throw std::invalid_argument("fuse_mlp_bn: block is already in deploy form");

    auto fold = [](Matrix& w, std::vector<float>& bias, const BnSpec& bn) {
        const std::size_t cols = w.cols();
        std::vector<float> base = bias.empty() ? std::vector<float>(cols, 0.0f) : bias;
        bias.assign(cols, 0.0f);
        for (std::size_t j = 0; j < cols; ++j) {
            const float scale = bn.gamma[j] / bn.sigma[j];
            for (std::size_t r = 0; r < w.rows(); ++r) w(r, j) *= scale;
            bias[j] = (base[j] - bn.mean[j]) * scale + bn.beta[j];
        }
    };

    MlpBlock out = block;
    out.form = Form::deploy;
    fold(out.w_expand, out.b_expand, *block.bn_inner);
    fold(out.w_reduce, out.b_reduce, *block.bn_outer);
    out.bn_inner.reset();
    out.bn_outer.reset();
    out.validate();
    return out;
}

ProbeComparison compare_models(const Model& a, const Model& b, const ProbeOptions& probes) {
    if (!(a.config == b.config)) throw std::invalid_argument("compare_models: configurations differ");
    ProbeComparison result;
    for (std::size_t i = 0; i < probes.probes; ++i) {
        const Tensor image = probe_image(a.config, probes.seed, i);
        const std::vector<float> ea = forward(a, image);
        const std::vector<float> eb = forward(b, image);
        result.max_abs_error = std::max(result.max_abs_error, max_abs_diff(ea, eb));
        result.min_cosine = std::min(result.min_cosine, cosine_similarity(ea, eb));
    }
    return result;
}

std::pair<Model, FusionReport> reparameterize_model(const Model& model, const ReparamOptions& options,
                                                    const ProbeOptions& probes) {
    model.validate();
    if (model.form != Form::train) throw std::invalid_argument("reparameterize_model: model is already in deploy form");

    Model fused = model;
    fused.form = Form::deploy;
    FusionReport report;

    if (options.fuse_bn) {
        for (auto& stem : fused.stem) {
            stem.conv = fuse_bn_into_conv(stem.conv, *stem.bn);
            stem.bn.reset();
            ++report.blocks_fused;
        }
    }
    auto touch = [&report](auto& block, auto&& fn) {
        auto next = fn(block);
        if (next.parameter_count() != block.parameter_count() || !(next.kxk == block.kxk)) ++report.blocks_fused;
        block = std::move(next);
    };
    for (auto& down : fused.downsamplers) {
        touch(down, [&](const RepMixBlock& b) { return reparameterize_repmix(b, options); });
    }
    for (auto& stage : fused.stages) {
        for (auto& block : stage) {
            if (auto* rep = std::get_if<RepMixBlock>(&block.mixer)) {
                touch(*rep, [&](const RepMixBlock& b) { return reparameterize_repmix(b, options); });
            }
            if (options.fuse_bn) {
                block.mlp = fuse_mlp_bn(block.mlp);
                ++report.blocks_fused;
            } else {
                block.mlp.form = Form::deploy;
            }
        }
    }
    fused.validate();

    report.params_before = count_params(model);
    report.params_after = count_params(fused);
    report.probe_count = probes.probes;
    if (probes.probes > 0) {
        const ProbeComparison cmp = compare_models(model, fused, probes);
        report.max_abs_error = cmp.max_abs_error;
        report.min_cosine = cmp.min_cosine;
    }
    return {std::move(fused), report};
}

}  // namespace facelivt
