#include "facelivt/cost.hpp"

namespace facelivt {

namespace {

std::uint64_t conv_macs(const ConvSpec& conv, std::size_t out_extent) {
    const std::uint64_t k = conv.kernel();
    return std::uint64_t(conv.out_channels()) * conv.in_channels_per_group() * k * k * out_extent * out_extent;
}

CostEntry rep_cost(const RepMixBlock& block, std::size_t out_extent) {
    CostEntry e;
    e.params = block.parameter_count();
    e.flops = conv_macs(block.kxk, out_extent);
    if (block.pointwise) e.flops += conv_macs(*block.pointwise, out_extent);
    if (block.bn) e.flops += std::uint64_t(block.out_channels()) * out_extent * out_extent;
    return e;
}

CostEntry mlp_cost(const MlpBlock& block, std::uint64_t tokens) {
    const std::uint64_t c = block.channels();
    const std::uint64_t hidden = block.w_expand.cols();
    CostEntry e;
    e.params = block.parameter_count();
    e.flops = 2 * tokens * c * hidden;
    if (block.bn_inner) e.flops += tokens * hidden;
    if (block.bn_outer) e.flops += tokens * c;
    return e;
}

struct Tally {
    CostReport report;
    CostEntry* stage = nullptr;

    void open(std::string name) {
        report.per_stage.emplace_back(std::move(name), CostEntry{});
        stage = &report.per_stage.back().second;
    }
    void add(const std::string& kind, CostEntry e) {
        *stage += e;
        report.per_block_kind[kind] += e;
        report.total_params += e.params;
        report.total_flops += e.flops;
    }
};

}  // namespace

CostReport count_cost(const Model& model) {
    const ModelConfig& config = model.config;
    Tally tally;
    tally.open("stem");
    std::size_t extent = config.input_size;
    for (const StemLayer& layer : model.stem) {
        extent = conv_output_extent(extent, layer.conv.kernel(), layer.conv.stride, layer.conv.padding);
        CostEntry e{layer.parameter_count(), conv_macs(layer.conv, extent)};
        if (layer.bn) e.flops += std::uint64_t(layer.conv.out_channels()) * extent * extent;
        tally.add("stem", e);
    }
    for (std::size_t s = 0; s < kStageCount; ++s) {
        tally.open("stage" + std::to_string(s + 1));
        if (s > 0) {
            const RepMixBlock& down = model.downsamplers[s - 1];
            extent = conv_output_extent(extent, down.kxk.kernel(), down.stride(), down.kxk.padding);
            tally.add("downsample", rep_cost(down, extent));
        }
        const std::uint64_t tokens = std::uint64_t(extent) * extent;
        const std::uint64_t c = config.stage_dims[s];
        for (const Block& block : model.stages[s]) {
            if (const auto* rep = std::get_if<RepMixBlock>(&block.mixer)) {
                tally.add("repmix", rep_cost(*rep, extent));
            } else if (const auto* att = std::get_if<MhsaBlock>(&block.mixer)) {
                tally.add("mhsa", {att->parameter_count(), mhsa_complexity(tokens, c)});
            } else {
                const auto& lin = std::get<MhlaBlock>(block.mixer);
                tally.add("mhla", {lin.parameter_count(), mhla_complexity(lin.tokens, c, lin.expansion)});
            }
            tally.add("mlp", mlp_cost(block.mlp, tokens));
        }
    }
    tally.open("head");
    tally.add("head", {model.head_weight.size() + model.head_bias.size(),
                       std::uint64_t(model.head_weight.rows()) * model.head_weight.cols()});
    return tally.report;
}

CostReport count_cost(const ModelConfig& config, Form form) {
    config.validate();
    const bool train = form == Form::train;
    const std::uint64_t k2 = config.kernel_size * config.kernel_size;
    const std::uint64_t r = config.mlp_expansion;
    const std::uint64_t c1 = config.stage_dims[0];
    // Per-channel scalars a train-form BN adds: gamma, beta, mean, sigma.
    const std::uint64_t bn = train ? 4 : 0;

    Tally tally;
    tally.open("stem");
    const std::uint64_t half = conv_output_extent(config.input_size, config.kernel_size, 2, config.kernel_size / 2);
    const std::uint64_t quarter = config.stage_resolutions[0];
    tally.add("stem", {3 * c1 * k2 + c1 + bn * c1, 3 * c1 * k2 * half * half + (train ? c1 * half * half : 0)});
    tally.add("stem", {c1 * c1 * k2 + c1 + bn * c1,
                       c1 * c1 * k2 * quarter * quarter + (train ? c1 * quarter * quarter : 0)});

    for (std::size_t s = 0; s < kStageCount; ++s) {
        tally.open("stage" + std::to_string(s + 1));
        const std::uint64_t c = config.stage_dims[s];
        const std::uint64_t res = config.stage_resolutions[s];
        const std::uint64_t n = res * res;
        if (s > 0) {
            const std::uint64_t cp = config.stage_dims[s - 1];
            CostEntry e{cp * c * k2 + c, cp * c * k2 * n};
            if (train) {
                e.params += cp * c + c + bn * c;
                e.flops += cp * c * n + c * n;
            }
            tally.add("downsample", e);
        }
        for (std::size_t b = 0; b < config.stage_blocks[s]; ++b) {
            switch (config.stage_mixers[s]) {
                case MixerKind::repmix: {
                    CostEntry e{c * k2 + c, c * k2 * n};
                    if (train) {
                        e.params += 2 * c + bn * c;
                        e.flops += c * n + c * n;
                    }
                    tally.add("repmix", e);
                    break;
                }
                case MixerKind::mhsa:
                    tally.add("mhsa", {4 * c * c, mhsa_complexity(n, c)});
                    break;
                case MixerKind::mhla:
                    tally.add("mhla", {2 * config.heads * n * n * config.mhla_expansion,
                                       mhla_complexity(n, c, config.mhla_expansion)});
                    break;
            }
            CostEntry mlp{2 * r * c * c, 2 * r * c * c * n};
            if (train) {
                mlp.params += bn * (r * c + c);
                mlp.flops += r * c * n + c * n;
            } else {
                mlp.params += r * c + c;
            }
            tally.add("mlp", mlp);
        }
    }
    tally.open("head");
    const std::uint64_t c4 = config.stage_dims[kStageCount - 1];
    tally.add("head", {c4 * config.embed_dim + config.embed_dim, c4 * config.embed_dim});
    return tally.report;
}

std::uint64_t count_params(const Model& model) { return count_cost(model).total_params; }
std::uint64_t count_flops(const Model& model) { return count_cost(model).total_flops; }

std::uint64_t mhla_complexity(std::uint64_t tokens, std::uint64_t channels, std::uint64_t expansion) {
    return 2 * tokens * (tokens * expansion) * channels;
}

std::uint64_t mhsa_complexity(std::uint64_t tokens, std::uint64_t channels) {
    return 4 * tokens * channels * channels + 2 * tokens * tokens * channels;
}

std::uint64_t instrumented_flop_count(const Model& model, const Tensor& image) {
    std::uint64_t macs = 0;
    {
        MacCountScope scope(macs);
        (void)forward(model, image);
    }
    return macs;
}

std::optional<ReferenceCost> reference_cost(const ModelConfig& config) {
    ModelConfig reference;
    try {
        reference = preset(config.variant);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
    reference.heads = config.heads;
    if (!(reference == config)) return std::nullopt;

    const bool linear = config.stage_mixers[2] == MixerKind::mhla;
    const bool small = config.stage_dims[0] == 40;
    if (linear && small && config.heads == 8) return ReferenceCost{4.09, 157, "s-li heads 8"};
    if (config.heads != 16) return std::nullopt;
    if (linear) {
        return small ? ReferenceCost{5.05, 160, "s-li"} : ReferenceCost{9.75, 386, "m-li"};
    }
    return small ? ReferenceCost{5.89, 237, "s"} : ReferenceCost{14.3, 569, "m"};
}

}  // namespace facelivt
