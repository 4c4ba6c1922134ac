#include "facelivt/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

namespace facelivt {

std::string_view to_string(MixerKind kind) {
    switch (kind) {
        case MixerKind::repmix: return "repmix";
        case MixerKind::mhsa: return "mhsa";
        case MixerKind::mhla: return "mhla";
    }
    return "unknown";
}

MixerKind parse_mixer_kind(std::string_view text) {
    if (text == "repmix") return MixerKind::repmix;
    if (text == "mhsa") return MixerKind::mhsa;
    if (text == "mhla") return MixerKind::mhla;
    throw std::invalid_argument("unknown mixer kind '" + std::string(text) + "'");
}

std::size_t stem_output_extent(const ModelConfig& config) {
    const std::size_t pad = config.kernel_size / 2;
    const std::size_t once = conv_output_extent(config.input_size, config.kernel_size, 2, pad);
    return conv_output_extent(once, config.kernel_size, 2, pad);
}

std::size_t downsample_extent(const ModelConfig& config, std::size_t input) {
    return conv_output_extent(input, config.kernel_size, 2, config.kernel_size / 2);
}

void ModelConfig::validate() const {
    if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("config: kernel_size must be odd");
    if (embed_dim == 0 || mlp_expansion == 0 || heads == 0) {
        throw std::invalid_argument("config: embed_dim, mlp_expansion and heads must be positive");
    }
    if (stem_dim != stage_dims[0]) {
        throw std::invalid_argument("config: stem_dim must equal the stage-1 width");
    }
    if (stem_output_extent(*this) != stage_resolutions[0]) {
        throw std::invalid_argument("config: stem output " + std::to_string(stem_output_extent(*this)) +
                                    " does not match stage-1 resolution " +
                                    std::to_string(stage_resolutions[0]));
    }
    for (std::size_t s = 0; s < kStageCount; ++s) {
        if (stage_dims[s] == 0 || stage_blocks[s] == 0) {
            throw std::invalid_argument("config: stage " + std::to_string(s + 1) + " has zero width or depth");
        }
        if (s > 0 && downsample_extent(*this, stage_resolutions[s - 1]) != stage_resolutions[s]) {
            throw std::invalid_argument("config: stage " + std::to_string(s + 1) +
                                        " resolution inconsistent with stride-2 downsampling");
        }
        if (stage_mixers[s] != MixerKind::repmix && stage_dims[s] % heads != 0) {
            throw std::invalid_argument("config: stage " + std::to_string(s + 1) +
                                        " width not divisible by heads");
        }
        if (stage_mixers[s] == MixerKind::mhla && mhla_expansion == 0) {
            throw std::invalid_argument("config: mhla_expansion must be positive");
        }
    }
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"s", "m", "s-li", "m-li"};
    return names;
}

ModelConfig preset(std::string_view variant) {
    std::string key(variant);
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return char(std::tolower(c)); });

    ModelConfig config;
    config.variant = key;
    config.stage_blocks = {2, 4, 6, 2};
    if (key == "s" || key == "s-li") {
        config.stage_dims = {40, 80, 160, 320};
    } else if (key == "m" || key == "m-li") {
        config.stage_dims = {64, 128, 256, 512};
    } else {
        throw std::invalid_argument("unknown variant '" + std::string(variant) + "' (expected s, m, s-li or m-li)");
    }
    const MixerKind late = key.ends_with("-li") ? MixerKind::mhla : MixerKind::mhsa;
    config.stage_mixers = {MixerKind::repmix, MixerKind::repmix, late, late};
    config.stem_dim = config.stage_dims[0];
    config.validate();
    return config;
}

// --- Model validation --------------------------------------------------------

void Model::validate() const {
    config.validate();
    const std::size_t c1 = config.stage_dims[0];
    const std::size_t k = config.kernel_size;

    for (std::size_t i = 0; i < stem.size(); ++i) {
        const ConvSpec& conv = stem[i].conv;
        conv.validate();
        const std::size_t in = i == 0 ? 3 : c1;
        if (conv.in_channels() != in || conv.out_channels() != c1 || conv.groups != 1 || conv.stride != 2 ||
            conv.kernel() != k) {
            throw ShapeError("model: stem layer " + std::to_string(i) + " has the wrong shape");
        }
        if (form == Form::train && !stem[i].bn) throw std::invalid_argument("model: train-form stem requires BN");
        if (stem[i].bn && stem[i].bn->channels() != c1) throw ShapeError("model: stem BN channel axis mismatch");
    }
    for (std::size_t s = 0; s + 1 < kStageCount; ++s) {
        const RepMixBlock& down = downsamplers[s];
        down.validate();
        if (down.in_channels() != config.stage_dims[s] || down.out_channels() != config.stage_dims[s + 1] ||
            down.stride() != 2 || down.residual) {
            throw ShapeError("model: downsampler " + std::to_string(s) + " has the wrong shape");
        }
        if (down.form != form) throw std::invalid_argument("model: downsampler form differs from model form");
    }
    for (std::size_t s = 0; s < kStageCount; ++s) {
        const std::size_t c = config.stage_dims[s];
        const std::size_t tokens = config.stage_resolutions[s] * config.stage_resolutions[s];
        if (stages[s].size() != config.stage_blocks[s]) throw ShapeError("model: stage depth mismatch");
        for (const Block& block : stages[s]) {
            block.mlp.validate();
            if (block.mlp.channels() != c || block.mlp.expansion() != config.mlp_expansion) {
                throw ShapeError("model: stage " + std::to_string(s + 1) + " MLP has the wrong shape");
            }
            if (block.mlp.form != form) throw std::invalid_argument("model: MLP form differs from model form");
            switch (config.stage_mixers[s]) {
                case MixerKind::repmix: {
                    const auto* rep = std::get_if<RepMixBlock>(&block.mixer);
                    if (rep == nullptr) throw std::invalid_argument("model: expected a RepMix mixer");
                    rep->validate();
                    if (rep->in_channels() != c || !rep->kxk.depthwise() || rep->stride() != 1) {
                        throw ShapeError("model: RepMix mixer has the wrong shape");
                    }
                    if (rep->form != form) throw std::invalid_argument("model: mixer form differs from model form");
                    break;
                }
                case MixerKind::mhsa: {
                    const auto* att = std::get_if<MhsaBlock>(&block.mixer);
                    if (att == nullptr) throw std::invalid_argument("model: expected an MHSA mixer");
                    att->validate();
                    if (att->channels() != c || att->heads != config.heads) throw ShapeError("model: MHSA shape");
                    break;
                }
                case MixerKind::mhla: {
                    const auto* lin = std::get_if<MhlaBlock>(&block.mixer);
                    if (lin == nullptr) throw std::invalid_argument("model: expected an MHLA mixer");
                    lin->validate();
                    if (lin->tokens != tokens || lin->heads != config.heads ||
                        lin->expansion != config.mhla_expansion) {
                        throw ShapeError("model: MHLA block bound to the wrong token count or heads");
                    }
                    break;
                }
            }
        }
    }
    const std::size_t c4 = config.stage_dims[kStageCount - 1];
    if (head_weight.rows() != c4 || head_weight.cols() != config.embed_dim || head_bias.size() != config.embed_dim) {
        throw ShapeError("model: head must be [C4, embed] with embed biases");
    }
}

// --- Construction -----------------------------------------------------------

namespace {

class WeightSource {
public:
    WeightSource(std::uint64_t seed, InitScheme scheme) : engine_(seed), scheme_(scheme) {}

    bool random() const { return scheme_ == InitScheme::random; }

    // 53-bit mantissa draw; the mapping is fixed so archives stay reproducible
    // across standard-library implementations.
    double unit() { return double(engine_() >> 11) * 0x1.0p-53; }
    float uniform(double lo, double hi) { return static_cast<float>(lo + (hi - lo) * unit()); }

    void fill(std::span<float> values, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(double(fan_in));
        for (float& v : values) v = uniform(-bound, bound);
    }

    void init_conv(ConvSpec& conv, bool zero) {
        const std::size_t fan_in = conv.in_channels_per_group() * conv.kernel() * conv.kernel();
        if (zero) return;
        fill(conv.weight.data(), fan_in);
        if (random()) fill(conv.bias, fan_in);
    }

    void init_bn(BnSpec& bn) {
        if (!random()) return;
        for (std::size_t c = 0; c < bn.channels(); ++c) {
            bn.gamma[c] = uniform(0.5, 1.5);
            bn.beta[c] = uniform(-0.1, 0.1);
            bn.mean[c] = uniform(-0.1, 0.1);
            bn.sigma[c] = uniform(0.5, 1.5);
        }
    }

    void init_matrix(Matrix& m, bool zero) {
        if (!zero) fill(m.data(), m.rows());
    }

private:
    std::mt19937_64 engine_;
    InitScheme scheme_;
};

RepMixBlock init_rep(RepMixBlock block, WeightSource& src, bool zero_branches) {
    src.init_conv(block.kxk, zero_branches);
    src.init_conv(*block.pointwise, zero_branches || !src.random());
    src.init_bn(*block.bn);
    return block;
}

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed, InitScheme scheme) {
    config.validate();
    WeightSource src(seed, scheme);
    const bool identity = scheme == InitScheme::identity_mixers;
    const std::size_t k = config.kernel_size;
    const std::size_t c1 = config.stage_dims[0];

    Model model;
    model.config = config;
    model.form = Form::train;
    for (std::size_t i = 0; i < model.stem.size(); ++i) {
        StemLayer& layer = model.stem[i];
        layer.conv = make_conv(i == 0 ? 3 : c1, c1, k, 2, k / 2, 1);
        src.init_conv(layer.conv, false);
        layer.bn = BnSpec::identity(c1);
        src.init_bn(*layer.bn);
    }
    for (std::size_t s = 0; s < kStageCount; ++s) {
        const std::size_t c = config.stage_dims[s];
        const std::size_t tokens = config.stage_resolutions[s] * config.stage_resolutions[s];
        if (s > 0) {
            model.downsamplers[s - 1] = init_rep(make_downsampler(config.stage_dims[s - 1], c, k), src, false);
        }
        for (std::size_t b = 0; b < config.stage_blocks[s]; ++b) {
            Block block;
            switch (config.stage_mixers[s]) {
                case MixerKind::repmix:
                    block.mixer = init_rep(make_repmix(c, k, 1), src, identity);
                    break;
                case MixerKind::mhsa: {
                    MhsaBlock att = make_mhsa(c, config.heads);
                    for (Matrix* m : {&att.wq, &att.wk, &att.wv, &att.wo}) src.init_matrix(*m, identity);
                    block.mixer = std::move(att);
                    break;
                }
                case MixerKind::mhla: {
                    MhlaBlock lin = make_mhla(config.heads, tokens, config.mhla_expansion);
                    for (std::size_t h = 0; h < lin.heads; ++h) {
                        src.init_matrix(lin.w_in[h], identity);
                        src.init_matrix(lin.w_out[h], identity);
                    }
                    block.mixer = std::move(lin);
                    break;
                }
            }
            block.mlp = make_mlp(c, config.mlp_expansion);
            src.init_matrix(block.mlp.w_expand, false);
            src.init_matrix(block.mlp.w_reduce, false);
            src.init_bn(*block.mlp.bn_inner);
            src.init_bn(*block.mlp.bn_outer);
            model.stages[s].push_back(std::move(block));
        }
    }
    const std::size_t c4 = config.stage_dims[kStageCount - 1];
    model.head_weight = Matrix(c4, config.embed_dim);
    src.init_matrix(model.head_weight, false);
    model.head_bias.assign(config.embed_dim, 0.0f);
    if (src.random()) src.fill(model.head_bias, c4);
    model.validate();
    return model;
}

// --- Inference --------------------------------------------------------------

std::vector<float> forward(const Model& model, const Tensor& image, ForwardTrace* trace) {
    const Shape& s = image.shape();
    const std::size_t size = model.config.input_size;
    if (s.n != 1) throw ShapeError("forward: batch axis must be 1, got " + std::to_string(s.n));
    if (s.c != 3) throw ShapeError("forward: channel axis must be 3, got " + std::to_string(s.c));
    if (s.h != size) throw ShapeError("forward: height axis must be " + std::to_string(size));
    if (s.w != size) throw ShapeError("forward: width axis must be " + std::to_string(size));
    require_finite(image.data(), "forward");

    Tensor x = image;
    for (const StemLayer& layer : model.stem) {
        x = conv2d(x, layer.conv);
        if (layer.bn) x = batchnorm(x, *layer.bn);
        x = gelu(x);
    }
    if (trace != nullptr) trace->stem = x.shape();

    for (std::size_t stage = 0; stage < kStageCount; ++stage) {
        if (stage > 0) x = repmix_forward(model.downsamplers[stage - 1], x);
        for (const Block& block : model.stages[stage]) x = block_forward(block, x);
        if (trace != nullptr) trace->stages[stage] = x.shape();
    }

    const Matrix pooled = avgpool_global(x);
    const Matrix embedding = linear(pooled, model.head_weight, model.head_bias);
    return embedding.values();
}

Tensor probe_image(const ModelConfig& config, std::uint64_t seed, std::size_t index) {
    std::mt19937_64 engine(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    Tensor image({1, 3, config.input_size, config.input_size});
    for (float& v : image.data()) v = static_cast<float>(-1.0 + 2.0 * (double(engine() >> 11) * 0x1.0p-53));
    return image;
}

}  // namespace facelivt
