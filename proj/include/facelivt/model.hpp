#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "facelivt/blocks.hpp"

namespace facelivt {

enum class MixerKind : std::uint8_t { repmix, mhsa, mhla };

std::string_view to_string(MixerKind kind);
MixerKind parse_mixer_kind(std::string_view text);

inline constexpr std::size_t kStageCount = 4;

/// Variant description: widths, depths, mixer per stage and the hyper-parameters
/// the architecture table leaves implicit.
struct ModelConfig {
    std::string variant = "custom";
    std::array<std::size_t, kStageCount> stage_dims{};
    std::array<std::size_t, kStageCount> stage_blocks{};
    std::array<MixerKind, kStageCount> stage_mixers{};
    std::array<std::size_t, kStageCount> stage_resolutions{28, 14, 7, 4};
    std::size_t stem_dim = 0;
    std::size_t heads = 16;
    std::size_t mhla_expansion = 4;
    std::size_t mlp_expansion = 3;
    std::size_t embed_dim = 512;
    std::size_t kernel_size = 3;
    std::size_t input_size = 112;

    /// Throws std::invalid_argument on inconsistent resolutions or channel counts.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Names accepted by preset(): "s", "m", "s-li", "m-li".
const std::vector<std::string>& preset_names();
/// Throws std::invalid_argument for unknown names.
ModelConfig preset(std::string_view variant);

/// Spatial extent after the two stride-2 stem convolutions.
std::size_t stem_output_extent(const ModelConfig& config);
/// Spatial extent produced by a stride-2 downsampler from `input`.
std::size_t downsample_extent(const ModelConfig& config, std::size_t input);

struct StemLayer {
    ConvSpec conv;
    std::optional<BnSpec> bn;  // absent once fused

    std::size_t parameter_count() const { return conv.parameter_count() + (bn ? bn->parameter_count() : 0); }
};

/// Stem, four stages separated by three downsamplers, pooled linear head.
struct Model {
    ModelConfig config;
    Form form = Form::train;
    std::array<StemLayer, 2> stem;
    std::array<RepMixBlock, kStageCount - 1> downsamplers;
    std::array<std::vector<Block>, kStageCount> stages;
    Matrix head_weight;  // [C4, embed]
    std::vector<float> head_bias;

    /// Structural check against `config`: shapes, token counts, mixer kinds.
    void validate() const;
};

enum class InitScheme : std::uint8_t {
    /// Uniform weights scaled by 1/sqrt(fan_in), randomized BN statistics.
    random,
    /// Random stem, downsampler and head weights; every RepMix branch is zero,
    /// every BN is the identity and attention weights are zero, so each token
    /// mixer is an exact passthrough.
    identity_mixers,
};

Model build_model(const ModelConfig& config, std::uint64_t seed, InitScheme scheme = InitScheme::random);

/// Shapes observed along the pipeline, for shape assertions.
struct ForwardTrace {
    Shape stem;
    std::array<Shape, kStageCount> stages{};
};

/// Maps a [1, 3, S, S] image to an unnormalized embedding.
std::vector<float> forward(const Model& model, const Tensor& image, ForwardTrace* trace = nullptr);

/// Deterministic uniform [-1, 1] probe image.
Tensor probe_image(const ModelConfig& config, std::uint64_t seed, std::size_t index);

}  // namespace facelivt
