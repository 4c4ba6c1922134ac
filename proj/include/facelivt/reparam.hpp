#pragma once

#include <cstdint>
#include <utility>

#include "facelivt/blocks.hpp"

namespace facelivt {

struct Model;

/// Folds an inference BN into the preceding convolution:
/// W' = W * gamma / sigma, b' = (b - mean) * gamma / sigma + beta.
ConvSpec fuse_bn_into_conv(const ConvSpec& conv, const BnSpec& bn);

/// Adds `identity` into the centre tap of every output channel so that the
/// convolution also reproduces its input. Requires stride 1, odd kernel and
/// equal channels per group on both sides.
ConvSpec add_identity(const ConvSpec& conv);

/// Adds a 1x1 branch into the centre tap of a kxk kernel (any group count)
/// and, optionally, the identity. Biases sum.
ConvSpec merge_conv_branches(const ConvSpec& kxk, const ConvSpec& one, bool add_identity);

/// Depthwise-only form of merge_conv_branches.
ConvSpec merge_dw_branches(const ConvSpec& kxk, const ConvSpec& one, bool add_identity);

/// Each flag enables one fusion step; disabling all of them leaves every
/// block structurally unchanged.
struct ReparamOptions {
    bool fuse_bn = true;
    bool fold_residual = true;
    bool merge_pointwise = true;
};

RepMixBlock reparameterize_repmix(const RepMixBlock& block, const ReparamOptions& options = {});
MlpBlock fuse_mlp_bn(const MlpBlock& block);

struct FusionReport {
    double max_abs_error = 0.0;
    double min_cosine = 1.0;
    std::size_t probe_count = 0;
    std::size_t blocks_fused = 0;
    std::uint64_t params_before = 0;
    std::uint64_t params_after = 0;
};

struct ProbeOptions {
    std::size_t probes = 5;
    std::uint64_t seed = 0x5eed;
};

/// Fuses every RepMix, downsampler, stem and MLP block; attention mixers are
/// left untouched. The report compares train and deploy embeddings on
/// uniform [-1, 1] probe images.
std::pair<Model, FusionReport> reparameterize_model(const Model& model,
                                                    const ReparamOptions& options = {},
                                                    const ProbeOptions& probes = {});

/// Max-abs deviation and minimum cosine between two models' embeddings over
/// `probes` probe images.
struct ProbeComparison {
    double max_abs_error = 0.0;
    double min_cosine = 1.0;
};
ProbeComparison compare_models(const Model& a, const Model& b, const ProbeOptions& probes);

}  // namespace facelivt
