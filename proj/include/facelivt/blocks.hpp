#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "facelivt/tensor.hpp"

namespace facelivt {

enum class Form : std::uint8_t { train, deploy };
enum class Activation : std::uint8_t { gelu, identity };

std::string_view to_string(Form form);

/// Reparameterizable convolution mixer: x + BN(kxk(x) + pointwise(x)).
///
/// The token-mixer RepMix is depthwise. The same structure with dense
/// (groups == 1) kernels and stride 2 serves as the stage downsampler, where
/// the channel count changes and no residual exists.
///
/// A train-form block carries the 1x1 branch, the BN and (stride 1 only) the
/// residual. Reparameterization removes them; a fully fused deploy block is a
/// single convolution. Partially fused blocks (ablation toggles) keep any
/// subset and are still tagged deploy.
struct RepMixBlock {
    Form form = Form::train;
    ConvSpec kxk;
    std::optional<ConvSpec> pointwise;
    std::optional<BnSpec> bn;
    bool residual = false;

    std::size_t in_channels() const { return kxk.in_channels(); }
    std::size_t out_channels() const { return kxk.out_channels(); }
    std::size_t stride() const { return kxk.stride; }
    bool fully_fused() const { return !pointwise && !bn && !residual; }
    std::size_t parameter_count() const;

    void validate() const;
};

/// Train-form depthwise token mixer over `channels` with zeroed weights and identity BN.
RepMixBlock make_repmix(std::size_t channels, std::size_t kernel, std::size_t stride);
/// Train-form dense downsampler in -> out channels, stride 2, zeroed weights, identity BN.
RepMixBlock make_downsampler(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);

Tensor repmix_forward(const RepMixBlock& block, const Tensor& x);

/// Softmax self-attention over tokens; projections carry no bias.
struct MhsaBlock {
    Matrix wq, wk, wv, wo;  // [C, C]
    std::size_t heads = 1;

    std::size_t channels() const { return wq.rows(); }
    std::size_t head_dim() const { return channels() / heads; }
    std::size_t parameter_count() const { return wq.size() + wk.size() + wv.size() + wo.size(); }
    void validate() const;
};

MhsaBlock make_mhsa(std::size_t channels, std::size_t heads);

/// `attention`, when given, receives one [N, N] probability matrix per head.
Matrix mhsa_forward(const MhsaBlock& block, const Matrix& x,
                    std::vector<Matrix>* attention = nullptr);

/// Per-head token-dimension MLP. Weights are bound to one token count.
struct MhlaBlock {
    std::size_t heads = 1;
    std::size_t tokens = 0;
    std::size_t expansion = 1;
    std::vector<Matrix> w_in;   // heads x [N, N*r]
    std::vector<Matrix> w_out;  // heads x [N*r, N]

    std::size_t hidden() const { return tokens * expansion; }
    std::size_t parameter_count() const { return 2 * heads * tokens * hidden(); }
    void validate() const;
};

MhlaBlock make_mhla(std::size_t heads, std::size_t tokens, std::size_t expansion);

/// `activation` exists so tests can check the two-matrix pipeline with the
/// nonlinearity removed; inference always uses GELU.
Matrix mhla_forward(const MhlaBlock& block, const Matrix& x,
                    Activation activation = Activation::gelu);

/// Channel mixer: BN(gelu(BN(x We)) Wr), applied per spatial position.
/// Fusion replaces each BN with a bias on the preceding matrix.
struct MlpBlock {
    Form form = Form::train;
    Matrix w_expand;  // [C, rC]
    Matrix w_reduce;  // [rC, C]
    std::vector<float> b_expand;
    std::vector<float> b_reduce;
    std::optional<BnSpec> bn_inner;
    std::optional<BnSpec> bn_outer;

    std::size_t channels() const { return w_expand.rows(); }
    std::size_t expansion() const { return channels() == 0 ? 0 : w_expand.cols() / channels(); }
    std::size_t parameter_count() const;
    void validate() const;
};

MlpBlock make_mlp(std::size_t channels, std::size_t expansion);

Matrix mlp_forward(const MlpBlock& block, const Matrix& tokens);
Tensor mlp_forward(const MlpBlock& block, const Tensor& x);

using TokenMixer = std::variant<RepMixBlock, MhsaBlock, MhlaBlock>;

/// One MetaFormer block: token mixer followed by channel mixer, each residual.
struct Block {
    TokenMixer mixer;
    MlpBlock mlp;
};

std::string_view mixer_name(const TokenMixer& mixer);

/// Token-mixer step alone, including its residual.
Tensor token_mix(const TokenMixer& mixer, const Tensor& x);
Tensor block_forward(const Block& block, const Tensor& x);

}  // namespace facelivt
