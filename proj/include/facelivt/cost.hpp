#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "facelivt/model.hpp"

namespace facelivt {

// Operation counts are multiply-accumulates: one MAC counts as one FLOP,
// matching the reference cost figures. Elementwise
// activations, softmax, pooling and residual additions are not counted. A BN
// that has not been folded costs one MAC per element.

struct CostEntry {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;

    CostEntry& operator+=(const CostEntry& other) {
        params += other.params;
        flops += other.flops;
        return *this;
    }
    bool operator==(const CostEntry&) const = default;
};

struct CostReport {
    std::uint64_t total_params = 0;
    std::uint64_t total_flops = 0;
    /// "stem", "stage1".."stage4" (each including its downsampler), "head".
    std::vector<std::pair<std::string, CostEntry>> per_stage;
    /// "stem", "downsample", "repmix", "mhsa", "mhla", "mlp", "head".
    std::map<std::string, CostEntry> per_block_kind;

    bool operator==(const CostReport&) const = default;
};

/// Walks the instantiated model; honours partial fusion.
CostReport count_cost(const Model& model);
/// Closed-form count for a fully train-form or fully fused model.
CostReport count_cost(const ModelConfig& config, Form form);

std::uint64_t count_params(const Model& model);
std::uint64_t count_flops(const Model& model);

/// 2 * N * (N * r) * C: the token-mixing MACs of one MHLA block.
std::uint64_t mhla_complexity(std::uint64_t tokens, std::uint64_t channels, std::uint64_t expansion);
/// 4 * N * C^2 + 2 * N^2 * C: projections plus attention MACs of one MHSA block.
std::uint64_t mhsa_complexity(std::uint64_t tokens, std::uint64_t channels);

/// Runs one forward pass with the MAC hook installed and returns the executed count.
std::uint64_t instrumented_flop_count(const Model& model, const Tensor& image);

/// Reference parameter (millions) and operation (millions) counts for the
/// fused network, when `config` is one of the tabulated variants.
struct ReferenceCost {
    double params_m = 0.0;
    double flops_m = 0.0;
    std::string label;
};
std::optional<ReferenceCost> reference_cost(const ModelConfig& config);

}  // namespace facelivt
