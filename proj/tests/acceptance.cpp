// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "facelivt/archive.hpp"
#include "facelivt/bench.hpp"
#include "facelivt/cost.hpp"
#include "facelivt/reparam.hpp"

using namespace facelivt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

double deviation_pct(double measured, double reference) { return (measured / reference - 1.0) * 100.0; }

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Matrix m(rows, cols);
    for (float& v : m.data()) v = dist(rng);
    return m;
}

// 1. Train and deploy forms agree on every variant and seed.
bool equivalence() {
    const auto start = Clock::now();
    bool ok = true;
    double worst_err = 0.0, worst_cos = 1.0;
    for (const std::string& name : preset_names()) {
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            const Model train = build_model(preset(name), seed);
            const Model deploy = reparameterize_model(train, {}, {.probes = 0, .seed = 0}).first;
            const ProbeComparison cmp = compare_models(train, deploy, {.probes = 5, .seed = 1000 + seed});
            std::printf("  %-5s seed %llu  max abs %.3e  min cosine %.9f\n", name.c_str(),
                        static_cast<unsigned long long>(seed), cmp.max_abs_error, cmp.min_cosine);
            worst_err = std::max(worst_err, cmp.max_abs_error);
            worst_cos = std::min(worst_cos, cmp.min_cosine);
            ok = ok && cmp.max_abs_error < 1e-4 && cmp.min_cosine >= 0.9999;
        }
    }
    const double elapsed = seconds_since(start);
    ok = ok && elapsed < 120.0;
    std::printf("%s criterion 1: train/deploy equivalence, 4 variants x 3 seeds x 5 probes "
                "(worst max abs %.3e, worst cosine %.9f, %.1f s)\n",
                ok ? "PASS" : "FAIL", worst_err, worst_cos, elapsed);
    return ok;
}

// 2. Merged kernels equal the element-wise branch sum exactly.
bool kernel_exactness() {
    std::mt19937 rng(2024);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::size_t compared = 0, mismatched = 0;
    for (std::size_t channels : {std::size_t{40}, std::size_t{80}, std::size_t{128}})
        for (std::size_t k : {std::size_t{3}, std::size_t{5}})
            for (bool identity : {false, true}) {
                ConvSpec kxk = make_conv(channels, channels, k, 1, k / 2, channels);
                ConvSpec one = make_conv(channels, channels, 1, 1, 0, channels);
                for (float& v : kxk.weight.data()) v = dist(rng);
                for (float& v : one.weight.data()) v = dist(rng);
                const ConvSpec merged = merge_dw_branches(kxk, one, identity);
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t y = 0; y < k; ++y)
                        for (std::size_t x = 0; x < k; ++x) {
                            float expected = kxk.weight.at(c, 0, y, x);
                            if (y == k / 2 && x == k / 2) {
                                expected += one.weight.at(c, 0, 0, 0);
                                if (identity) expected += 1.0f;
                            }
                            ++compared;
                            if (merged.weight.at(c, 0, y, x) != expected) ++mismatched;
                        }
            }
    const bool ok = mismatched == 0 && compared > 0;
    std::printf("%s criterion 2: merged kernel == kxk + centred 1x1 + identity, element-wise exact "
                "(%zu taps, %zu mismatched)\n",
                ok ? "PASS" : "FAIL", compared, mismatched);
    return ok;
}

// 3. Token-MLP block counts equal 2 N (N r) C; instrumented counts agree.
bool complexity() {
    bool ok = true;
    std::mt19937 rng(7);
    for (const std::string& name : {std::string("s-li"), std::string("m-li")})
        for (std::size_t heads : {std::size_t{16}, std::size_t{8}}) {
            ModelConfig config = preset(name);
            config.heads = heads;
            const CostReport report = count_cost(config, Form::deploy);
            std::uint64_t expected_kind = 0;
            for (std::size_t s = 2; s < kStageCount; ++s) {
                const std::size_t n = config.stage_resolutions[s] * config.stage_resolutions[s];
                const std::size_t c = config.stage_dims[s];
                const std::uint64_t analytic = mhla_complexity(n, c, config.mhla_expansion);
                expected_kind += analytic * config.stage_blocks[s];

                MhlaBlock block = make_mhla(heads, n, config.mhla_expansion);
                for (std::size_t h = 0; h < heads; ++h) {
                    block.w_in[h] = random_matrix(n, block.hidden(), rng);
                    block.w_out[h] = random_matrix(block.hidden(), n, rng);
                }
                std::uint64_t measured = 0;
                {
                    MacCountScope scope(measured);
                    (void)mhla_forward(block, random_matrix(n, c, rng));
                }
                const bool exact = analytic == 2ull * n * (n * config.mhla_expansion) * c;
                const double slack = std::abs(double(measured) - double(analytic)) / double(analytic);
                const std::uint64_t attention = mhsa_complexity(n, c);
                std::printf("  %-5s He=%-2zu N=%-3zu C=%-4zu  linear %llu  instrumented %llu  softmax attention %llu  "
                            "lower: %s\n",
                            name.c_str(), heads, n, c, static_cast<unsigned long long>(analytic),
                            static_cast<unsigned long long>(measured), static_cast<unsigned long long>(attention),
                            analytic < attention ? "linear" : (analytic == attention ? "tie" : "softmax"));
                ok = ok && exact && slack <= 0.01;
            }
            ok = ok && report.per_block_kind.at("mhla").flops == expected_kind;
        }

    // Whole-model instrumented count against the analytic model.
    const ModelConfig sli = preset("s-li");
    const Model deploy = reparameterize_model(build_model(sli, 5), {}, {.probes = 0, .seed = 0}).first;
    const std::uint64_t measured = instrumented_flop_count(deploy, probe_image(sli, 5, 0));
    const std::uint64_t analytic = count_flops(deploy);
    const double slack = std::abs(double(measured) - double(analytic)) / double(analytic);
    std::printf("  s-li full model: analytic %llu, instrumented %llu\n", static_cast<unsigned long long>(analytic),
                static_cast<unsigned long long>(measured));
    ok = ok && slack <= 0.01;
    std::printf("%s criterion 3: token-MLP block counts equal 2*N*(N*r)*C, instrumented within 1%%\n",
                ok ? "PASS" : "FAIL");
    return ok;
}

// 4. Counts reconcile with the reference figures.
bool reconciliation() {
    struct Target {
        std::string variant;
        std::size_t heads;
        double params_m;
        double params_tol;
        double flops_m;  // 0: not checked
        double flops_tol;
    };
    const Target targets[] = {
        {"s-li", 16, 5.05, 10.0, 160.0, 15.0},
        {"m-li", 16, 9.75, 10.0, 386.0, 15.0},
        {"s-li", 8, 4.09, 15.0, 0.0, 0.0},
    };
    bool ok = true;
    for (const Target& t : targets) {
        ModelConfig config = preset(t.variant);
        config.heads = t.heads;
        const CostReport r = count_cost(config, Form::deploy);
        const double pm = double(r.total_params) / 1e6, fm = double(r.total_flops) / 1e6;
        const double pd = deviation_pct(pm, t.params_m);
        bool row = std::abs(pd) <= t.params_tol;
        std::printf("  %-5s He=%-2zu  params %.3f M vs %.2f M (%+.2f%%, limit %.0f%%)", t.variant.c_str(), t.heads, pm,
                    t.params_m, pd, t.params_tol);
        const double fd = deviation_pct(fm, t.flops_m == 0.0 ? 1.0 : t.flops_m);
        if (t.flops_m > 0.0) {
            row = row && std::abs(fd) <= t.flops_tol;
            std::printf("  flops %.1f M vs %.0f M (%+.2f%%, limit %.0f%%)", fm, t.flops_m, fd, t.flops_tol);
        } else {
            std::printf("  flops %.1f M", fm);
        }
        std::printf("\n");
        ok = ok && row;
    }
    std::printf("%s criterion 4: parameter and operation counts within tolerance of reference figures\n",
                ok ? "PASS" : "FAIL");
    return ok;
}

// 5. Fused models are not slower; the linear-attention variant beats softmax attention.
bool latency() {
    constexpr std::size_t kIterations = 200, kWarmup = 5;
    const Model sli_train = build_model(preset("s-li"), 1);
    const Model sli_deploy = reparameterize_model(sli_train, {}, {.probes = 0, .seed = 0}).first;
    const Model s_deploy = reparameterize_model(build_model(preset("s"), 1), {}, {.probes = 0, .seed = 0}).first;
    const Model* models[] = {&sli_train, &sli_deploy, &s_deploy};
    const char* labels[] = {"s-li train", "s-li deploy", "s deploy"};
    const Tensor image = probe_image(sli_train.config, 0xbe4c, 0);

    // Forwards interleave one at a time in rotating order, so drift in host
    // load lands on all three models alike.
    for (const Model* m : models)
        for (std::size_t i = 0; i < kWarmup; ++i) (void)forward(*m, image);
    BenchResult results[3];
    for (std::size_t it = 0; it < kIterations; ++it)
        for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t i = (it + j) % 3;
            const auto t0 = Clock::now();
            (void)forward(*models[i], image);
            results[i].samples_us.push_back(std::chrono::duration<double, std::micro>(Clock::now() - t0).count());
        }
    for (BenchResult& r : results) summarize(r);

    for (std::size_t i = 0; i < 3; ++i)
        std::printf("  %-12s median %.0f us  p95 %.0f us  (%zu samples)\n", labels[i], results[i].median_us,
                    results[i].p95_us, results[i].samples_us.size());
    const bool fused = results[1].median_us <= results[0].median_us;
    const bool linear = results[1].median_us < results[2].median_us;
    const bool ok = fused && linear;
    std::printf("%s criterion 5: s-li deploy <= s-li train (%s), s-li deploy < s deploy (%s), host %s\n",
                ok ? "PASS" : "FAIL", fused ? "yes" : "no", linear ? "yes" : "no", host_descriptor().c_str());
    return ok;
}

// 6. Structural properties standing in for accuracy.
bool properties() {
    struct Check {
        const char* name;
        std::function<bool()> run;
    };
    const std::vector<Check> checks = {
        {"stage sizes 28/14/7/4 for every variant",
         [] {
             for (const std::string& name : preset_names()) {
                 const ModelConfig c = preset(name);
                 ForwardTrace trace;
                 (void)forward(build_model(c, 1), probe_image(c, 1, 0), &trace);
                 const std::size_t sizes[] = {28, 14, 7, 4};
                 for (std::size_t s = 0; s < kStageCount; ++s)
                     if (!(trace.stages[s] == Shape{1, c.stage_dims[s], sizes[s], sizes[s]})) return false;
             }
             return true;
         }},
        {"attention rows sum to 1",
         [] {
             std::mt19937 rng(3);
             MhsaBlock block = make_mhsa(32, 4);
             for (Matrix* m : {&block.wq, &block.wk, &block.wv, &block.wo}) *m = random_matrix(32, 32, rng);
             std::vector<Matrix> attention;
             (void)mhsa_forward(block, random_matrix(49, 32, rng), &attention);
             for (const Matrix& a : attention)
                 for (std::size_t r = 0; r < a.rows(); ++r) {
                     double sum = 0.0;
                     for (float v : a.row(r)) sum += v;
                     if (std::abs(sum - 1.0) > 1e-6) return false;
                 }
             return attention.size() == 4;
         }},
        {"blocks with zeroed mixers are the identity",
         [] {
             std::mt19937 rng(4);
             Tensor x({1, 32, 7, 7});
             std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
             for (float& v : x.data()) v = dist(rng);
             for (TokenMixer mixer : {TokenMixer{make_repmix(32, 3, 1)}, TokenMixer{make_mhsa(32, 4)},
                                      TokenMixer{make_mhla(4, 49, 4)}})
                 if (!(block_forward(Block{mixer, make_mlp(32, 3)}, x) == x)) return false;
             return true;
         }},
        {"token-MLP heads are independent",
         [] {
             std::mt19937 rng(5);
             MhlaBlock block = make_mhla(4, 16, 4);
             for (std::size_t h = 0; h < 4; ++h) {
                 block.w_in[h] = random_matrix(16, 64, rng);
                 block.w_out[h] = random_matrix(64, 16, rng);
             }
             const Matrix x = random_matrix(16, 32, rng);
             const Matrix before = mhla_forward(block, x);
             block.w_in[2] = Matrix(16, 64);
             block.w_out[2] = Matrix(64, 16);
             const Matrix after = mhla_forward(block, x);
             for (std::size_t t = 0; t < 16; ++t)
                 for (std::size_t c = 0; c < 32; ++c) {
                     const bool zeroed = c / 8 == 2;
                     if (zeroed ? after(t, c) != 0.0f : after(t, c) != before(t, c)) return false;
                 }
             return true;
         }},
        {"archive write-read-write is byte-identical",
         [] {
             for (const std::string& name : preset_names()) {
                 const Model train = build_model(preset(name), 6);
                 const Model deploy = reparameterize_model(train, {}, {.probes = 0, .seed = 0}).first;
                 for (const Model* m : {&train, &deploy}) {
                     const std::vector<std::uint8_t> bytes = to_archive(*m).serialize();
                     if (to_archive(from_archive(WeightArchive::deserialize(bytes))).serialize() != bytes) return false;
                 }
             }
             return true;
         }},
    };
    bool ok = true;
    for (const Check& check : checks) {
        const bool passed = check.run();
        std::printf("  %-45s %s\n", check.name, passed ? "ok" : "failed");
        ok = ok && passed;
    }
    std::printf("%s criterion 6: structural property suite\n", ok ? "PASS" : "FAIL");
    return ok;
}

}  // namespace

int main() {
    const bool results[] = {equivalence(), kernel_exactness(), complexity(), reconciliation(), latency(), properties()};
    int failed = 0;
    for (bool r : results) failed += r ? 0 : 1;
    std::printf("%d of 6 criteria passed\n", 6 - failed);
    return failed == 0 ? 0 : 1;
}
