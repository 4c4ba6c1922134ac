#include "facelivt/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

namespace facelivt {

std::string host_descriptor() {
    std::string host;
    utsname info{};
    if (uname(&info) == 0) host = std::string(info.sysname) + " " + info.release + " " + info.machine;
    host += ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
#if defined(__clang__)
    host += ", clang " __clang_version__;
#elif defined(__GNUC__)
    host += ", gcc " __VERSION__;
#endif
    return host;
}

void summarize(BenchResult& result) {
    std::vector<double> sorted = result.samples_us;
    if (sorted.empty()) return;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    result.mean_us = std::accumulate(sorted.begin(), sorted.end(), 0.0) / double(n);
    result.median_us = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(n)));
    result.p95_us = sorted[std::max<std::size_t>(rank, 1) - 1];
}

BenchResult run_bench(const Model& model, const BenchOptions& options) {
    if (options.iterations == 0) throw std::invalid_argument("bench: iterations must be at least 1");
    if (options.threads == 0) throw std::invalid_argument("bench: threads must be at least 1");
    model.validate();

    using Clock = std::chrono::steady_clock;
    std::vector<std::vector<double>> per_stream(options.threads);
    auto stream = [&](std::size_t id) {
        const Tensor image = probe_image(model.config, 0xbe4c, id);
        for (std::size_t i = 0; i < options.warmup; ++i) (void)forward(model, image);
        auto& samples = per_stream[id];
        samples.reserve(options.iterations);
        for (std::size_t i = 0; i < options.iterations; ++i) {
            const auto t0 = Clock::now();
            (void)forward(model, image);
            samples.push_back(std::chrono::duration<double, std::micro>(Clock::now() - t0).count());
        }
    };

    const auto start = Clock::now();
    if (options.threads == 1) {
        stream(0);
    } else {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < options.threads; ++t) workers.emplace_back(stream, t);
    }
    const double wall_s = std::chrono::duration<double>(Clock::now() - start).count();

    BenchResult result;
    result.variant = model.config.variant;
    result.form = model.form;
    result.iterations = options.iterations;
    result.warmup = options.warmup;
    result.threads = options.threads;
    result.host = host_descriptor();
    for (const auto& samples : per_stream) result.samples_us.insert(result.samples_us.end(), samples.begin(), samples.end());
    summarize(result);
    const double timed = double(options.threads * (options.iterations + options.warmup));
    result.throughput_per_s = wall_s > 0.0 ? timed / wall_s : 0.0;
    return result;
}

}  // namespace facelivt
