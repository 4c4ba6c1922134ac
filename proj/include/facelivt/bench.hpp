#pragma once

#include <string>
#include <vector>

#include "facelivt/model.hpp"

namespace facelivt {

struct BenchOptions {
    std::size_t iterations = 50;
    std::size_t warmup = 5;
    /// Independent inference streams sharing the model.
    std::size_t threads = 1;
};

/// Host-relative wall times of single-image forwards, in microseconds.
struct BenchResult {
    std::string variant;
    Form form = Form::train;
    std::size_t iterations = 0;  // per stream
    std::size_t warmup = 0;
    std::size_t threads = 1;
    double mean_us = 0.0;
    double median_us = 0.0;
    double p95_us = 0.0;
    /// Forwards per second summed across streams.
    double throughput_per_s = 0.0;
    std::string host;
    std::vector<double> samples_us;
};

BenchResult run_bench(const Model& model, const BenchOptions& options);

/// Summary statistics over `samples` (p95 by nearest rank).
void summarize(BenchResult& result);

std::string host_descriptor();

}  // namespace facelivt
